// Copyright 2026 The Calibrar Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CALIBRAR_MLP_HPP_
#define CALIBRAR_MLP_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calibrar/error.hpp"
#include "calibrar/num_array.hpp"
#include "calibrar/rng.hpp"
#include "calibrar/smoothing.hpp"
#include "calibrar/tape.hpp"

namespace calibrar {

enum class Activation : std::uint32_t { relu = 0 };

// Fully connected softmax classifier: d -> hidden... -> Z.
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;  // {d, h1, ..., Z}
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }

  void validate() const {
    if (layer_sizes.size() < 2) throw DomainError("MlpSpec: need at least input and output sizes");
    for (std::size_t s : layer_sizes) {
      if (s < 1) throw DomainError("MlpSpec: layer sizes must be positive");
    }
    if (num_classes() < 2) throw DomainError("MlpSpec: need Z >= 2 output classes");
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// Default desk architecture d-64-64-Z.
inline MlpSpec desk_spec(std::size_t input_dim, std::size_t num_classes, std::uint64_t seed) {
  return MlpSpec{{input_dim, 64, 64, num_classes}, Activation::relu, seed};
}

// Model state at some epoch. params alternate weight (in x out) and bias (out).
struct Checkpoint {
  MlpSpec spec;
  std::vector<NumArray> params;
  std::uint64_t epoch = 0;
  std::optional<SmoothingState> smoothing;
  // Fingerprint of the resolved experiment config that produced this model;
  // zero when trained outside the CLI.
  std::uint64_t config_hash = 0;

  void validate() const {
    spec.validate();
    if (params.size() != 2 * spec.num_layers()) {
      throw ShapeError("Checkpoint: expected " + std::to_string(2 * spec.num_layers()) +
                       " parameter arrays, got " + std::to_string(params.size()));
    }
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const std::vector<std::size_t> w{spec.layer_sizes[l], spec.layer_sizes[l + 1]};
      const std::vector<std::size_t> b{spec.layer_sizes[l + 1]};
      if (params[2 * l].shape() != w || params[2 * l + 1].shape() != b) {
        throw ShapeError("Checkpoint: layer " + std::to_string(l) +
                         " parameters do not match the spec");
      }
    }
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// He-normal weights, zero biases, drawn from spec.seed.
inline Checkpoint init(const MlpSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Checkpoint ckpt;
  ckpt.spec = spec;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.layer_sizes[l], fan_out = spec.layer_sizes[l + 1];
    NumArray w = NumArray::matrix(fan_in, fan_out);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w.values()) v = stddev * rng.normal();
    ckpt.params.push_back(std::move(w));
    ckpt.params.push_back(NumArray({fan_out}));
  }
  return ckpt;
}

inline void require_input(const Checkpoint& ckpt, const NumArray& x) {
  require_matrix(x, "model input");
  if (x.cols() != ckpt.spec.input_dim()) {
    throw ShapeError("model input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(ckpt.spec.input_dim()));
  }
}

// Logits for a batch of rows, without recording anything.
inline NumArray logits(const Checkpoint& ckpt, const NumArray& x) {
  require_input(ckpt, x);
  NumArray h = x;
  const std::size_t layers = ckpt.spec.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    h = ops::add_bias(ops::matmul(h, ckpt.params[2 * l]), ckpt.params[2 * l + 1]);
    if (l + 1 < layers) h = ops::relu(h);
  }
  return h;
}

inline NumArray predict_proba(const Checkpoint& ckpt, const NumArray& x) {
  return ops::softmax(logits(ckpt, x));
}

inline std::vector<std::size_t> predict_class(const NumArray& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax(probs.row(i));
  return out;
}

// Parameters placed on a tape, in checkpoint order.
inline std::vector<NodeId> record_params(Tape& tape, const Checkpoint& ckpt, bool differentiable) {
  std::vector<NodeId> ids;
  ids.reserve(ckpt.params.size());
  for (const NumArray& p : ckpt.params) {
    ids.push_back(differentiable ? tape.variable(p) : tape.constant(p));
  }
  return ids;
}

// Same computation as logits(), recorded on the tape.
inline NodeId record_logits(Tape& tape, const Checkpoint& ckpt, std::span<const NodeId> params,
                            NodeId x) {
  require_input(ckpt, tape.value(x));
  NodeId h = x;
  const std::size_t layers = ckpt.spec.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.add_bias(tape.matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers) h = tape.relu(h);
  }
  return h;
}

}  // namespace calibrar

#endif  // CALIBRAR_MLP_HPP_
