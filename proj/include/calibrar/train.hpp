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

#ifndef CALIBRAR_TRAIN_HPP_
#define CALIBRAR_TRAIN_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "calibrar/data.hpp"
#include "calibrar/error.hpp"
#include "calibrar/mlp.hpp"
#include "calibrar/rng.hpp"
#include "calibrar/tape.hpp"

namespace calibrar {

enum class OptimizerKind { adam, sgd };

inline std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

inline OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw DomainError("unknown optimizer '" + std::string(name) + "'");
}

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw DomainError("TrainConfig: epochs must be at least 1");
    if (batch_size < 1) throw DomainError("TrainConfig: batch_size must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw DomainError("TrainConfig: learning_rate must be positive");
    }
  }
};

// Minibatch optimizer over a checkpoint's parameters, driven one epoch at a
// time so several models can be kept in lockstep.
class Trainer {
 public:
  Trainer(Checkpoint start, NumArray features, const TrainConfig& cfg)
      : ckpt_(std::move(start)), features_(std::move(features)), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    ckpt_.validate();
    require_input(ckpt_, features_);
    order_.resize(features_.rows());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (const NumArray& p : ckpt_.params) {
      first_moment_.emplace_back(p.shape());
      second_moment_.emplace_back(p.shape());
    }
  }

  // One pass over the data with the given n x Z soft targets. Returns the
  // example-weighted mean training loss.
  double run_epoch(const NumArray& soft_labels) {
    const std::size_t n = features_.rows(), Z = ckpt_.spec.num_classes();
    if (soft_labels.shape() != std::vector<std::size_t>{n, Z}) {
      throw ShapeError("Trainer: soft labels " + NumArray::shape_string(soft_labels.shape()) +
                       " do not match " + std::to_string(n) + "x" + std::to_string(Z));
    }
    rng_.shuffle(std::span<std::size_t>(order_));
    const std::size_t d = features_.cols();
    double weighted_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg_.batch_size) {
      const std::size_t rows = std::min(cfg_.batch_size, n - start);
      NumArray xb = NumArray::matrix(rows, d);
      NumArray yb = NumArray::matrix(rows, Z);
      for (std::size_t k = 0; k < rows; ++k) {
        const std::size_t i = order_[start + k];
        std::copy_n(features_.row(i).begin(), d, xb.row(k).begin());
        std::copy_n(soft_labels.row(i).begin(), Z, yb.row(k).begin());
      }
      Tape tape;
      const auto params = record_params(tape, ckpt_, true);
      const NodeId x = tape.constant(std::move(xb));
      const NodeId y = tape.constant(std::move(yb));
      const NodeId probs = tape.softmax(record_logits(tape, ckpt_, params, x));
      const NodeId loss = tape.cross_entropy_soft(probs, y);
      const double value = tape.value(loss).item();
      if (!std::isfinite(value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(ckpt_.epoch + 1) +
                           ", batch starting at " + std::to_string(start));
      }
      weighted_loss += value * static_cast<double>(rows);
      step(tape.grad(loss, params));
    }
    ++ckpt_.epoch;
    return weighted_loss / static_cast<double>(n);
  }

  const Checkpoint& checkpoint() const { return ckpt_; }
  Checkpoint& checkpoint() { return ckpt_; }
  const NumArray& features() const { return features_; }

 private:
  void step(const std::vector<NumArray>& grads) {
    ++steps_;
    const double lr = cfg_.learning_rate;
    if (cfg_.optimizer == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < grads.size(); ++k) {
        NumArray& p = ckpt_.params[k];
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grads[k][i];
      }
      return;
    }
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(kBeta1, t);
    const double correction2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t k = 0; k < grads.size(); ++k) {
      NumArray& p = ckpt_.params[k];
      NumArray& m = first_moment_[k];
      NumArray& v = second_moment_[k];
      const NumArray& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / correction1) / (std::sqrt(v[i] / correction2) + kEps);
      }
    }
  }

  Checkpoint ckpt_;
  NumArray features_;
  TrainConfig cfg_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::vector<NumArray> first_moment_;
  std::vector<NumArray> second_moment_;
  std::uint64_t steps_ = 0;
};

// Soft targets for the epoch about to run (0-based).
using SoftLabelProvider = std::function<NumArray(std::size_t epoch)>;

// Called after every epoch with the post-epoch model.
using EpochCallback = std::function<void(const Checkpoint&, std::size_t epoch, double loss)>;

inline Checkpoint train(Checkpoint start, const Dataset& ds, const SoftLabelProvider& provider,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  ds.validate();
  Trainer trainer(std::move(start), ds.features, cfg);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss = trainer.run_epoch(provider(epoch));
    if (on_epoch) on_epoch(trainer.checkpoint(), epoch, loss);
  }
  return trainer.checkpoint();
}

// Provider that always returns one-hot targets.
inline SoftLabelProvider one_hot_provider(const Dataset& ds) {
  NumArray targets = one_hot(ds.labels, ds.num_classes);
  return [targets = std::move(targets)](std::size_t) { return targets; };
}

}  // namespace calibrar

#endif  // CALIBRAR_TRAIN_HPP_
