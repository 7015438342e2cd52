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

#ifndef CALIBRAR_SMOOTHING_HPP_
#define CALIBRAR_SMOOTHING_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "calibrar/data.hpp"
#include "calibrar/error.hpp"
#include "calibrar/num_array.hpp"
#include "calibrar/partition.hpp"

namespace calibrar {

// The correct-class soft label lives in the open-closed interval (1/Z, 1];
// the open end is realized as 1/Z plus this offset.
inline constexpr double kCorrectMassFloorOffset = 1e-9;

inline void require_classes(std::size_t num_classes, const char* where) {
  if (num_classes < 2) throw DomainError(std::string(where) + ": need at least two classes");
}

inline void require_epsilon(double epsilon, const char* where) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw DomainError(std::string(where) + ": epsilon " + std::to_string(epsilon) +
                      " outside [0, 1)");
  }
}

// Correct-class mass of a label smoothed with epsilon: 1 - eps + eps / Z.
inline double correct_from_epsilon(double epsilon, std::size_t num_classes) {
  require_classes(num_classes, "correct_from_epsilon");
  require_epsilon(epsilon, "correct_from_epsilon");
  const auto z = static_cast<double>(num_classes);
  return 1.0 - epsilon + epsilon / z;
}

// Inverse of correct_from_epsilon: eps = (p - 1) * Z / (1 - Z), written
// with both factors flipped so p = 1 gives +0 rather than -0.
inline double epsilon_from_correct(double correct_mass, std::size_t num_classes) {
  require_classes(num_classes, "epsilon_from_correct");
  const auto z = static_cast<double>(num_classes);
  if (!(correct_mass > 1.0 / z && correct_mass <= 1.0)) {
    throw DomainError("epsilon_from_correct: correct-class mass " + std::to_string(correct_mass) +
                      " outside (1/Z, 1]");
  }
  return (1.0 - correct_mass) * z / (z - 1.0);
}

// p * (1 - eps) + eps / Z for a one-hot (or any probability) vector p.
inline NumArray soften(const NumArray& one_hot_row, double epsilon, std::size_t num_classes) {
  require_classes(num_classes, "soften");
  require_epsilon(epsilon, "soften");
  if (one_hot_row.size() != num_classes) {
    throw ShapeError("soften: label vector has " + std::to_string(one_hot_row.size()) +
                     " entries, expected Z=" + std::to_string(num_classes));
  }
  const double uniform = epsilon / static_cast<double>(num_classes);
  NumArray out = NumArray::vector(std::vector<double>(one_hot_row.values()));
  for (double& v : out.values()) v = v * (1.0 - epsilon) + uniform;
  return out;
}

// Per-subset smoothing parameters driven by the adaptive update.
struct SmoothingState {
  std::size_t num_subsets = 1;
  std::size_t num_classes = 2;
  double alpha = 0.0;
  std::vector<double> correct_mass;  // per subset, in (1/Z, 1]
  std::vector<double> epsilon;       // per subset, in [0, 1)
  std::size_t epoch = 0;

  // Algorithm start: every subset one-hot.
  static SmoothingState one_hot(std::size_t num_subsets, std::size_t num_classes, double alpha) {
    return fixed(num_subsets, num_classes, alpha, 0.0);
  }

  // Every subset starts from the same epsilon.
  static SmoothingState fixed(std::size_t num_subsets, std::size_t num_classes, double alpha,
                              double epsilon) {
    require_classes(num_classes, "SmoothingState");
    if (num_subsets < 1) throw DomainError("SmoothingState: need at least one subset");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
      throw DomainError("SmoothingState: alpha must be finite and nonnegative");
    }
    SmoothingState s;
    s.num_subsets = num_subsets;
    s.num_classes = num_classes;
    s.alpha = alpha;
    s.epsilon.assign(num_subsets, epsilon);
    s.correct_mass.assign(num_subsets, correct_from_epsilon(epsilon, num_classes));
    return s;
  }

  void validate() const {
    require_classes(num_classes, "SmoothingState");
    if (correct_mass.size() != num_subsets || epsilon.size() != num_subsets) {
      throw ShapeError("SmoothingState: per-subset vectors must have R entries");
    }
    const double floor = 1.0 / static_cast<double>(num_classes);
    for (std::size_t r = 0; r < num_subsets; ++r) {
      if (!(correct_mass[r] > floor && correct_mass[r] <= 1.0)) {
        throw DomainError("SmoothingState: correct-class mass outside (1/Z, 1]");
      }
      require_epsilon(epsilon[r], "SmoothingState");
    }
  }

  friend bool operator==(const SmoothingState&, const SmoothingState&) = default;
};

// Validation confidence (mean predicted-class probability) and accuracy,
// one entry per robustness subset.
struct SubsetValStats {
  std::vector<double> conf;
  std::vector<double> acc;
};

inline SubsetValStats subset_val_stats(const NumArray& probs, std::span<const std::size_t> labels,
                                       const RobustnessPartition& partition) {
  require_matrix(probs, "subset_val_stats");
  if (probs.rows() != labels.size() || partition.size() != labels.size()) {
    throw ShapeError("subset_val_stats: predictions, labels and partition must align");
  }
  const std::size_t R = partition.num_subsets;
  std::vector<double> conf_sum(R, 0.0), correct(R, 0.0), count(R, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probs.row(i);
    const std::size_t predicted = argmax(row);
    const std::size_t r = partition.subset[i];
    conf_sum[r] += row[predicted];
    correct[r] += predicted == labels[i] ? 1.0 : 0.0;
    count[r] += 1.0;
  }
  SubsetValStats stats;
  stats.conf.resize(R);
  stats.acc.resize(R);
  for (std::size_t r = 0; r < R; ++r) {
    if (count[r] == 0.0) throw DomainError("subset_val_stats: empty subset " + std::to_string(r + 1));
    stats.conf[r] = conf_sum[r] / count[r];
    stats.acc[r] = correct[r] / count[r];
  }
  return stats;
}

// One adaptive step: p <- clip(p - alpha * (conf - acc)), then eps from p.
inline SmoothingState adaptive_update(const SmoothingState& state, const SubsetValStats& stats) {
  if (stats.conf.size() != state.num_subsets || stats.acc.size() != state.num_subsets) {
    throw ShapeError("adaptive_update: stats must cover all " + std::to_string(state.num_subsets) +
                     " subsets");
  }
  const double floor = 1.0 / static_cast<double>(state.num_classes) + kCorrectMassFloorOffset;
  SmoothingState next = state;
  for (std::size_t r = 0; r < state.num_subsets; ++r) {
    const double gap = stats.conf[r] - stats.acc[r];
    double p = state.correct_mass[r] - state.alpha * gap;
    p = std::clamp(p, floor, 1.0);
    next.correct_mass[r] = p;
    next.epsilon[r] = epsilon_from_correct(p, state.num_classes);
  }
  ++next.epoch;
  return next;
}

// Soft-label matrix for the current epoch: row i is label y_i smoothed with
// the epsilon of its robustness subset.
inline NumArray labels_for_epoch(const SmoothingState& state, const RobustnessPartition& partition,
                                 std::span<const std::size_t> labels) {
  if (partition.size() != labels.size()) {
    throw ShapeError("labels_for_epoch: partition covers " + std::to_string(partition.size()) +
                     " examples, dataset has " + std::to_string(labels.size()));
  }
  if (partition.num_subsets != state.num_subsets) {
    throw ShapeError("labels_for_epoch: partition and state disagree on R");
  }
  const std::size_t Z = state.num_classes;
  NumArray out = NumArray::matrix(labels.size(), Z);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= Z) throw DomainError("labels_for_epoch: label out of range");
    const double eps = state.epsilon[partition.subset[i]];
    const double uniform = eps / static_cast<double>(Z);
    auto row = out.row(i);
    for (std::size_t z = 0; z < Z; ++z) row[z] = (z == labels[i] ? 1.0 : 0.0) * (1.0 - eps) + uniform;
  }
  return out;
}

}  // namespace calibrar

#endif  // CALIBRAR_SMOOTHING_HPP_
