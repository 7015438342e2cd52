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

#ifndef CALIBRAR_POLICY_HPP_
#define CALIBRAR_POLICY_HPP_

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "calibrar/attack.hpp"
#include "calibrar/data.hpp"
#include "calibrar/error.hpp"
#include "calibrar/mlp.hpp"
#include "calibrar/partition.hpp"
#include "calibrar/smoothing.hpp"
#include "calibrar/train.hpp"

namespace calibrar {

enum class PolicyKind { vanilla, ls, adals, ar_adals };

inline std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::vanilla: return "vanilla";
    case PolicyKind::ls: return "ls";
    case PolicyKind::adals: return "adals";
    case PolicyKind::ar_adals: return "ar_adals";
  }
  return "unknown";
}

inline PolicyKind parse_policy(std::string_view name) {
  for (PolicyKind k : {PolicyKind::vanilla, PolicyKind::ls, PolicyKind::adals, PolicyKind::ar_adals}) {
    if (to_string(k) == name) return k;
  }
  throw DomainError("unknown policy '" + std::string(name) + "'");
}

inline constexpr double kDefaultLsEpsilon = 0.02;
inline constexpr double kDefaultAdaLsAlpha = 0.05;
inline constexpr double kDefaultArAdaLsAlpha = 0.005;
inline constexpr std::size_t kDefaultSubsets = 10;

// How training labels are softened.
//   vanilla   one-hot targets
//   ls        one fixed epsilon for every example
//   adals     one adaptive epsilon (a single robustness subset)
//   ar_adals  one adaptive epsilon per robustness subset
struct Policy {
  PolicyKind kind = PolicyKind::vanilla;
  double epsilon = 0.0;
  double alpha = 0.0;
  std::size_t num_subsets = 1;

  static Policy vanilla() { return {}; }
  static Policy ls(double epsilon = kDefaultLsEpsilon) { return {PolicyKind::ls, epsilon, 0.0, 1}; }
  static Policy adals(double alpha = kDefaultAdaLsAlpha) { return {PolicyKind::adals, 0.0, alpha, 1}; }
  static Policy ar_adals(double alpha = kDefaultArAdaLsAlpha, std::size_t subsets = kDefaultSubsets) {
    return {PolicyKind::ar_adals, 0.0, alpha, subsets};
  }

  bool adaptive() const { return kind == PolicyKind::adals || kind == PolicyKind::ar_adals; }
  bool needs_partition() const { return kind == PolicyKind::ar_adals; }
  std::size_t subsets() const { return kind == PolicyKind::ar_adals ? num_subsets : 1; }

  void validate() const {
    require_epsilon(epsilon, "Policy");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("Policy: alpha must be >= 0");
    if (subsets() < 1) throw DomainError("Policy: R must be at least 1");
  }

  std::string describe() const {
    std::ostringstream out;
    out << to_string(kind);
    if (kind == PolicyKind::ls) out << "(epsilon=" << epsilon << ")";
    if (kind == PolicyKind::adals) out << "(alpha=" << alpha << ")";
    if (kind == PolicyKind::ar_adals) out << "(alpha=" << alpha << ",R=" << num_subsets << ")";
    return out.str();
  }
};

// One logged adaptive step for one subset. epoch is the number of completed
// training epochs; subset is 0-based.
struct TrajectoryRow {
  std::size_t epoch = 0;
  std::size_t subset = 0;
  double correct_mass = 0.0;
  double epsilon = 0.0;
  double conf = 0.0;
  double acc = 0.0;

  friend bool operator==(const TrajectoryRow&, const TrajectoryRow&) = default;
};

// Soft labels for the training set plus their update from validation
// feedback. The schedule owns the smoothing state; the caller supplies the
// post-epoch validation predictions (one model, or an ensemble average).
class SupervisionSchedule {
 public:
  SupervisionSchedule(const Policy& policy, std::span<const std::size_t> train_labels,
                      std::span<const std::size_t> val_labels, std::size_t num_classes,
                      RobustnessPartition train_partition, RobustnessPartition val_partition)
      : policy_(policy),
        train_labels_(train_labels.begin(), train_labels.end()),
        val_labels_(val_labels.begin(), val_labels.end()),
        state_(SmoothingState::fixed(policy.subsets(), num_classes,
                                     policy.adaptive() ? policy.alpha : 0.0, policy.epsilon)) {
    policy_.validate();
    repartition(std::move(train_partition), std::move(val_partition));
  }

  void repartition(RobustnessPartition train_partition, RobustnessPartition val_partition) {
    if (train_partition.num_subsets != policy_.subsets() ||
        val_partition.num_subsets != policy_.subsets()) {
      throw DomainError("SupervisionSchedule: partitions must have R=" +
                        std::to_string(policy_.subsets()) + " subsets");
    }
    if (train_partition.size() != train_labels_.size() || val_partition.size() != val_labels_.size()) {
      throw ShapeError("SupervisionSchedule: partitions do not cover the train/val sets");
    }
    train_partition_ = std::move(train_partition);
    val_partition_ = std::move(val_partition);
    labels_.reset();
  }

  // Targets for the next epoch.
  const NumArray& soft_labels() {
    if (!labels_) labels_ = labels_for_epoch(state_, train_partition_, train_labels_);
    return *labels_;
  }

  // Post-epoch feedback. Fixed policies only advance the epoch counter.
  void observe(const NumArray& val_probs) {
    if (!policy_.adaptive()) {
      ++state_.epoch;
      return;
    }
    const SubsetValStats stats = subset_val_stats(val_probs, val_labels_, val_partition_);
    state_ = adaptive_update(state_, stats);
    for (std::size_t r = 0; r < state_.num_subsets; ++r) {
      trajectory_.push_back(
          {state_.epoch, r, state_.correct_mass[r], state_.epsilon[r], stats.conf[r], stats.acc[r]});
    }
    labels_.reset();
  }

  const Policy& policy() const { return policy_; }
  const SmoothingState& state() const { return state_; }
  const std::vector<TrajectoryRow>& trajectory() const { return trajectory_; }
  const RobustnessPartition& train_partition() const { return train_partition_; }
  const RobustnessPartition& val_partition() const { return val_partition_; }

 private:
  Policy policy_;
  std::vector<std::size_t> train_labels_;
  std::vector<std::size_t> val_labels_;
  SmoothingState state_;
  RobustnessPartition train_partition_;
  RobustnessPartition val_partition_;
  std::optional<NumArray> labels_;
  std::vector<TrajectoryRow> trajectory_;
};

// Where AR-AdaLS gets its robustness subsets from.
struct RobustnessSource {
  // Fixed subsets, typically from attacking a vanilla model once.
  std::optional<RobustnessPartition> train;
  std::optional<RobustnessPartition> val;
  // When set, the current model is re-attacked after every epoch and the
  // subsets are rebuilt before the update (the on-the-fly option).
  std::optional<AttackConfig> on_the_fly;
};

struct PolicyRun {
  Checkpoint model;
  std::vector<TrajectoryRow> trajectory;
  std::vector<double> epoch_loss;
};

namespace detail {

inline std::pair<RobustnessPartition, RobustnessPartition> initial_partitions(
    const Policy& policy, const Dataset& train, const Dataset& val, const RobustnessSource& source) {
  if (!policy.needs_partition()) return {single_subset(train.size()), single_subset(val.size())};
  if (source.train && source.val) return {*source.train, *source.val};
  if (source.on_the_fly) {
    // Replaced after the first epoch; only the shape matters before then.
    return {partition(std::vector<double>(train.size(), 0.0), policy.subsets()),
            partition(std::vector<double>(val.size(), 0.0), policy.subsets())};
  }
  throw DomainError("ar_adals needs precomputed partitions or the on-the-fly option");
}

}  // namespace detail

// Trains one model under a supervision policy. The model is initialized from
// spec (with spec.seed) and its batches are shuffled with cfg.seed. The
// final checkpoint carries the smoothing state snapshot.
inline PolicyRun train_policy(const MlpSpec& spec, const TrainConfig& cfg, const Dataset& train,
                              const Dataset& val, const Policy& policy,
                              const RobustnessSource& source = {},
                              const std::function<void(const Checkpoint&, std::size_t)>& on_epoch = {}) {
  train.validate();
  val.validate();
  if (spec.num_classes() != train.num_classes || spec.input_dim() != train.dim()) {
    throw ShapeError("train_policy: model spec does not match the training data");
  }
  auto [train_part, val_part] = detail::initial_partitions(policy, train, val, source);
  SupervisionSchedule schedule(policy, train.labels, val.labels, train.num_classes,
                               std::move(train_part), std::move(val_part));
  Trainer trainer(init(spec), train.features, cfg);
  PolicyRun run;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    run.epoch_loss.push_back(trainer.run_epoch(schedule.soft_labels()));
    if (policy.needs_partition() && source.on_the_fly) {
      const auto fresh = precompute_partition(trainer.checkpoint(), train, val, policy.subsets(),
                                              *source.on_the_fly);
      schedule.repartition(fresh.train, fresh.val);
    }
    schedule.observe(policy.adaptive() ? predict_proba(trainer.checkpoint(), val.features)
                                       : NumArray());
    trainer.checkpoint().smoothing = schedule.state();
    if (on_epoch) on_epoch(trainer.checkpoint(), epoch);
  }
  run.model = trainer.checkpoint();
  run.trajectory = schedule.trajectory();
  return run;
}

}  // namespace calibrar

#endif  // CALIBRAR_POLICY_HPP_
