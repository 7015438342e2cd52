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

#ifndef CALIBRAR_ENSEMBLE_HPP_
#define CALIBRAR_ENSEMBLE_HPP_

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "calibrar/data.hpp"
#include "calibrar/error.hpp"
#include "calibrar/metrics.hpp"
#include "calibrar/mlp.hpp"
#include "calibrar/policy.hpp"
#include "calibrar/train.hpp"

namespace calibrar {

enum class EnsembleMode {
  ensemble_of_vanilla,
  ensemble_of_ls,
  ensemble_of_adals,
  ensemble_of_aradals,
  aradals_of_ensemble,
};

inline std::string_view to_string(EnsembleMode mode) {
  switch (mode) {
    case EnsembleMode::ensemble_of_vanilla: return "ensemble_of_vanilla";
    case EnsembleMode::ensemble_of_ls: return "ensemble_of_ls";
    case EnsembleMode::ensemble_of_adals: return "ensemble_of_adals";
    case EnsembleMode::ensemble_of_aradals: return "ensemble_of_aradals";
    case EnsembleMode::aradals_of_ensemble: return "aradals_of_ensemble";
  }
  return "unknown";
}

inline EnsembleMode parse_ensemble_mode(std::string_view name) {
  for (EnsembleMode m : {EnsembleMode::ensemble_of_vanilla, EnsembleMode::ensemble_of_ls,
                         EnsembleMode::ensemble_of_adals, EnsembleMode::ensemble_of_aradals,
                         EnsembleMode::aradals_of_ensemble}) {
    if (to_string(m) == name) return m;
  }
  throw DomainError("unknown ensemble mode '" + std::string(name) + "'");
}

// Policy kind each mode trains its members with.
inline PolicyKind member_policy_kind(EnsembleMode mode) {
  switch (mode) {
    case EnsembleMode::ensemble_of_vanilla: return PolicyKind::vanilla;
    case EnsembleMode::ensemble_of_ls: return PolicyKind::ls;
    case EnsembleMode::ensemble_of_adals: return PolicyKind::adals;
    case EnsembleMode::ensemble_of_aradals:
    case EnsembleMode::aradals_of_ensemble: return PolicyKind::ar_adals;
  }
  return PolicyKind::vanilla;
}

struct EnsembleRun {
  EnsembleMode mode = EnsembleMode::ensemble_of_vanilla;
  Policy policy;
  std::vector<std::uint64_t> seeds;
  std::vector<Checkpoint> members;
  // One trajectory per member, or a single shared one for aradals_of_ensemble.
  std::vector<std::vector<TrajectoryRow>> trajectories;

  bool shared_state() const { return mode == EnsembleMode::aradals_of_ensemble; }
};

// Runs fn(0..count-1) on up to `jobs` threads. The first exception is
// rethrown after all workers finish.
inline void parallel_for(std::size_t count, std::size_t jobs,
                         const std::function<void(std::size_t)>& fn) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

// Trains M members, one per seed. Each member is initialized and shuffled
// with its own seed (spec.seed and cfg.seed are overridden).
//
// ensemble_of_* modes train fully independent members, each with its own
// smoothing state. aradals_of_ensemble keeps one shared state: after every
// epoch the members' validation predictions are averaged, the shared state is
// updated from that average, and all members get the same soft labels for the
// next epoch.
inline EnsembleRun train_ensemble(const MlpSpec& spec, const TrainConfig& cfg, const Dataset& train,
                                  const Dataset& val, const Policy& policy,
                                  std::span<const std::uint64_t> seeds, EnsembleMode mode,
                                  const RobustnessSource& source = {}, std::size_t jobs = 1) {
  if (seeds.empty()) throw DomainError("train_ensemble: need at least one member seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw DomainError("train_ensemble: member seeds must be distinct");
  }
  if (policy.kind != member_policy_kind(mode)) {
    throw DomainError("train_ensemble: mode " + std::string(to_string(mode)) +
                      " does not match policy " + policy.describe());
  }
  EnsembleRun run;
  run.mode = mode;
  run.policy = policy;
  run.seeds.assign(seeds.begin(), seeds.end());
  const std::size_t M = seeds.size();

  const auto member_spec = [&](std::size_t k) {
    MlpSpec s = spec;
    s.seed = seeds[k];
    return s;
  };
  const auto member_cfg = [&](std::size_t k) {
    TrainConfig c = cfg;
    c.seed = seeds[k];
    return c;
  };

  if (mode != EnsembleMode::aradals_of_ensemble) {
    std::vector<PolicyRun> runs(M);
    parallel_for(M, jobs, [&](std::size_t k) {
      runs[k] = train_policy(member_spec(k), member_cfg(k), train, val, policy, source);
    });
    for (PolicyRun& r : runs) {
      run.members.push_back(std::move(r.model));
      run.trajectories.push_back(std::move(r.trajectory));
    }
    return run;
  }

  if (source.on_the_fly) {
    throw DomainError("train_ensemble: aradals_of_ensemble needs precomputed partitions");
  }
  train.validate();
  val.validate();
  auto [train_part, val_part] = detail::initial_partitions(policy, train, val, source);
  SupervisionSchedule schedule(policy, train.labels, val.labels, train.num_classes,
                               std::move(train_part), std::move(val_part));
  std::vector<Trainer> trainers;
  trainers.reserve(M);
  for (std::size_t k = 0; k < M; ++k) trainers.emplace_back(init(member_spec(k)), train.features, member_cfg(k));

  std::vector<NumArray> val_probs(M);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const NumArray& targets = schedule.soft_labels();
    parallel_for(M, jobs, [&](std::size_t k) {
      trainers[k].run_epoch(targets);
      val_probs[k] = predict_proba(trainers[k].checkpoint(), val.features);
    });
    schedule.observe(mean_prediction(val_probs));
    for (Trainer& t : trainers) t.checkpoint().smoothing = schedule.state();
  }
  for (Trainer& t : trainers) run.members.push_back(t.checkpoint());
  run.trajectories.push_back(schedule.trajectory());
  return run;
}

inline std::vector<NumArray> member_predictions(const EnsembleRun& run, const NumArray& x) {
  if (run.members.empty()) throw DomainError("predict_ensemble: empty ensemble");
  std::vector<NumArray> out;
  out.reserve(run.members.size());
  for (const Checkpoint& member : run.members) {
    if (member.spec.layer_sizes != run.members.front().spec.layer_sizes) {
      throw ShapeError("predict_ensemble: members have different architectures");
    }
    out.push_back(predict_proba(member, x));
  }
  return out;
}

// Arithmetic mean of the members' probability rows.
inline NumArray predict_ensemble(const EnsembleRun& run, const NumArray& x) {
  return mean_prediction(member_predictions(run, x));
}

}  // namespace calibrar

#endif  // CALIBRAR_ENSEMBLE_HPP_
