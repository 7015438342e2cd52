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

#ifndef CALIBRAR_ATTACK_HPP_
#define CALIBRAR_ATTACK_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "calibrar/data.hpp"
#include "calibrar/error.hpp"
#include "calibrar/hash.hpp"
#include "calibrar/mlp.hpp"
#include "calibrar/partition.hpp"
#include "calibrar/tape.hpp"

namespace calibrar {

// Untargeted l2 Carlini-Wagner settings. Step size is the Adam learning rate
// on the perturbation.
struct AttackConfig {
  std::size_t binary_search_steps = 3;
  std::size_t max_iterations = 500;
  double step_size = 0.005;
  double initial_tradeoff = 1.0;
  double confidence_margin = 0.0;
  // Project x + delta onto [0, 1]^d after every step (image-like inputs).
  bool clamp_unit_box = false;
  // Stop a round for an example once its loss stalls over a tenth of the
  // iteration budget.
  bool early_abort = true;

  void validate() const {
    if (binary_search_steps < 1) throw DomainError("AttackConfig: binary_search_steps must be >= 1");
    if (max_iterations < 1) throw DomainError("AttackConfig: max_iterations must be >= 1");
    if (!(step_size > 0.0)) throw DomainError("AttackConfig: step_size must be positive");
    if (!(initial_tradeoff > 0.0)) throw DomainError("AttackConfig: initial_tradeoff must be positive");
    if (!(confidence_margin >= 0.0)) throw DomainError("AttackConfig: confidence_margin must be >= 0");
  }

  std::string canonical() const {
    std::ostringstream out;
    out.precision(17);
    out << "binary_search_steps=" << binary_search_steps << ";max_iterations=" << max_iterations
        << ";step_size=" << step_size << ";initial_tradeoff=" << initial_tradeoff
        << ";confidence_margin=" << confidence_margin << ";clamp_unit_box=" << clamp_unit_box
        << ";early_abort=" << early_abort;
    return out.str();
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }
};

enum class AttackStatus { success, no_success, failed };

struct AttackResult {
  AttackStatus status = AttackStatus::no_success;
  NumArray delta;  // length d; empty unless status == success
  double norm = std::numeric_limits<double>::infinity();
  std::string diagnostic;
};

namespace detail {

struct CwRow {
  double tradeoff = 1.0;
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
  std::vector<double> best_delta;
  double best_norm = std::numeric_limits<double>::infinity();
  bool failed = false;
  std::string diagnostic;
};

}  // namespace detail

// Minimizes ||delta||^2 + c * max(logit_y0 - max_{z != y0} logit_z, -kappa)
// for every row of x, where y0 is the model's prediction on the clean row.
//
// Each round starts from delta = 0 and runs Adam on delta; the smallest
// delta seen that changes the argmax is kept. After each round c is halved
// toward the best success bracket, or doubled when no bracket exists yet.
// Rows are processed independently: a row's result does not depend on the
// other rows in the batch.
inline std::vector<AttackResult> cw_l2_batch(const Checkpoint& ckpt, const NumArray& x,
                                             const AttackConfig& cfg) {
  cfg.validate();
  require_input(ckpt, x);
  const std::size_t n = x.rows(), d = x.cols();
  const std::vector<std::size_t> original = predict_class(predict_proba(ckpt, x));

  std::vector<detail::CwRow> rows(n);
  for (auto& row : rows) row.tradeoff = cfg.initial_tradeoff;

  const std::size_t abort_every = std::max<std::size_t>(1, cfg.max_iterations / 10);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  for (std::size_t round = 0; round < cfg.binary_search_steps; ++round) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < n; ++i) {
      if (!rows[i].failed) active.push_back(i);
    }
    std::vector<std::vector<double>> delta(n), m(n), v(n);
    std::vector<double> previous(n, std::numeric_limits<double>::infinity());
    std::vector<bool> flipped(n, false);
    for (std::size_t i : active) {
      delta[i].assign(d, 0.0);
      m[i].assign(d, 0.0);
      v[i].assign(d, 0.0);
    }

    for (std::size_t iter = 0; iter <= cfg.max_iterations && !active.empty(); ++iter) {
      const std::size_t k = active.size();
      NumArray xa = NumArray::matrix(k, d), da = NumArray::matrix(k, d), ca = NumArray::matrix(k, 1);
      std::vector<std::size_t> target(k);
      for (std::size_t a = 0; a < k; ++a) {
        const std::size_t i = active[a];
        std::copy_n(x.row(i).begin(), d, xa.row(a).begin());
        std::copy_n(delta[i].begin(), d, da.row(a).begin());
        ca[a] = rows[i].tradeoff;
        target[a] = original[i];
      }
      Tape tape;
      const auto params = record_params(tape, ckpt, false);
      const NodeId dn = tape.variable(std::move(da));
      const NodeId xadv = tape.add(tape.constant(std::move(xa)), dn);
      const NodeId z = record_logits(tape, ckpt, params, xadv);
      const NodeId margin = tape.sub(tape.pick(z, target), tape.max_excluding(z, target));
      const NodeId penalty = tape.mul(tape.constant(std::move(ca)), tape.clamp_min(margin, -cfg.confidence_margin));
      const NodeId dist = tape.row_sum(tape.mul(dn, dn));
      const NodeId per_row = tape.add(dist, penalty);
      const NodeId loss = tape.sum(per_row);

      const NumArray& logits_now = tape.value(z);
      const NumArray& dist_now = tape.value(dist);
      const NumArray& loss_now = tape.value(per_row);
      for (std::size_t a = 0; a < k; ++a) {
        const std::size_t i = active[a];
        if (argmax(logits_now.row(a)) != original[i] &&
            -tape.value(margin)[a] >= cfg.confidence_margin) {
          flipped[i] = true;
          const double norm = std::sqrt(dist_now[a]);
          if (norm < rows[i].best_norm) {
            rows[i].best_norm = norm;
            rows[i].best_delta = delta[i];
          }
        }
      }
      if (iter == cfg.max_iterations) break;

      const NumArray g = tape.grad(loss, {dn}).front();
      const double t = static_cast<double>(iter + 1);
      const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
      std::vector<std::size_t> still_active;
      still_active.reserve(k);
      for (std::size_t a = 0; a < k; ++a) {
        const std::size_t i = active[a];
        const auto gr = g.row(a);
        if (!std::all_of(gr.begin(), gr.end(), [](double e) { return std::isfinite(e); }) ||
            !std::isfinite(loss_now[a])) {
          rows[i].failed = true;
          rows[i].diagnostic = "non-finite gradient in round " + std::to_string(round + 1) +
                               ", iteration " + std::to_string(iter);
          continue;
        }
        if (cfg.early_abort && (iter + 1) % abort_every == 0) {
          if (loss_now[a] > previous[i] * 0.9999) continue;
          previous[i] = loss_now[a];
        }
        for (std::size_t j = 0; j < d; ++j) {
          m[i][j] = kBeta1 * m[i][j] + (1.0 - kBeta1) * gr[j];
          v[i][j] = kBeta2 * v[i][j] + (1.0 - kBeta2) * gr[j] * gr[j];
          delta[i][j] -= cfg.step_size * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + kAdamEps);
          if (cfg.clamp_unit_box) {
            const double xij = x(i, j);
            delta[i][j] = std::clamp(xij + delta[i][j], 0.0, 1.0) - xij;
          }
        }
        still_active.push_back(i);
      }
      active = std::move(still_active);
    }

    for (std::size_t i = 0; i < n; ++i) {
      detail::CwRow& row = rows[i];
      if (row.failed) continue;
      if (flipped[i]) {
        row.upper = std::min(row.upper, row.tradeoff);
        row.tradeoff = 0.5 * (row.lower + row.upper);
      } else {
        row.lower = std::max(row.lower, row.tradeoff);
        row.tradeoff = std::isinf(row.upper) ? 2.0 * row.tradeoff : 0.5 * (row.lower + row.upper);
      }
    }
  }

  std::vector<AttackResult> results(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::CwRow& row = rows[i];
    AttackResult& out = results[i];
    if (row.failed) {
      out.status = AttackStatus::failed;
      out.diagnostic = std::move(row.diagnostic);
    } else if (std::isfinite(row.best_norm)) {
      out.status = AttackStatus::success;
      out.norm = row.best_norm;
      out.delta = NumArray::vector(std::move(row.best_delta));
    }
  }
  return results;
}

inline AttackResult cw_l2(const Checkpoint& ckpt, std::span<const double> x, const AttackConfig& cfg) {
  NumArray batch({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  return std::move(cw_l2_batch(ckpt, batch, cfg).front());
}

struct RobustnessScores {
  std::vector<double> scores;  // +inf for examples that were not flipped
  std::vector<AttackStatus> status;
  std::vector<std::string> diagnostics;

  std::size_t successes() const {
    return static_cast<std::size_t>(std::count(status.begin(), status.end(), AttackStatus::success));
  }
  double success_rate() const {
    return status.empty() ? 0.0 : static_cast<double>(successes()) / static_cast<double>(status.size());
  }
};

// ||delta||_2 per example. Attack failures are recorded per example and do
// not stop the batch; they rank as most robust, like unflipped examples.
inline RobustnessScores robustness_scores(const Checkpoint& ckpt, const NumArray& features,
                                          const AttackConfig& cfg, std::size_t chunk = 512) {
  require_input(ckpt, features);
  if (features.rows() == 0) throw DomainError("robustness_scores: empty dataset");
  RobustnessScores out;
  const std::size_t n = features.rows(), d = features.cols();
  out.scores.reserve(n);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t rows = std::min(chunk, n - start);
    NumArray block({rows, d}, std::vector<double>(features.data().begin() + start * d,
                                                  features.data().begin() + (start + rows) * d));
    for (AttackResult& r : cw_l2_batch(ckpt, block, cfg)) {
      out.scores.push_back(r.norm);
      out.status.push_back(r.status);
      out.diagnostics.push_back(std::move(r.diagnostic));
    }
  }
  return out;
}

struct PrecomputedPartitions {
  RobustnessPartition train;
  RobustnessPartition val;
  RobustnessScores train_scores;
  RobustnessScores val_scores;
};

// Robustness of train and validation examples measured once against a model
// trained with one-hot labels, then cut into R subsets each.
inline PrecomputedPartitions precompute_partition(const Checkpoint& vanilla, const Dataset& train,
                                                  const Dataset& val, std::size_t num_subsets,
                                                  const AttackConfig& cfg) {
  for (const Dataset* ds : {&train, &val}) {
    ds->validate();
    if (ds->dim() != vanilla.spec.input_dim() || ds->num_classes != vanilla.spec.num_classes()) {
      throw ShapeError("precompute_partition: checkpoint is " +
                       std::to_string(vanilla.spec.input_dim()) + "->" +
                       std::to_string(vanilla.spec.num_classes()) + ", dataset is " +
                       std::to_string(ds->dim()) + "->" + std::to_string(ds->num_classes));
    }
  }
  PrecomputedPartitions out;
  out.train_scores = robustness_scores(vanilla, train.features, cfg);
  out.val_scores = robustness_scores(vanilla, val.features, cfg);
  out.train = partition(out.train_scores.scores, num_subsets);
  out.val = partition(out.val_scores.scores, num_subsets);
  return out;
}

}  // namespace calibrar

#endif  // CALIBRAR_ATTACK_HPP_
