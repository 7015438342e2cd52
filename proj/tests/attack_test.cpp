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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "calibrar/attack.hpp"
#include "calibrar/checkpoint_io.hpp"
#include "calibrar/data.hpp"
#include "calibrar/metrics.hpp"
#include "calibrar/policy.hpp"

namespace calibrar {
namespace {

// Single linear layer, Z = 2. The smallest flipping perturbation of x has
// norm |l0(x) - l1(x)| / ||w0 - w1||.
struct LinearModel {
  Checkpoint ckpt;
  double distance(std::span<const double> x) const {
    const NumArray& w = ckpt.params[0];
    const NumArray& b = ckpt.params[1];
    double margin = b[0] - b[1], norm2 = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double dw = w(j, 0) - w(j, 1);
      margin += dw * x[j];
      norm2 += dw * dw;
    }
    return std::abs(margin) / std::sqrt(norm2);
  }
};

LinearModel linear_model(std::size_t d, std::uint64_t seed) {
  LinearModel m{init(MlpSpec{{d, 2}, Activation::relu, seed})};
  m.ckpt.params[1] = NumArray::vector({0.1, -0.1});
  return m;
}

NumArray random_inputs(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  NumArray x = NumArray::matrix(n, d);
  for (double& v : x.values()) v = 0.7 * rng.normal();
  return x;
}

TEST(CwL2, FlipsThePrediction) {
  const Splits sp = split(synth({3, 4, 60, 0.8, 1}), {}, 1);
  TrainConfig cfg;
  cfg.epochs = 10;
  const Checkpoint model = train(init(desk_spec(4, 3, 1)), sp.train, one_hot_provider(sp.train), cfg);
  AttackConfig acfg;
  acfg.initial_tradeoff = 10.0;
  const auto results = cw_l2_batch(model, sp.test.features, acfg);
  const auto clean = predict_class(predict_proba(model, sp.test.features));
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].status != AttackStatus::success) {
      EXPECT_TRUE(std::isinf(results[i].norm));
      continue;
    }
    ++flipped;
    NumArray adv = NumArray::matrix(1, 4);
    double norm2 = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      adv(0, j) = sp.test.features(i, j) + results[i].delta[j];
      norm2 += results[i].delta[j] * results[i].delta[j];
    }
    EXPECT_NE(predict_class(predict_proba(model, adv))[0], clean[i]);
    EXPECT_NEAR(std::sqrt(norm2), results[i].norm, 1e-12);
  }
  EXPECT_GE(flipped, results.size() * 9 / 10);
}

TEST(CwL2, LinearModelMatchesClosedForm) {
  const LinearModel m = linear_model(5, 3);
  const NumArray x = random_inputs(40, 5, 4);
  const auto results = cw_l2_batch(m.ckpt, x, AttackConfig{});
  std::vector<double> found, exact;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double truth = m.distance(x.row(i));
    ASSERT_EQ(results[i].status, AttackStatus::success) << i;
    // Nothing can beat the exact minimum; allow a modest overshoot.
    EXPECT_GE(results[i].norm, truth * (1.0 - 1e-9));
    EXPECT_LE(results[i].norm, truth * 1.2 + 1e-3) << "example " << i;
    found.push_back(results[i].norm);
    exact.push_back(truth);
  }
  EXPECT_GT(spearman(found, exact), 0.9);
}

TEST(CwL2, RowsAreIndependentOfBatch) {
  const LinearModel m = linear_model(3, 8);
  const NumArray x = random_inputs(12, 3, 9);
  AttackConfig cfg;
  cfg.max_iterations = 100;
  const auto batch = cw_l2_batch(m.ckpt, x, cfg);
  for (std::size_t i = 0; i < x.rows(); i += 5) {
    const AttackResult alone = cw_l2(m.ckpt, x.row(i), cfg);
    EXPECT_EQ(alone.norm, batch[i].norm);
    EXPECT_EQ(alone.status, batch[i].status);
  }
}

TEST(CwL2, DuplicateRowsGetIdenticalScores) {
  const LinearModel m = linear_model(3, 2);
  NumArray x = random_inputs(2, 3, 5);
  std::copy_n(x.row(0).begin(), 3, x.row(1).begin());
  AttackConfig cfg;
  cfg.max_iterations = 100;
  const RobustnessScores s = robustness_scores(m.ckpt, x, cfg, 1);
  EXPECT_EQ(s.scores[0], s.scores[1]);
}

TEST(CwL2, UnflippableExampleRanksAsInfinite) {
  // Equal weight columns: no perturbation can change the logit gap.
  LinearModel m = linear_model(2, 1);
  NumArray& w = m.ckpt.params[0];
  w(0, 1) = w(0, 0);
  w(1, 1) = w(1, 0);
  AttackConfig cfg;
  cfg.max_iterations = 20;
  const RobustnessScores s = robustness_scores(m.ckpt, NumArray::matrix({{0.3, 0.2}}), cfg);
  EXPECT_EQ(s.status[0], AttackStatus::no_success);
  EXPECT_TRUE(std::isinf(s.scores[0]));
  EXPECT_EQ(s.success_rate(), 0.0);
}

TEST(CwL2, ConfigValidationAndHash) {
  AttackConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  const auto h = cfg.hash();
  cfg.step_size = 0.01;
  EXPECT_NE(cfg.hash(), h);
  cfg.max_iterations = 0;
  EXPECT_THROW(cfg.validate(), DomainError);
}

TEST(Partition, SmallExample) {
  const RobustnessPartition p = partition(std::vector<double>{3, 1, 2}, 3);
  EXPECT_EQ(p.subset, (std::vector<std::size_t>{2, 0, 1}));
}

TEST(Partition, SizesDifferByAtMostOneAndOrderIsRespected) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(200), R = 1 + rng.below(n);
    std::vector<double> scores(n);
    for (double& s : scores) s = rng.uniform() < 0.1 ? INFINITY : std::floor(rng.uniform() * 20);
    const RobustnessPartition p = partition(scores, R);
    std::vector<std::size_t> sizes(R, 0);
    for (std::size_t s : p.subset) ++sizes[s];
    for (std::size_t r = 0; r < R; ++r) {
      EXPECT_LE(sizes[r], n / R + 1);
      EXPECT_GE(sizes[r], n / R);
      if (r > 0) {
        EXPECT_LE(sizes[r], sizes[r - 1]);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (scores[i] < scores[j]) {
          ASSERT_LE(p.subset[i], p.subset[j]);
        }
      }
    }
  }
}

// Property: permuting the examples permutes the assignment when all scores
// are distinct.
TEST(Partition, PermutationStable) {
  Rng rng(7);
  std::vector<double> scores(57);
  for (double& s : scores) s = rng.uniform();
  std::vector<std::size_t> perm(scores.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<double> shuffled(scores.size());
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = scores[perm[i]];
  const RobustnessPartition a = partition(scores, 6), b = partition(shuffled, 6);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(b.subset[i], a.subset[perm[i]]);
}

TEST(Partition, InvalidArgumentsThrow) {
  EXPECT_THROW(partition(std::vector<double>{1, 2}, 0), DomainError);
  EXPECT_THROW(partition(std::vector<double>{1, 2}, 3), DomainError);
  EXPECT_THROW(partition(std::vector<double>{1, NAN}, 1), DomainError);
}

TEST(Partition, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "calibrar_attack_test.partition";
  const RobustnessPartition p = partition(std::vector<double>{0.5, INFINITY, 0.1 + 0.2, 2.0}, 2);
  save_partition(p, {2, 0xabcULL, 0x123456789abcdef0ULL, 7}, path.string());
  PartitionFileHeader header;
  EXPECT_EQ(load_partition(path.string(), &header), p);
  EXPECT_EQ(header.num_subsets, 2u);
  EXPECT_EQ(header.attack_config_hash, 0xabcULL);
  EXPECT_EQ(header.checkpoint_hash, 0x123456789abcdef0ULL);
  EXPECT_EQ(header.config_hash, 7u);
  std::filesystem::remove(path);
}

TEST(Precompute, RejectsMismatchedModel) {
  const Splits sp = split(synth({3, 4, 20, 0.8, 1}), {}, 1);
  EXPECT_THROW(precompute_partition(init(desk_spec(5, 3, 0)), sp.train, sp.val, 2, {}), ShapeError);
}

TEST(ArAdaLs, SingleSubsetEqualsAdaLs) {
  const Splits sp = split(synth({3, 5, 60, 0.9, 3}), {}, 3);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 2;
  RobustnessSource source;
  source.train = single_subset(sp.train.size());
  source.val = single_subset(sp.val.size());
  const MlpSpec spec = desk_spec(5, 3, 2);
  const PolicyRun ada = train_policy(spec, cfg, sp.train, sp.val, Policy::adals(0.05));
  const PolicyRun ar = train_policy(spec, cfg, sp.train, sp.val, Policy::ar_adals(0.05, 1), source);
  EXPECT_EQ(ada.trajectory, ar.trajectory);
  EXPECT_EQ(ada.model.params, ar.model.params);
  EXPECT_EQ(ada.model.smoothing, ar.model.smoothing);
}

TEST(ArAdaLs, RequiresAPartitionSource) {
  const Splits sp = split(synth({3, 5, 30, 0.9, 3}), {}, 3);
  EXPECT_THROW(train_policy(desk_spec(5, 3, 0), {}, sp.train, sp.val, Policy::ar_adals()),
               DomainError);
}

TEST(ArAdaLs, OnTheFlyRebuildsSubsetsEveryEpoch) {
  const Splits sp = split(synth({3, 4, 30, 0.8, 5}), {}, 5);
  TrainConfig cfg;
  cfg.epochs = 3;
  RobustnessSource source;
  source.on_the_fly = AttackConfig{1, 30, 0.01, 1.0, 0.0, false, true};
  const PolicyRun run =
      train_policy(desk_spec(4, 3, 0), cfg, sp.train, sp.val, Policy::ar_adals(0.05, 3), source);
  EXPECT_EQ(run.trajectory.size(), 9u);
  ASSERT_TRUE(run.model.smoothing.has_value());
  EXPECT_EQ(run.model.smoothing->epoch, 3u);
  for (const TrajectoryRow& row : run.trajectory) {
    EXPECT_GT(row.correct_mass, 1.0 / 3.0);
    EXPECT_LE(row.correct_mass, 1.0);
  }
}

TEST(ArAdaLs, PrecomputedRunIsReproducible) {
  const Splits sp = split(synth({3, 4, 40, 0.8, 5}), {}, 5);
  TrainConfig cfg;
  cfg.epochs = 4;
  const Checkpoint vanilla = train(init(desk_spec(4, 3, 1)), sp.train, one_hot_provider(sp.train), cfg);
  AttackConfig acfg;
  acfg.max_iterations = 60;
  const PrecomputedPartitions parts = precompute_partition(vanilla, sp.train, sp.val, 4, acfg);
  RobustnessSource source;
  source.train = parts.train;
  source.val = parts.val;
  const auto run = [&] {
    return serialize(
        train_policy(desk_spec(4, 3, 9), cfg, sp.train, sp.val, Policy::ar_adals(0.05, 4), source).model);
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace calibrar
