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

#include "calibrar/partition.hpp"
#include "calibrar/rng.hpp"
#include "calibrar/smoothing.hpp"

namespace calibrar {
namespace {

TEST(EpsilonMapping, KnownValues) {
  EXPECT_DOUBLE_EQ(correct_from_epsilon(0.0, 4), 1.0);
  EXPECT_NEAR(correct_from_epsilon(0.02, 10), 0.982, 1e-15);
  EXPECT_NEAR(epsilon_from_correct(0.982, 10), 0.02, 1e-14);
  EXPECT_DOUBLE_EQ(epsilon_from_correct(1.0, 7), 0.0);
}

TEST(EpsilonMapping, RoundTripOnRandomPoints) {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t z = 2 + rng.below(99);
    const double eps = rng.uniform() * 0.999;
    const double p = correct_from_epsilon(eps, z);
    EXPECT_GT(p, 1.0 / static_cast<double>(z));
    EXPECT_LE(p, 1.0);
    EXPECT_LT(std::abs(epsilon_from_correct(p, z) - eps), 1e-12);
  }
}

TEST(EpsilonMapping, OutOfDomainThrows) {
  EXPECT_THROW(epsilon_from_correct(0.25, 4), DomainError);
  EXPECT_THROW(epsilon_from_correct(1.0 + 1e-12, 4), DomainError);
  EXPECT_THROW(correct_from_epsilon(1.0, 4), DomainError);
  EXPECT_THROW(correct_from_epsilon(-0.1, 4), DomainError);
  EXPECT_THROW(correct_from_epsilon(0.1, 1), DomainError);
}

TEST(Soften, RowIsDistribution) {
  const NumArray row = soften(NumArray::vector({0, 0, 1, 0, 0}), 0.1, 5);
  double total = 0.0;
  for (double v : row.values()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-15);
  EXPECT_NEAR(row[2], 0.92, 1e-15);
  EXPECT_NEAR(row[0], 0.02, 1e-15);
  EXPECT_THROW(soften(NumArray::vector({1, 0}), 0.1, 3), ShapeError);
}

TEST(AdaptiveUpdate, OverconfidentSubsetGetsSofter) {
  SmoothingState s = SmoothingState::one_hot(1, 4, 0.05);
  s = adaptive_update(s, {{0.9}, {0.8}});
  EXPECT_NEAR(s.correct_mass[0], 0.995, 1e-15);
  EXPECT_NEAR(s.epsilon[0], epsilon_from_correct(0.995, 4), 0.0);
  EXPECT_EQ(s.epoch, 1u);
}

TEST(AdaptiveUpdate, UnderconfidenceIsCappedAtOneHot) {
  SmoothingState s = SmoothingState::one_hot(2, 3, 0.5);
  s = adaptive_update(s, {{0.4, 0.9}, {0.9, 0.9}});
  EXPECT_EQ(s.correct_mass[0], 1.0);
  EXPECT_EQ(s.epsilon[0], 0.0);
  EXPECT_EQ(s.correct_mass[1], 1.0);
}

TEST(AdaptiveUpdate, LargeGapSaturatesAboveUniform) {
  SmoothingState s = SmoothingState::one_hot(1, 5, 10.0);
  for (int t = 0; t < 3; ++t) s = adaptive_update(s, {{1.0}, {0.0}});
  EXPECT_GT(s.correct_mass[0], 0.2);
  EXPECT_NEAR(s.correct_mass[0], 0.2 + kCorrectMassFloorOffset, 1e-15);
  EXPECT_LT(s.epsilon[0], 1.0);
  EXPECT_NO_THROW(s.validate());
}

// Property: the clip bound holds and unclipped steps move by exactly
// alpha * gap for arbitrary scripted stats streams.
TEST(AdaptiveUpdate, ScriptedStreamsRespectClipAndStep) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t z = 2 + rng.below(20), r = 1 + rng.below(12);
    const double alpha = rng.uniform(0.0, 0.5);
    SmoothingState s = SmoothingState::one_hot(r, z, alpha);
    for (int t = 0; t < 30; ++t) {
      SubsetValStats stats{std::vector<double>(r), std::vector<double>(r)};
      for (std::size_t k = 0; k < r; ++k) {
        stats.conf[k] = rng.uniform();
        stats.acc[k] = rng.uniform();
      }
      const SmoothingState next = adaptive_update(s, stats);
      for (std::size_t k = 0; k < r; ++k) {
        const double p = next.correct_mass[k];
        ASSERT_GT(p, 1.0 / static_cast<double>(z));
        ASSERT_LE(p, 1.0);
        const double raw = s.correct_mass[k] - alpha * (stats.conf[k] - stats.acc[k]);
        if (raw > 1.0 / static_cast<double>(z) + kCorrectMassFloorOffset && raw < 1.0) {
          ASSERT_EQ(p, raw);
        }
      }
      s = next;
    }
  }
}

// Property: a larger overconfidence gap never yields a larger correct mass.
TEST(AdaptiveUpdate, ResponseIsMonotoneInGap) {
  const SmoothingState s = SmoothingState::fixed(1, 6, 0.1, 0.05);
  double previous = 2.0;
  for (int k = -10; k <= 10; ++k) {
    const double gap = 0.1 * k;
    const double p = adaptive_update(s, {{0.5 + gap / 2}, {0.5 - gap / 2}}).correct_mass[0];
    EXPECT_LE(p, previous);
    previous = p;
  }
}

TEST(AdaptiveUpdate, SingleSubsetMatchesGlobalRule) {
  Rng rng(99);
  SmoothingState global = SmoothingState::one_hot(1, 4, 0.05);
  SmoothingState subsets = SmoothingState::one_hot(1, 4, 0.05);
  for (int t = 0; t < 50; ++t) {
    const double conf = rng.uniform(), acc = rng.uniform();
    global = adaptive_update(global, {{conf}, {acc}});
    subsets = adaptive_update(subsets, {{conf}, {acc}});
  }
  EXPECT_EQ(global, subsets);
}

TEST(AdaptiveUpdate, StatsSizeMismatchThrows) {
  EXPECT_THROW(adaptive_update(SmoothingState::one_hot(3, 4, 0.1), {{0.5}, {0.5}}), ShapeError);
}

TEST(SubsetValStats, UsesPredictedClassConfidence) {
  const NumArray probs = NumArray::matrix({{0.7, 0.3}, {0.4, 0.6}, {0.9, 0.1}, {0.2, 0.8}});
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const RobustnessPartition part = partition(std::vector<double>{1, 2, 3, 4}, 2);
  const SubsetValStats stats = subset_val_stats(probs, labels, part);
  EXPECT_NEAR(stats.conf[0], 0.65, 1e-15);
  EXPECT_EQ(stats.acc[0], 0.5);
  EXPECT_NEAR(stats.conf[1], 0.85, 1e-15);
  EXPECT_EQ(stats.acc[1], 0.5);
}

TEST(LabelsForEpoch, EachRowUsesItsSubsetEpsilon) {
  SmoothingState s = SmoothingState::one_hot(2, 3, 0.0);
  s.epsilon = {0.3, 0.0};
  s.correct_mass = {correct_from_epsilon(0.3, 3), 1.0};
  const RobustnessPartition part = partition(std::vector<double>{5, 1, 9, 0}, 2);
  const NumArray t = labels_for_epoch(s, part, std::vector<std::size_t>{2, 0, 1, 1});
  // Scores 0 and 1 form the less robust subset.
  EXPECT_EQ(t(0, 2), 1.0);
  EXPECT_NEAR(t(1, 0), 1.0 - 0.3 + 0.1, 1e-15);
  EXPECT_NEAR(t(1, 1), 0.1, 1e-15);
  EXPECT_EQ(t(2, 1), 1.0);
  EXPECT_NEAR(t(3, 1), 0.8, 1e-15);
}

TEST(LabelsForEpoch, PartitionStateMismatchThrows) {
  const SmoothingState s = SmoothingState::one_hot(3, 3, 0.0);
  EXPECT_THROW(labels_for_epoch(s, single_subset(2), std::vector<std::size_t>{0, 1}), ShapeError);
}

}  // namespace
}  // namespace calibrar
