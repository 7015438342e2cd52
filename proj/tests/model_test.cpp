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
#include <cstdio>
#include <filesystem>

#include "calibrar/checkpoint_io.hpp"
#include "calibrar/data.hpp"
#include "calibrar/metrics.hpp"
#include "calibrar/mlp.hpp"
#include "calibrar/policy.hpp"
#include "calibrar/train.hpp"

namespace calibrar {
namespace {

Dataset xor_clusters(std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  const std::size_t n = 400;
  ds.features = NumArray::matrix(n, 2);
  ds.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double sx = (i % 2) ? 1.0 : -1.0;
    const double sy = (i / 2 % 2) ? 1.0 : -1.0;
    ds.features(i, 0) = sx + 0.2 * rng.normal();
    ds.features(i, 1) = sy + 0.2 * rng.normal();
    ds.labels.push_back(sx * sy > 0 ? 1 : 0);
  }
  return ds;
}

TEST(Init, SameSeedIsBitIdentical) {
  const MlpSpec spec = desk_spec(8, 4, 17);
  EXPECT_EQ(init(spec), init(spec));
}

TEST(Init, DifferentSeedsDiffer) {
  EXPECT_NE(init(desk_spec(8, 4, 1)).params, init(desk_spec(8, 4, 2)).params);
}

TEST(Init, SingleClassSpecIsRejected) {
  EXPECT_THROW(init(MlpSpec{{4, 8, 1}, Activation::relu, 0}), DomainError);
  EXPECT_THROW(init(MlpSpec{{4, 0, 3}, Activation::relu, 0}), DomainError);
}

TEST(PredictProba, RowsSumToOne) {
  const Checkpoint ckpt = init(desk_spec(5, 3, 4));
  Rng rng(1);
  NumArray x = NumArray::matrix(20, 5);
  for (double& v : x.values()) v = 3.0 * rng.normal();
  const NumArray p = predict_proba(ckpt, x);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double total = 0.0;
    for (double v : p.row(r)) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(PredictProba, ZeroWeightsGiveUniformRows) {
  Checkpoint ckpt = init(desk_spec(3, 5, 4));
  for (NumArray& p : ckpt.params) std::fill(p.values().begin(), p.values().end(), 0.0);
  const NumArray p = predict_proba(ckpt, NumArray::matrix({{1, -2, 3}, {0, 0, 0}}));
  for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.2);
  EXPECT_EQ(predict_class(p), (std::vector<std::size_t>{0, 0}));
}

TEST(PredictProba, InputWidthMismatchThrows) {
  EXPECT_THROW(predict_proba(init(desk_spec(3, 2, 0)), NumArray::matrix(2, 4)), ShapeError);
}

TEST(Train, FitsXorClusters) {
  const Dataset ds = xor_clusters(3);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 32;
  cfg.learning_rate = 3e-3;
  cfg.seed = 5;
  const Checkpoint model = train(init(MlpSpec{{2, 16, 16, 2}, Activation::relu, 5}), ds,
                                 one_hot_provider(ds), cfg);
  EXPECT_GE(accuracy_confidence(predict_proba(model, ds.features), ds.labels).accuracy, 0.95);
}

TEST(Train, ZeroEpsilonEqualsOneHot) {
  const Dataset ds = synth({3, 4, 40, 0.8, 2});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 8;
  const Checkpoint start = init(desk_spec(4, 3, 8));
  const SmoothingState eps0 = SmoothingState::fixed(1, 3, 0.0, 0.0);
  const RobustnessPartition all = single_subset(ds.size());
  const Checkpoint a = train(start, ds, one_hot_provider(ds), cfg);
  const Checkpoint b =
      train(start, ds, [&](std::size_t) { return labels_for_epoch(eps0, all, ds.labels); }, cfg);
  EXPECT_EQ(a, b);
}

TEST(Train, FixedEpsilonTargetsTenClasses) {
  const std::vector<std::size_t> labels{3, 0, 9};
  const SmoothingState ls = SmoothingState::fixed(1, 10, 0.0, 0.02);
  const NumArray targets = labels_for_epoch(ls, single_subset(labels.size()), labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t z = 0; z < 10; ++z) {
      EXPECT_NEAR(targets(i, z), z == labels[i] ? 0.982 : 0.002, 1e-15);
    }
  }
}

TEST(Train, RepeatedRunIsBitIdentical) {
  const Dataset ds = synth({4, 6, 50, 0.9, 1});
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 21;
  const auto run = [&] {
    return serialize(train(init(desk_spec(6, 4, 21)), ds, one_hot_provider(ds), cfg));
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, NonFiniteLossAborts) {
  const Dataset ds = synth({2, 3, 10, 1.0, 1});
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto poisoned = [&](std::size_t) {
    NumArray t = one_hot(ds.labels, 2);
    t[0] = std::nan("");
    return t;
  };
  EXPECT_THROW(train(init(desk_spec(3, 2, 1)), ds, poisoned, cfg), NumericError);
}

TEST(Train, InvalidConfigIsRejected) {
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), DomainError);
}

TEST(Train, LossDecreasesOnSeparableData) {
  const Dataset ds = synth({4, 8, 100, 0.3, 12});
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 3;
  std::vector<double> losses;
  train(init(desk_spec(8, 4, 3)), ds, one_hot_provider(ds), cfg,
        [&](const Checkpoint&, std::size_t, double loss) { losses.push_back(loss); });
  ASSERT_EQ(losses.size(), 5u);
  for (std::size_t e = 1; e < losses.size(); ++e) EXPECT_LT(losses[e], losses[e - 1]);
}

TEST(Train, SgdUpdatesParameters) {
  const Dataset ds = synth({2, 3, 20, 0.5, 4});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 0.05;
  const Checkpoint start = init(desk_spec(3, 2, 4));
  EXPECT_NE(train(start, ds, one_hot_provider(ds), cfg).params, start.params);
}

// Vanilla, LS(0), AdaLS(0) and AR-AdaLS(0) all train on one-hot targets for
// the whole run, so their parameters must agree bit for bit.
TEST(Train, ZeroStrengthPoliciesReduceToVanilla) {
  const Splits sp = split(synth({3, 5, 60, 0.9, 6}), {}, 6);
  const MlpSpec spec = desk_spec(5, 3, 9);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 9;
  RobustnessSource source;
  Rng rng(1);
  std::vector<double> fake_train(sp.train.size()), fake_val(sp.val.size());
  for (double& s : fake_train) s = rng.uniform();
  for (double& s : fake_val) s = rng.uniform();
  source.train = partition(fake_train, 4);
  source.val = partition(fake_val, 4);

  const PolicyRun vanilla = train_policy(spec, cfg, sp.train, sp.val, Policy::vanilla());
  const PolicyRun ls0 = train_policy(spec, cfg, sp.train, sp.val, Policy::ls(0.0));
  const PolicyRun adals0 = train_policy(spec, cfg, sp.train, sp.val, Policy::adals(0.0));
  const PolicyRun ar0 = train_policy(spec, cfg, sp.train, sp.val, Policy::ar_adals(0.0, 4), source);
  EXPECT_EQ(serialize(vanilla.model), serialize(ls0.model));
  EXPECT_EQ(vanilla.model.params, adals0.model.params);
  EXPECT_EQ(vanilla.model.params, ar0.model.params);
  EXPECT_EQ(vanilla.model.epoch, ar0.model.epoch);
}

TEST(CheckpointIo, SerializationIsByteStable) {
  Checkpoint ckpt = init(desk_spec(4, 3, 77));
  ckpt.epoch = 12;
  ckpt.config_hash = 0xfeedbeefULL;
  SmoothingState s = SmoothingState::one_hot(3, 3, 0.005);
  s.correct_mass = {0.9, 0.95, 1.0};
  for (std::size_t r = 0; r < 3; ++r) s.epsilon[r] = epsilon_from_correct(s.correct_mass[r], 3);
  s.epoch = 12;
  ckpt.smoothing = s;
  const auto bytes = serialize(ckpt);
  const Checkpoint back = deserialize(bytes);
  EXPECT_EQ(back, ckpt);
  EXPECT_EQ(serialize(back), bytes);
}

TEST(CheckpointIo, HeaderLayoutIsLittleEndian) {
  const auto bytes = serialize(init(MlpSpec{{2, 2}, Activation::relu, 0x0102030405060708ULL}));
  ASSERT_GT(bytes.size(), 24u);
  EXPECT_EQ(std::string(bytes.data(), 8), "CALBCKPT");
  EXPECT_EQ(bytes[8], 1);  // version, low byte first
  EXPECT_EQ(bytes[16], 0x08);  // seed, low byte first
  EXPECT_EQ(bytes[23], 0x01);
}

TEST(CheckpointIo, CorruptInputIsRejected) {
  auto bytes = serialize(init(desk_spec(3, 2, 1)));
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(deserialize(truncated), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize(bad_magic), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize(trailing), FormatError);
}

TEST(CheckpointIo, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "calibrar_model_test.ckpt";
  const Checkpoint ckpt = init(desk_spec(6, 4, 3));
  save_checkpoint(ckpt, path.string());
  EXPECT_EQ(load_checkpoint(path.string()), ckpt);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), IoError);
}

}  // namespace
}  // namespace calibrar
