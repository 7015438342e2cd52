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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "calibrar/data.hpp"
#include "calibrar/metrics.hpp"
#include "calibrar/policy.hpp"

namespace calibrar {
namespace {

std::filesystem::path scratch(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("calibrar_data_test_" + name);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

TEST(Synth, SameSeedIsIdentical) {
  EXPECT_EQ(synth({4, 8, 50, 0.8, 3}), synth({4, 8, 50, 0.8, 3}));
  EXPECT_NE(synth({4, 8, 50, 0.8, 3}).features, synth({4, 8, 50, 0.8, 4}).features);
}

TEST(Synth, ShapeAndBalance) {
  const Dataset ds = synth({5, 3, 20, 1.0, 0});
  EXPECT_EQ(ds.size(), 100u);
  EXPECT_EQ(ds.dim(), 3u);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), c), 20);
}

// With no spread every example sits on its class center, so a nearest
// center rule is perfect.
TEST(Synth, ZeroSpreadIsSeparable) {
  const Dataset ds = synth({4, 6, 30, 0.0, 9});
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t c = ds.labels[i];
    EXPECT_EQ(ds.features.row(i)[0], ds.features.row(c)[0]);
  }
}

TEST(Synth, InvalidConfigThrows) {
  EXPECT_THROW(synth({1, 8, 10, 1.0, 0}), DomainError);
  EXPECT_THROW(synth({3, 8, 10, -1.0, 0}), DomainError);
}

TEST(Split, DisjointCoverAndStratified) {
  Dataset ds = synth({3, 4, 100, 1.0, 2});
  // Tag every example with its index to trace where it went.
  for (std::size_t i = 0; i < ds.size(); ++i) ds.features(i, 0) = static_cast<double>(i);
  const Splits sp = split(ds, {}, 7);
  std::vector<int> seen(ds.size(), 0);
  for (const Dataset* part : {&sp.train, &sp.val, &sp.test}) {
    for (std::size_t i = 0; i < part->size(); ++i) ++seen[static_cast<std::size_t>(part->features(i, 0))];
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
  EXPECT_EQ(sp.train.size(), 210u);
  EXPECT_EQ(sp.val.size(), 45u);
  EXPECT_EQ(sp.test.size(), 45u);
  for (const Dataset* part : {&sp.train, &sp.val, &sp.test}) {
    std::map<std::size_t, double> counts;
    for (std::size_t y : part->labels) counts[y] += 1;
    const double expected = static_cast<double>(part->size()) / 3.0;
    for (const auto& [c, k] : counts) EXPECT_LE(std::abs(k - expected), 1.0);
  }
}

TEST(Split, SeededAndDeterministic) {
  const Dataset ds = synth({3, 4, 40, 1.0, 2});
  const Splits a = split(ds, {}, 1), b = split(ds, {}, 1), c = split(ds, {}, 2);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, DegenerateFractionsThrow) {
  const Dataset ds = synth({3, 4, 40, 1.0, 2});
  EXPECT_THROW(split(ds, {1.0, 0.0, 0.0}, 1), DomainError);
  EXPECT_THROW(split(ds, {0.5, 0.2, 0.2}, 1), DomainError);
  EXPECT_THROW(split(ds, {-0.1, 0.6, 0.5}, 1), DomainError);
}

TEST(Corrupt, DeterministicAndLabelPreserving) {
  const Dataset ds = synth({4, 8, 50, 0.8, 1});
  for (Corruption kind : kAllCorruptions) {
    const Dataset a = corrupt(ds, kind, 3, 42), b = corrupt(ds, kind, 3, 42);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.labels, ds.labels);
    EXPECT_NE(a.features, ds.features) << to_string(kind);
    EXPECT_EQ(parse_corruption(to_string(kind)), kind);
  }
  EXPECT_THROW(corrupt(ds, Corruption::gaussian_noise, 0, 1), DomainError);
  EXPECT_THROW(corrupt(ds, Corruption::gaussian_noise, 6, 1), DomainError);
  EXPECT_THROW(parse_corruption("fog"), DomainError);
}

// Property: the shift from the clean data never shrinks as intensity grows.
TEST(Corrupt, ShiftGrowsWithIntensity) {
  const Dataset ds = synth({4, 8, 50, 0.8, 1});
  for (Corruption kind : kAllCorruptions) {
    double previous = 0.0;
    for (int level = 1; level <= kMaxIntensity; ++level) {
      const Dataset c = corrupt(ds, kind, level, 5);
      double shift = 0.0;
      for (std::size_t i = 0; i < ds.features.size(); ++i) {
        shift += std::abs(c.features[i] - ds.features[i]);
      }
      EXPECT_GE(shift, previous) << to_string(kind) << " level " << level;
      previous = shift;
    }
  }
}

// The default synthetic problem is hard enough to leave errors for the
// robustness analysis yet easy enough for the desk network, and corruption
// intensity orders accuracy. Both averaged over three seeds.
TEST(Desk, DefaultSpreadAccuracyBandAndIntensityOrdering) {
  constexpr int kSeeds = 3;
  double clean = 0.0;
  std::map<Corruption, std::vector<double>> by_level;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    SynthConfig sc;
    sc.seed = seed;
    const Splits sp = split(synth(sc), {}, seed);
    TrainConfig cfg;
    cfg.seed = seed;
    const Checkpoint model = train_policy(desk_spec(sc.dim, sc.num_classes, seed), cfg, sp.train, sp.val,
                                          Policy::vanilla())
                                 .model;
    clean += accuracy_confidence(predict_proba(model, sp.test.features), sp.test.labels).accuracy / kSeeds;
    for (Corruption kind : kAllCorruptions) {
      auto& acc = by_level[kind];
      acc.resize(kMaxIntensity + 1, 0.0);
      for (int level = 1; level <= kMaxIntensity; ++level) {
        const Dataset c = corrupt(sp.test, kind, level, 99);
        acc[level] += accuracy_confidence(predict_proba(model, c.features), c.labels).accuracy / kSeeds;
      }
    }
  }
  EXPECT_GE(clean, 0.80);
  EXPECT_LE(clean, 0.95);
  for (const auto& [kind, acc] : by_level) {
    for (int level = 2; level <= kMaxIntensity; ++level) {
      EXPECT_LE(acc[level], acc[level - 1] + 1e-12) << to_string(kind) << " level " << level;
    }
  }
}

TEST(Csv, RoundTripIsExact) {
  Dataset ds = synth({3, 5, 10, 0.8, 4});
  ds.features(0, 0) = 0.1 + 0.2;  // needs all 17 digits
  const auto path = scratch("roundtrip.csv");
  save_csv(ds, path.string());
  const Dataset back = load_csv(path.string());
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.num_classes, 3u);
  std::filesystem::remove(path);
}

TEST(Csv, MissingLabelColumnIsReported) {
  const auto path = scratch("nolabel.csv");
  write_file(path, "f0,f1,class\n1,2,0\n");
  try {
    load_csv(path.string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(Csv, BadValueNamesTheLine) {
  const auto path = scratch("badvalue.csv");
  write_file(path, "f0,label\n1.5,0\nabc,1\n");
  try {
    load_csv(path.string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
  }
  write_file(path, "f0,label\n1.5,0\n2.5\n");
  EXPECT_THROW(load_csv(path.string()), FormatError);
  write_file(path, "f0,label\n1.5,-1\n");
  EXPECT_THROW(load_csv(path.string()), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_csv(path.string()), IoError);
}

TEST(Csv, IrisFixture) {
  const Dataset iris = load_csv(std::string(CALIBRAR_TEST_DATA) + "/iris.csv");
  EXPECT_EQ(iris.size(), 150u);
  EXPECT_EQ(iris.dim(), 4u);
  EXPECT_EQ(iris.num_classes, 3u);
  EXPECT_DOUBLE_EQ(iris.features(0, 0), 5.1);
  const Splits sp = split(iris, {}, 0);
  EXPECT_EQ(sp.train.size() + sp.val.size() + sp.test.size(), 150u);
}

TEST(Csv, DeclaredClassCountIsChecked) {
  const auto path = scratch("classes.csv");
  write_file(path, "f0,label\n1,0\n2,4\n");
  EXPECT_THROW(load_csv(path.string(), {"label", 3}), DomainError);
  EXPECT_EQ(load_csv(path.string(), {"label", 6}).num_classes, 6u);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace calibrar
