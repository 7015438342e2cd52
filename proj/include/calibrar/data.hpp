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

#ifndef CALIBRAR_DATA_HPP_
#define CALIBRAR_DATA_HPP_

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "calibrar/error.hpp"
#include "calibrar/num_array.hpp"
#include "calibrar/rng.hpp"

namespace calibrar {

// Labelled feature matrix. labels[i] is in [0, num_classes).
struct Dataset {
  NumArray features;  // n x d
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string provenance = "synthetic";

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  void validate() const {
    require_matrix(features, "Dataset");
    if (labels.empty()) throw DomainError("Dataset: no examples");
    if (features.rows() != labels.size()) {
      throw ShapeError("Dataset: " + std::to_string(features.rows()) + " feature rows vs " +
                       std::to_string(labels.size()) + " labels");
    }
    if (num_classes < 2) throw DomainError("Dataset: need at least two classes");
    for (std::size_t y : labels) {
      if (y >= num_classes) {
        throw DomainError("Dataset: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
      }
    }
  }

  // Rows picked by index, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.features = NumArray::matrix(indices.size(), dim());
    out.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto src = features.row(indices[k]);
      std::copy(src.begin(), src.end(), out.features.row(k).begin());
      out.labels.push_back(labels[indices[k]]);
    }
    out.num_classes = num_classes;
    out.provenance = provenance;
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline NumArray one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  NumArray out = NumArray::matrix(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw DomainError("one_hot: label out of range");
    out(i, labels[i]) = 1.0;
  }
  return out;
}

struct SynthConfig {
  std::size_t num_classes = 4;
  std::size_t dim = 8;
  std::size_t per_class = 500;
  // Isotropic standard deviation of every cluster around its center. The
  // centers sit on a sphere of radius 2, so spreads near 0.6 give
  // overlapping classes while a d-64-64-Z network still reaches 0.85 to 0.95
  // test accuracy.
  double spread = 0.6;
  std::uint64_t seed = 0;
};

// Seeded Gaussian blobs, one per class, interleaved by class.
inline Dataset synth(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) throw DomainError("synth: need at least two classes");
  if (cfg.dim < 2) throw DomainError("synth: need at least two feature dimensions");
  if (cfg.per_class < 1) throw DomainError("synth: need at least one example per class");
  if (!(cfg.spread >= 0.0) || !std::isfinite(cfg.spread)) {
    throw DomainError("synth: spread must be finite and nonnegative");
  }
  Rng rng(cfg.seed);
  constexpr double kRadius = 2.0;
  std::vector<std::vector<double>> centers(cfg.num_classes, std::vector<double>(cfg.dim));
  for (auto& center : centers) {
    double norm = 0.0;
    for (double& v : center) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : center) v *= kRadius / norm;
  }

  const std::size_t n = cfg.num_classes * cfg.per_class;
  Dataset ds;
  ds.features = NumArray::matrix(n, cfg.dim);
  ds.labels.resize(n);
  ds.num_classes = cfg.num_classes;
  ds.provenance = "synthetic";
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % cfg.num_classes;
    ds.labels[i] = y;
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < cfg.dim; ++j) row[j] = centers[y][j] + cfg.spread * rng.normal();
  }
  return ds;
}

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

// Seeded stratified split. Within each class, examples are shuffled and the
// first round(f_train * n_c) go to train, the next round(f_val * n_c) to val,
// the rest to test. Every split keeps the original example order.
inline Splits split(const Dataset& ds, const SplitFractions& fractions, std::uint64_t seed) {
  ds.validate();
  const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
  for (double v : f) {
    if (!(v >= 0.0) || v > 1.0) throw DomainError("split: fractions must lie in [0, 1]");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw DomainError("split: fractions must sum to 1");

  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  Rng rng(seed);
  std::array<std::vector<std::size_t>, 3> parts;
  for (auto& members : by_class) {
    rng.shuffle(std::span<std::size_t>(members));
    const auto count = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(f[0] * count));
    const auto n_val =
        std::min(members.size() - n_train, static_cast<std::size_t>(std::llround(f[1] * count)));
    for (std::size_t k = 0; k < members.size(); ++k) {
      const int part = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
      parts[part].push_back(members[k]);
    }
  }
  static constexpr std::array<const char*, 3> kNames{"train", "val", "test"};
  for (std::size_t p = 0; p < 3; ++p) {
    if (parts[p].empty()) throw DomainError(std::string("split: ") + kNames[p] + " split is empty");
    std::sort(parts[p].begin(), parts[p].end());
  }
  Splits out{ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2])};
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    if (std::find(out.train.labels.begin(), out.train.labels.end(), c) == out.train.labels.end()) {
      throw DomainError("split: class " + std::to_string(c) + " missing from train split");
    }
  }
  return out;
}

enum class Corruption { gaussian_noise, uniform_noise, feature_dropout, smooth_blur };

inline constexpr std::array<Corruption, 4> kAllCorruptions{
    Corruption::gaussian_noise, Corruption::uniform_noise, Corruption::feature_dropout,
    Corruption::smooth_blur};

inline constexpr int kMaxIntensity = 5;

inline std::string_view to_string(Corruption kind) {
  switch (kind) {
    case Corruption::gaussian_noise: return "gaussian_noise";
    case Corruption::uniform_noise: return "uniform_noise";
    case Corruption::feature_dropout: return "feature_dropout";
    case Corruption::smooth_blur: return "smooth_blur";
  }
  return "unknown";
}

inline Corruption parse_corruption(std::string_view name) {
  for (Corruption kind : kAllCorruptions) {
    if (to_string(kind) == name) return kind;
  }
  throw DomainError("unknown corruption kind '" + std::string(name) + "'");
}

// Severity parameter for each kind at intensities 1..5. Noise levels are in
// units of the per-feature standard deviation; dropout is a drop probability;
// blur is the mixing weight toward the neighbour average.
inline double corruption_severity(Corruption kind, int intensity) {
  if (intensity < 1 || intensity > kMaxIntensity) {
    throw DomainError("corrupt: intensity must be in 1..5, got " + std::to_string(intensity));
  }
  static constexpr std::array<double, 5> kGaussian{0.05, 0.1, 0.2, 0.4, 0.8};
  static constexpr std::array<double, 5> kUniform{0.1, 0.2, 0.4, 0.7, 1.0};
  static constexpr std::array<double, 5> kDropout{0.05, 0.1, 0.2, 0.35, 0.5};
  static constexpr std::array<double, 5> kBlur{0.1, 0.25, 0.4, 0.6, 0.8};
  const auto k = static_cast<std::size_t>(intensity - 1);
  switch (kind) {
    case Corruption::gaussian_noise: return kGaussian[k];
    case Corruption::uniform_noise: return kUniform[k];
    case Corruption::feature_dropout: return kDropout[k];
    case Corruption::smooth_blur: return kBlur[k];
  }
  throw DomainError("corrupt: unknown kind");
}

// Shifted copy of `ds` with labels untouched.
//
// The random draws depend on (seed, kind) only, not on the intensity, so the
// five levels perturb along the same directions with growing magnitude.
inline Dataset corrupt(const Dataset& ds, Corruption kind, int intensity, std::uint64_t seed) {
  const double severity = corruption_severity(kind, intensity);
  ds.validate();
  const std::size_t n = ds.size(), d = ds.dim();

  std::vector<double> mean(d, 0.0), stddev(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += ds.features(i, j);
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = ds.features(i, j) - mean[j];
      stddev[j] += diff * diff;
    }
  }
  for (double& s : stddev) s = std::sqrt(s / static_cast<double>(n));

  Dataset out = ds;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
  switch (kind) {
    case Corruption::gaussian_noise:
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out.features(i, j) += severity * stddev[j] * rng.normal();
      }
      break;
    case Corruption::uniform_noise:
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          out.features(i, j) += severity * stddev[j] * rng.uniform(-1.0, 1.0);
        }
      }
      break;
    case Corruption::feature_dropout:
      // Dropped features are replaced by the feature mean.
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          if (rng.uniform() < severity) out.features(i, j) = mean[j];
        }
      }
      break;
    case Corruption::smooth_blur:
      // Features are treated as a 1-D signal with reflecting ends.
      if (d < 2) break;
      for (std::size_t i = 0; i < n; ++i) {
        const auto src = ds.features.row(i);
        auto dst = out.features.row(i);
        for (std::size_t j = 0; j < d; ++j) {
          const double left = src[j == 0 ? 1 : j - 1];
          const double right = src[j + 1 == d ? d - 2 : j + 1];
          dst[j] = (1.0 - severity) * src[j] + severity * 0.5 * (left + right);
        }
      }
      break;
  }
  out.provenance = "corrupted(" + std::string(to_string(kind)) + "," + std::to_string(intensity) + ")";
  return out;
}

// CSV layout: header f0..f{d-1},label; one example per row.
struct CsvSchema {
  std::string label_column = "label";
  // Inferred as max(label) + 1 when absent.
  std::optional<std::size_t> num_classes;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double value) {
  std::array<char, 64> buffer{};
  const auto [ptr, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  return std::string(buffer.data(), ptr);
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ":1: missing header row");
  const auto header = detail::split_fields(line);
  std::optional<std::size_t> label_at;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (detail::trim(header[c]) == schema.label_column) label_at = c;
  }
  if (!label_at) {
    throw FormatError(path + ":1: no '" + schema.label_column + "' column in header");
  }
  const std::size_t width = header.size();
  if (width < 2) throw FormatError(path + ":1: need at least one feature column");

  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    if (fields.size() != width) {
      throw FormatError(where + "expected " + std::to_string(width) + " fields, got " +
                        std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < width; ++c) {
      if (c == *label_at) {
        const auto text = detail::trim(fields[c]);
        long long label = -1;
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), label);
        if (ec != std::errc() || ptr != text.data() + text.size() || label < 0) {
          throw FormatError(where + "label '" + std::string(text) + "' is not a class id");
        }
        labels.push_back(static_cast<std::size_t>(label));
        continue;
      }
      const auto value = detail::parse_double(fields[c]);
      if (!value || !std::isfinite(*value)) {
        throw FormatError(where + "column " + std::to_string(c) + " value '" +
                          std::string(detail::trim(fields[c])) + "' is not a finite number");
      }
      values.push_back(*value);
    }
  }
  if (labels.empty()) throw FormatError(path + ": no data rows");

  Dataset ds;
  ds.features = NumArray({labels.size(), width - 1}, std::move(values));
  ds.num_classes = schema.num_classes.value_or(*std::max_element(labels.begin(), labels.end()) + 1);
  ds.labels = std::move(labels);
  ds.provenance = "csv";
  ds.validate();
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw IoError("save_csv: cannot write " + path);
  for (std::size_t j = 0; j < ds.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) out << detail::format_double(v) << ',';
    out << ds.labels[i] << '\n';
  }
  if (!out) throw IoError("save_csv: write failed for " + path);
}

}  // namespace calibrar

#endif  // CALIBRAR_DATA_HPP_
