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

#ifndef CALIBRAR_METRICS_HPP_
#define CALIBRAR_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calibrar/error.hpp"
#include "calibrar/num_array.hpp"
#include "calibrar/partition.hpp"

namespace calibrar {

enum class Binning { equal_width, equal_count };

inline Binning parse_binning(std::string_view name) {
  if (name == "width" || name == "equal_width") return Binning::equal_width;
  if (name == "count" || name == "equal_count") return Binning::equal_count;
  throw DomainError("unknown binning '" + std::string(name) + "'");
}

struct CalibrationBucket {
  std::size_t count = 0;
  double acc = 0.0;
  double conf = 0.0;
  double lower = 0.0;  // open end
  double upper = 0.0;  // closed end
};

struct CalibrationReport {
  std::size_t num_buckets = 0;
  std::vector<CalibrationBucket> buckets;
  double ece = 0.0;
  std::size_t n = 0;
};

// Bucket k covers (k/K, (k+1)/K]. Confidences at or below zero land in the
// first bucket.
inline std::size_t confidence_bucket(double confidence, std::size_t num_buckets) {
  const auto k = static_cast<double>(num_buckets);
  const double scaled = std::ceil(confidence * k) - 1.0;
  std::size_t b = scaled <= 0.0 ? 0 : std::min(num_buckets - 1, static_cast<std::size_t>(scaled));
  // Repair rounding in confidence * K against the exact boundary values.
  while (b > 0 && confidence <= static_cast<double>(b) / k) --b;
  while (b + 1 < num_buckets && confidence > static_cast<double>(b + 1) / k) ++b;
  return b;
}

namespace detail {

inline void require_predictions(const NumArray& probs, std::span<const std::size_t> labels,
                                const char* where) {
  require_matrix(probs, where);
  if (probs.rows() == 0 || labels.empty()) throw DomainError(std::string(where) + ": no examples");
  if (probs.rows() != labels.size()) {
    throw ShapeError(std::string(where) + ": " + std::to_string(probs.rows()) +
                     " prediction rows vs " + std::to_string(labels.size()) + " labels");
  }
}

// Accumulates bucket sums in the order examples are visited.
inline CalibrationReport finish_report(std::vector<std::size_t> counts, std::vector<double> correct,
                                       std::vector<double> conf_sum, std::size_t n) {
  CalibrationReport report;
  report.num_buckets = counts.size();
  report.n = n;
  report.buckets.resize(counts.size());
  const auto total = static_cast<double>(n);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    CalibrationBucket& b = report.buckets[k];
    b.count = counts[k];
    if (b.count == 0) continue;
    const auto size = static_cast<double>(b.count);
    b.acc = correct[k] / size;
    b.conf = conf_sum[k] / size;
    report.ece += (size / total) * std::abs(b.acc - b.conf);
  }
  return report;
}

}  // namespace detail

// Expected calibration error over K confidence buckets.
//
// Confidence is the probability of the predicted (argmax) class. With
// equal_width binning the buckets are (k/K, (k+1)/K]; with equal_count the
// examples sorted by (confidence, index) are cut into K contiguous blocks
// whose sizes differ by at most one. Empty buckets contribute nothing.
inline CalibrationReport ece(const NumArray& probs, std::span<const std::size_t> labels,
                             std::size_t num_buckets, Binning binning = Binning::equal_width) {
  detail::require_predictions(probs, labels, "ece");
  if (num_buckets < 1) throw DomainError("ece: K must be at least 1");
  const std::size_t n = labels.size();
  std::vector<std::size_t> counts(num_buckets, 0);
  std::vector<double> correct(num_buckets, 0.0), conf_sum(num_buckets, 0.0);

  std::vector<double> confidence(n);
  std::vector<bool> hit(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.row(i);
    const std::size_t predicted = argmax(row);
    confidence[i] = row[predicted];
    hit[i] = predicted == labels[i];
  }

  std::vector<double> lower(num_buckets), upper(num_buckets);
  if (binning == Binning::equal_width) {
    const auto k = static_cast<double>(num_buckets);
    for (std::size_t b = 0; b < num_buckets; ++b) {
      lower[b] = static_cast<double>(b) / k;
      upper[b] = static_cast<double>(b + 1) / k;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t b = confidence_bucket(confidence[i], num_buckets);
      ++counts[b];
      correct[b] += hit[i] ? 1.0 : 0.0;
      conf_sum[b] += confidence[i];
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return confidence[a] < confidence[b]; });
    const std::size_t base = n / num_buckets, extra = n % num_buckets;
    std::size_t pos = 0;
    for (std::size_t b = 0; b < num_buckets; ++b) {
      const std::size_t block = base + (b < extra ? 1 : 0);
      lower[b] = pos == 0 ? 0.0 : confidence[order[pos - 1]];
      for (std::size_t j = 0; j < block; ++j, ++pos) {
        const std::size_t i = order[pos];
        ++counts[b];
        correct[b] += hit[i] ? 1.0 : 0.0;
        conf_sum[b] += confidence[i];
      }
      upper[b] = pos == 0 ? 0.0 : confidence[order[pos - 1]];
    }
  }
  CalibrationReport report =
      detail::finish_report(std::move(counts), std::move(correct), std::move(conf_sum), n);
  for (std::size_t b = 0; b < num_buckets; ++b) {
    report.buckets[b].lower = lower[b];
    report.buckets[b].upper = upper[b];
  }
  return report;
}

struct ReliabilityRow {
  double bin_center = 0.0;
  double acc = 0.0;
  double conf = 0.0;
  std::size_t count = 0;
};

// Plot-ready reliability diagram rows, same buckets as ece().
inline std::vector<ReliabilityRow> reliability_rows(const NumArray& probs,
                                                    std::span<const std::size_t> labels,
                                                    std::size_t num_buckets,
                                                    Binning binning = Binning::equal_width) {
  const CalibrationReport report = ece(probs, labels, num_buckets, binning);
  std::vector<ReliabilityRow> rows;
  rows.reserve(report.buckets.size());
  for (const CalibrationBucket& b : report.buckets) {
    rows.push_back({0.5 * (b.lower + b.upper), b.acc, b.conf, b.count});
  }
  return rows;
}

struct AccuracySummary {
  double accuracy = 0.0;
  double confidence = 0.0;  // mean predicted-class probability
};

inline AccuracySummary accuracy_confidence(const NumArray& probs,
                                           std::span<const std::size_t> labels) {
  detail::require_predictions(probs, labels, "accuracy_confidence");
  double correct = 0.0, conf = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probs.row(i);
    const std::size_t predicted = argmax(row);
    correct += predicted == labels[i] ? 1.0 : 0.0;
    conf += row[predicted];
  }
  const auto n = static_cast<double>(labels.size());
  return {correct / n, conf / n};
}

struct StabilityReport {
  std::size_t num_models = 0;
  // Per-example spread: sum_m (p_mi - pbar_i)^2 / (M - 1).
  std::vector<double> per_example;
  double sigma2 = 0.0;
};

// Cross-run variance of M models' predicted probabilities.
//
// p_mi is model m's probability for the reference class of example i, which
// is the argmax of the across-model mean prediction (ties to the lowest
// class). sigma2 = 1/(M-1) * 1/N * sum_m sum_i (p_mi - pbar_i)^2.
inline StabilityReport variance(std::span<const NumArray> probs_per_model,
                                std::span<const std::size_t> labels) {
  const std::size_t M = probs_per_model.size();
  if (M < 2) throw DomainError("variance: need at least two models, got " + std::to_string(M));
  for (const NumArray& p : probs_per_model) {
    detail::require_predictions(p, labels, "variance");
    require_same_shape(p, probs_per_model.front(), "variance");
  }
  const std::size_t n = labels.size(), Z = probs_per_model.front().cols();
  StabilityReport report;
  report.num_models = M;
  report.per_example.resize(n);
  std::vector<double> mean_row(Z);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(mean_row.begin(), mean_row.end(), 0.0);
    for (const NumArray& p : probs_per_model) {
      const auto row = p.row(i);
      for (std::size_t z = 0; z < Z; ++z) mean_row[z] += row[z];
    }
    const std::size_t ref = argmax(mean_row);
    double pbar = 0.0;
    for (const NumArray& p : probs_per_model) pbar += p(i, ref);
    pbar /= static_cast<double>(M);
    double spread = 0.0;
    for (const NumArray& p : probs_per_model) {
      const double diff = p(i, ref) - pbar;
      spread += diff * diff;
    }
    report.per_example[i] = spread / static_cast<double>(M - 1);
    total += spread;
  }
  report.sigma2 = total / static_cast<double>(M - 1) / static_cast<double>(n);
  return report;
}

struct SubsetStats {
  std::size_t count = 0;
  double acc = 0.0;
  double conf = 0.0;
  double ece = 0.0;
  std::optional<double> variance;
};

// Accuracy, confidence and ECE restricted to each robustness subset. When
// predictions of several independent models are supplied, the subset's
// cross-run variance is filled in as well; `probs` is then typically their
// mean or one representative run.
inline std::vector<SubsetStats> per_subset_stats(
    const NumArray& probs, std::span<const std::size_t> labels,
    const RobustnessPartition& partition, std::size_t num_buckets = 10,
    std::span<const NumArray> probs_per_model = {}) {
  detail::require_predictions(probs, labels, "per_subset_stats");
  if (partition.size() != labels.size()) {
    throw ShapeError("per_subset_stats: partition covers " + std::to_string(partition.size()) +
                     " examples, predictions " + std::to_string(labels.size()));
  }
  std::vector<SubsetStats> out(partition.num_subsets);
  for (std::size_t r = 0; r < partition.num_subsets; ++r) {
    const auto members = partition.members(r);
    if (members.empty()) continue;
    NumArray sub = NumArray::matrix(members.size(), probs.cols());
    std::vector<std::size_t> sub_labels(members.size());
    for (std::size_t k = 0; k < members.size(); ++k) {
      std::copy_n(probs.row(members[k]).begin(), probs.cols(), sub.row(k).begin());
      sub_labels[k] = labels[members[k]];
    }
    const AccuracySummary summary = accuracy_confidence(sub, sub_labels);
    out[r].count = members.size();
    out[r].acc = summary.accuracy;
    out[r].conf = summary.confidence;
    out[r].ece = ece(sub, sub_labels, num_buckets).ece;
    if (probs_per_model.size() >= 2) {
      std::vector<NumArray> model_subs;
      for (const NumArray& p : probs_per_model) {
        NumArray s = NumArray::matrix(members.size(), p.cols());
        for (std::size_t k = 0; k < members.size(); ++k) {
          std::copy_n(p.row(members[k]).begin(), p.cols(), s.row(k).begin());
        }
        model_subs.push_back(std::move(s));
      }
      out[r].variance = variance(model_subs, sub_labels).sigma2;
    }
  }
  return out;
}

// Mean prediction of several models; rows remain probability vectors.
inline NumArray mean_prediction(std::span<const NumArray> probs_per_model) {
  if (probs_per_model.empty()) throw DomainError("mean_prediction: no members");
  NumArray out(probs_per_model.front().shape());
  for (const NumArray& p : probs_per_model) {
    require_same_shape(p, out, "mean_prediction");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
  }
  const auto m = static_cast<double>(probs_per_model.size());
  for (double& v : out.values()) v /= m;
  return out;
}

// Ranks with ties averaged, 1-based.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && values[order[end]] == values[order[start]]) ++end;
    const double rank = 0.5 * static_cast<double>(start + end - 1) + 1.0;
    for (std::size_t k = start; k < end; ++k) ranks[order[k]] = rank;
    start = end;
  }
  return ranks;
}

// Spearman rank correlation (Pearson on average ranks). Zero when either
// side is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw DomainError("spearman: need two equal-length samples of size >= 2");
  }
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct Quartiles {
  double min = 0.0;
  double q25 = 0.0;
  double q50 = 0.0;
  double q75 = 0.0;
  double max = 0.0;
};

// Box-plot statistics with linear interpolation between order statistics.
inline Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw DomainError("quartiles: no values");
  std::sort(values.begin(), values.end());
  const auto at = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

}  // namespace calibrar

#endif  // CALIBRAR_METRICS_HPP_
