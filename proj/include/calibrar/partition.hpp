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

#ifndef CALIBRAR_PARTITION_HPP_
#define CALIBRAR_PARTITION_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "calibrar/data.hpp"
#include "calibrar/error.hpp"
#include "calibrar/hash.hpp"

namespace calibrar {

// Examples grouped into R equal-size robustness subsets.
//
// subset[i] is 0-based: subset 0 holds the least robust examples. Files and
// reports print it 1-based. Scores are the l2 norm of the smallest
// prediction-flipping perturbation found; +inf marks examples the attack
// could not flip.
struct RobustnessPartition {
  std::vector<double> scores;
  std::vector<std::size_t> subset;
  std::size_t num_subsets = 1;

  std::size_t size() const { return subset.size(); }

  std::vector<std::size_t> members(std::size_t r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      if (subset[i] == r) out.push_back(i);
    }
    return out;
  }

  friend bool operator==(const RobustnessPartition&, const RobustnessPartition&) = default;
};

// Sorts ascending by (score, index) and cuts into R contiguous blocks. The
// first n mod R blocks get one extra example.
inline RobustnessPartition partition(std::span<const double> scores, std::size_t num_subsets) {
  const std::size_t n = scores.size();
  if (num_subsets < 1) throw DomainError("partition: R must be at least 1");
  if (num_subsets > n) {
    throw DomainError("partition: R=" + std::to_string(num_subsets) + " exceeds n=" +
                      std::to_string(n));
  }
  for (double s : scores) {
    if (std::isnan(s)) throw DomainError("partition: NaN score");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  RobustnessPartition out;
  out.scores.assign(scores.begin(), scores.end());
  out.subset.assign(n, 0);
  out.num_subsets = num_subsets;
  const std::size_t base = n / num_subsets, extra = n % num_subsets;
  std::size_t pos = 0;
  for (std::size_t r = 0; r < num_subsets; ++r) {
    const std::size_t block = base + (r < extra ? 1 : 0);
    for (std::size_t k = 0; k < block; ++k) out.subset[order[pos++]] = r;
  }
  return out;
}

// Every example in one subset; the AdaLS regime.
inline RobustnessPartition single_subset(std::size_t n) {
  RobustnessPartition out;
  out.scores.assign(n, 0.0);
  out.subset.assign(n, 0);
  out.num_subsets = 1;
  return out;
}

struct PartitionFileHeader {
  std::size_t num_subsets = 0;
  std::uint64_t attack_config_hash = 0;
  std::uint64_t checkpoint_hash = 0;
  std::uint64_t config_hash = 0;
};

// Text layout:
//   # calibrar-partition v1
//   # R=<R>
//   # attack_config_hash=<hex>
//   # checkpoint_hash=<hex>
//   # config_hash=<hex>
//   example_id,score,subset_index
//   <i>,<score>,<1-based subset>
inline void save_partition(const RobustnessPartition& p, const PartitionFileHeader& header,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_partition: cannot write " + path);
  out << "# calibrar-partition v1\n"
      << "# R=" << p.num_subsets << '\n'
      << "# attack_config_hash=" << hex64(header.attack_config_hash) << '\n'
      << "# checkpoint_hash=" << hex64(header.checkpoint_hash) << '\n'
      << "# config_hash=" << hex64(header.config_hash) << '\n'
      << "example_id,score,subset_index\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    out << i << ',' << (std::isinf(p.scores[i]) ? std::string("inf") : detail::format_double(p.scores[i]))
        << ',' << p.subset[i] + 1 << '\n';
  }
  if (!out) throw IoError("save_partition: write failed for " + path);
}

inline RobustnessPartition load_partition(const std::string& path,
                                          PartitionFileHeader* header_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("load_partition: cannot open " + path);
  PartitionFileHeader header;
  RobustnessPartition p;
  std::string line;
  std::size_t line_no = 0;
  bool magic = false, columns = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    std::string_view text = detail::trim(line);
    if (text.empty()) continue;
    if (text.front() == '#') {
      text.remove_prefix(1);
      text = detail::trim(text);
      if (text == "calibrar-partition v1") {
        magic = true;
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = text.substr(0, eq);
      const auto value = text.substr(eq + 1);
      if (key == "R") {
        header.num_subsets = static_cast<std::size_t>(std::stoull(std::string(value)));
      } else if (key == "attack_config_hash") {
        header.attack_config_hash = parse_hex64(value);
      } else if (key == "checkpoint_hash") {
        header.checkpoint_hash = parse_hex64(value);
      } else if (key == "config_hash") {
        header.config_hash = parse_hex64(value);
      }
      continue;
    }
    if (!columns) {
      if (text != "example_id,score,subset_index") throw FormatError(where + "unexpected column header");
      columns = true;
      continue;
    }
    const auto fields = detail::split_fields(text);
    if (fields.size() != 3) throw FormatError(where + "expected 3 fields");
    const auto id = std::stoull(std::string(fields[0]));
    if (id != p.size()) throw FormatError(where + "example ids must be 0..n-1 in order");
    double score = std::numeric_limits<double>::infinity();
    if (detail::trim(fields[1]) != "inf") {
      const auto parsed = detail::parse_double(fields[1]);
      if (!parsed) throw FormatError(where + "bad score");
      score = *parsed;
    }
    const auto r = std::stoull(std::string(fields[2]));
    if (r < 1 || (header.num_subsets && r > header.num_subsets)) {
      throw FormatError(where + "subset index out of range");
    }
    p.scores.push_back(score);
    p.subset.push_back(static_cast<std::size_t>(r - 1));
  }
  if (!magic) throw FormatError(path + ": not a calibrar partition file");
  if (header.num_subsets == 0) throw FormatError(path + ": missing R header");
  p.num_subsets = header.num_subsets;
  if (header_out) *header_out = header;
  return p;
}

}  // namespace calibrar

#endif  // CALIBRAR_PARTITION_HPP_
