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

#ifndef CALIBRAR_CONFIG_HPP_
#define CALIBRAR_CONFIG_HPP_

// Flat key=value experiment configuration.
//
// A config file holds one `key = value` pair per line; `#` starts a comment.
// Every key has a default, so an empty file is a valid config. Values are
// layered: defaults, then the file, then CALIBRAR_<KEY> environment
// variables (key upper-cased), then command-line overrides.
//
// The resolved config is the sorted list of result-affecting keys with their
// final values. Its FNV-1a hash tags every artifact a command writes. `out`
// and `jobs` only decide where and how fast, so they are left out of it.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "calibrar/attack.hpp"
#include "calibrar/data.hpp"
#include "calibrar/ensemble.hpp"
#include "calibrar/error.hpp"
#include "calibrar/hash.hpp"
#include "calibrar/metrics.hpp"
#include "calibrar/mlp.hpp"
#include "calibrar/policy.hpp"
#include "calibrar/train.hpp"

namespace calibrar {

struct ConfigKey {
  std::string_view name;
  std::string_view default_value;
  std::string_view help;
  bool hashed = true;
};

inline constexpr std::string_view kEnvPrefix = "CALIBRAR_";

// The documented schema. README.md mirrors this table.
inline constexpr std::array<ConfigKey, 38> kConfigSchema{{
    {"data_dir", "", "directory with train.csv, val.csv, test.csv; empty = synthesize"},
    {"synth_classes", "4", "number of synthetic classes Z"},
    {"synth_dim", "8", "synthetic feature dimension d"},
    {"synth_per_class", "500", "synthetic examples per class"},
    {"synth_spread", "0.6", "cluster standard deviation"},
    {"synth_seed", "0", "synthetic data seed"},
    {"split_train", "0.7", "train fraction"},
    {"split_val", "0.15", "validation fraction"},
    {"split_test", "0.15", "test fraction"},
    {"split_seed", "0", "split seed"},
    {"model_hidden", "64,64", "hidden layer widths"},
    {"model_seed", "0", "weight initialization seed"},
    {"train_epochs", "60", "training epochs"},
    {"train_batch_size", "64", "minibatch size"},
    {"train_optimizer", "adam", "adam or sgd"},
    {"train_lr", "0.001", "learning rate"},
    {"train_seed", "0", "minibatch shuffle seed"},
    {"policy", "vanilla", "vanilla, ls, adals or ar_adals"},
    {"policy_epsilon", "0.02", "fixed epsilon for ls"},
    {"policy_alpha", "", "adaptive step size; empty = 0.05 for adals, 0.005 for ar_adals"},
    {"policy_R", "10", "robustness subsets for ar_adals"},
    {"attack_binary_search_steps", "3", "CW trade-off search rounds"},
    {"attack_max_iterations", "500", "CW optimizer steps per round"},
    {"attack_step_size", "0.005", "CW Adam learning rate"},
    {"attack_initial_tradeoff", "1", "CW initial trade-off constant c"},
    {"attack_confidence_margin", "0", "CW margin kappa"},
    {"attack_clamp_unit_box", "false", "project adversarial inputs onto [0,1]^d"},
    {"attack_early_abort", "true", "stop a CW round when the loss stalls"},
    {"ensemble_mode", "ensemble_of_vanilla", "ensemble_of_{vanilla,ls,adals,aradals} or aradals_of_ensemble"},
    {"ensemble_seeds", "1,2,3,4,5", "member seeds, one per member"},
    {"eval_buckets", "10", "ECE buckets K"},
    {"eval_binning", "equal_width", "equal_width or equal_count"},
    {"eval_corruption_seed", "99", "seed of the corruption draws"},
    {"sweep_param", "epsilon", "epsilon (ls) or alpha (adals, ar_adals)"},
    {"sweep_grid", "0,0.01,0.02,0.03,0.04,0.05,0.06,0.07,0.08,0.09,0.1", "sweep values"},
    {"sweep_policy", "ls", "policy trained at every sweep point"},
    {"out", "run", "output directory", false},
    {"jobs", "1", "worker threads for sweeps and ensembles", false},
}};

inline std::string env_name(std::string_view key) {
  std::string out(kEnvPrefix);
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

class ConfigMap {
 public:
  using EnvLookup = std::function<const char*(const char*)>;

  ConfigMap() {
    for (const ConfigKey& k : kConfigSchema) values_.emplace(k.name, k.default_value);
  }

  static bool known(std::string_view key) {
    return std::any_of(kConfigSchema.begin(), kConfigSchema.end(),
                       [&](const ConfigKey& k) { return k.name == key; });
  }

  void set(std::string_view key, std::string_view value) {
    if (!known(key)) throw ConfigError("unknown config key '" + std::string(key) + "'");
    values_[std::string(key)] = std::string(detail::trim(value));
  }

  // "key=value" as given on a command line.
  void set_assignment(std::string_view text) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(text) + "'");
    set(detail::trim(text.substr(0, eq)), text.substr(eq + 1));
  }

  void merge_text(std::string_view text, std::string_view origin) {
    std::size_t line_no = 0;
    while (!text.empty()) {
      const auto nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
      if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
      const auto key = detail::trim(line.substr(0, eq));
      if (!known(key)) throw ConfigError(where + "unknown config key '" + std::string(key) + "'");
      set(key, line.substr(eq + 1));
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream text;
    text << in.rdbuf();
    merge_text(text.str(), path);
  }

  void merge_env(const EnvLookup& lookup = [](const char* name) { return std::getenv(name); }) {
    for (const ConfigKey& k : kConfigSchema) {
      if (const char* v = lookup(env_name(k.name).c_str())) set(k.name, v);
    }
  }

  const std::string& get(std::string_view key) const {
    const auto it = values_.find(std::string(key));
    if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    return it->second;
  }

  double real(std::string_view key) const {
    const auto v = detail::parse_double(get(key));
    if (!v || !std::isfinite(*v)) throw bad_value(key, "a finite number");
    return *v;
  }

  std::uint64_t integer(std::string_view key) const { return parse_u64(key, get(key)); }

  bool flag(std::string_view key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw bad_value(key, "true or false");
  }

  std::vector<double> reals(std::string_view key) const {
    std::vector<double> out;
    for (std::string_view item : detail::split_fields(get(key))) {
      const auto v = detail::parse_double(item);
      if (!v || !std::isfinite(*v)) throw bad_value(key, "a comma-separated list of numbers");
      out.push_back(*v);
    }
    return out;
  }

  std::vector<std::uint64_t> integers(std::string_view key) const {
    std::vector<std::uint64_t> out;
    for (std::string_view item : detail::split_fields(get(key))) out.push_back(parse_u64(key, item));
    return out;
  }

  // Sorted key=value lines of every hashed key.
  std::string resolved_text() const {
    std::string out;
    for (const auto& [key, value] : values_) {
      if (is_hashed(key)) out += key + "=" + value + "\n";
    }
    return out;
  }

  std::uint64_t hash() const { return fnv1a64(resolved_text()); }

 private:
  static bool is_hashed(std::string_view key) {
    for (const ConfigKey& k : kConfigSchema) {
      if (k.name == key) return k.hashed;
    }
    return false;
  }

  static ConfigError bad_value(std::string_view key, std::string_view expected) {
    return ConfigError("config key '" + std::string(key) + "' must be " + std::string(expected));
  }

  std::uint64_t parse_u64(std::string_view key, std::string_view text) const {
    text = detail::trim(text);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
      throw bad_value(key, "a nonnegative integer");
    }
    return v;
  }

  std::map<std::string, std::string> values_;
};

// Typed view of a resolved ConfigMap.
struct ExperimentConfig {
  std::string data_dir;
  SynthConfig synth;
  SplitFractions fractions;
  std::uint64_t split_seed = 0;
  std::vector<std::size_t> hidden;
  std::uint64_t model_seed = 0;
  TrainConfig train;
  Policy policy;
  std::size_t num_subsets = kDefaultSubsets;  // R for attacks and ar_adals
  AttackConfig attack;
  EnsembleMode ensemble_mode = EnsembleMode::ensemble_of_vanilla;
  std::vector<std::uint64_t> ensemble_seeds;
  std::size_t ece_buckets = 10;
  Binning binning = Binning::equal_width;
  std::uint64_t corruption_seed = 99;
  std::string sweep_param;
  std::vector<double> sweep_grid;
  PolicyKind sweep_policy = PolicyKind::ls;
  std::string out;
  std::size_t jobs = 1;
  std::string resolved_text;
  std::uint64_t hash = 0;

  MlpSpec model_spec(std::size_t input_dim, std::size_t num_classes) const {
    MlpSpec spec{{input_dim}, Activation::relu, model_seed};
    spec.layer_sizes.insert(spec.layer_sizes.end(), hidden.begin(), hidden.end());
    spec.layer_sizes.push_back(num_classes);
    return spec;
  }

  // Policy of the given kind with this config's epsilon/alpha/R.
  Policy policy_of(PolicyKind kind, std::optional<double> alpha_override = std::nullopt) const {
    Policy p;
    p.kind = kind;
    if (kind == PolicyKind::ls) p.epsilon = policy.epsilon;
    if (kind == PolicyKind::adals || kind == PolicyKind::ar_adals) {
      p.alpha = alpha_override.value_or(alpha_for(kind));
    }
    if (kind == PolicyKind::ar_adals) p.num_subsets = num_subsets;
    return p;
  }

  double alpha_for(PolicyKind kind) const {
    if (explicit_alpha) return *explicit_alpha;
    return kind == PolicyKind::ar_adals ? kDefaultArAdaLsAlpha : kDefaultAdaLsAlpha;
  }

  std::optional<double> explicit_alpha;
};

inline ExperimentConfig resolve(const ConfigMap& map) {
  ExperimentConfig c;
  try {
    c.data_dir = map.get("data_dir");
    c.synth.num_classes = map.integer("synth_classes");
    c.synth.dim = map.integer("synth_dim");
    c.synth.per_class = map.integer("synth_per_class");
    c.synth.spread = map.real("synth_spread");
    c.synth.seed = map.integer("synth_seed");
    c.fractions = {map.real("split_train"), map.real("split_val"), map.real("split_test")};
    c.split_seed = map.integer("split_seed");
    if (!map.get("model_hidden").empty()) {
      for (std::uint64_t h : map.integers("model_hidden")) c.hidden.push_back(h);
    }
    c.model_seed = map.integer("model_seed");
    c.train.epochs = map.integer("train_epochs");
    c.train.batch_size = map.integer("train_batch_size");
    c.train.optimizer = parse_optimizer(map.get("train_optimizer"));
    c.train.learning_rate = map.real("train_lr");
    c.train.seed = map.integer("train_seed");
    if (!map.get("policy_alpha").empty()) c.explicit_alpha = map.real("policy_alpha");
    const PolicyKind kind = parse_policy(map.get("policy"));
    c.policy.kind = kind;
    c.policy.epsilon = map.real("policy_epsilon");
    c.num_subsets = map.integer("policy_R");
    if (c.num_subsets < 1) throw DomainError("policy_R must be at least 1");
    c.policy = c.policy_of(kind);
    c.attack.binary_search_steps = map.integer("attack_binary_search_steps");
    c.attack.max_iterations = map.integer("attack_max_iterations");
    c.attack.step_size = map.real("attack_step_size");
    c.attack.initial_tradeoff = map.real("attack_initial_tradeoff");
    c.attack.confidence_margin = map.real("attack_confidence_margin");
    c.attack.clamp_unit_box = map.flag("attack_clamp_unit_box");
    c.attack.early_abort = map.flag("attack_early_abort");
    c.ensemble_mode = parse_ensemble_mode(map.get("ensemble_mode"));
    c.ensemble_seeds = map.integers("ensemble_seeds");
    c.ece_buckets = map.integer("eval_buckets");
    c.binning = parse_binning(map.get("eval_binning"));
    c.corruption_seed = map.integer("eval_corruption_seed");
    c.sweep_param = map.get("sweep_param");
    c.sweep_grid = map.reals("sweep_grid");
    c.sweep_policy = parse_policy(map.get("sweep_policy"));
    c.out = map.get("out");
    c.jobs = map.integer("jobs");

    c.train.validate();
    c.policy.validate();
    c.attack.validate();
    if (c.ece_buckets < 1) throw DomainError("eval_buckets must be at least 1");
    if (c.jobs < 1) throw DomainError("jobs must be at least 1");
    if (c.sweep_param != "epsilon" && c.sweep_param != "alpha") {
      throw DomainError("sweep_param must be epsilon or alpha");
    }
    if (c.ensemble_seeds.empty()) throw DomainError("ensemble_seeds must list at least one seed");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  c.resolved_text = map.resolved_text();
  c.hash = map.hash();
  return c;
}

}  // namespace calibrar

#endif  // CALIBRAR_CONFIG_HPP_
