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

// calibrar: command-line driver for robustness-conditioned label smoothing
// experiments.
//
//   calibrar generate-data   write the train/val/test CSV splits
//   calibrar train           train one model under a policy
//   calibrar attack          score robustness with CW-l2 and write partitions
//   calibrar eval            clean and corrupted test-set reports for a run
//   calibrar sweep           grid search by validation ECE
//   calibrar ensemble-train  train an ensemble run directory
//   calibrar report          reshape eval outputs into plot-ready tables
//
// Exit status: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "calibrar/attack.hpp"
#include "calibrar/checkpoint_io.hpp"
#include "calibrar/config.hpp"
#include "calibrar/data.hpp"
#include "calibrar/ensemble.hpp"
#include "calibrar/metrics.hpp"
#include "calibrar/partition.hpp"
#include "calibrar/policy.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace calibrar::cli {
namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

// Options shared by every verb.
struct Common {
  std::string config_file;
  std::vector<std::string> assignments;
  std::optional<std::string> out;
  std::optional<std::size_t> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> policy;
  std::optional<double> epsilon;
  std::optional<double> alpha;
  std::optional<std::size_t> subsets;
  std::optional<std::size_t> epochs;
  std::optional<std::string> mode;

  bool explicit_config() const {
    return !config_file.empty() || !assignments.empty() || seed || policy || epsilon || alpha ||
           subsets || epochs || mode;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_file, "key=value config file");
  app->add_option("--set", c.assignments, "override a config key (key=value), repeatable");
  app->add_option("-o,--out", c.out, "output directory");
  app->add_option("-j,--jobs", c.jobs, "worker threads");
  app->add_option("--seed", c.seed, "sets model_seed and train_seed");
  app->add_option("--policy", c.policy, "vanilla, ls, adals or ar_adals");
  app->add_option("--epsilon", c.epsilon, "ls epsilon");
  app->add_option("--alpha", c.alpha, "adaptive step size");
  app->add_option("--R", c.subsets, "robustness subsets");
  app->add_option("--epochs", c.epochs, "training epochs");
}

std::string shortest(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return detail::format_double(v);
}

ConfigMap build_map(const Common& c) {
  ConfigMap m;
  if (!c.config_file.empty()) m.merge_file(c.config_file);
  m.merge_env();
  for (const std::string& a : c.assignments) m.set_assignment(a);
  if (c.out) m.set("out", *c.out);
  if (c.jobs) m.set("jobs", std::to_string(*c.jobs));
  if (c.seed) {
    m.set("model_seed", std::to_string(*c.seed));
    m.set("train_seed", std::to_string(*c.seed));
  }
  if (c.policy) m.set("policy", *c.policy);
  if (c.epsilon) m.set("policy_epsilon", shortest(*c.epsilon));
  if (c.alpha) m.set("policy_alpha", shortest(*c.alpha));
  if (c.subsets) m.set("policy_R", std::to_string(*c.subsets));
  if (c.epochs) m.set("train_epochs", std::to_string(*c.epochs));
  if (c.mode) m.set("ensemble_mode", *c.mode);
  return m;
}

// ---------------------------------------------------------------- file output

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

std::string hash_comment(std::uint64_t hash) { return "# config_hash=" + hex64(hash) + "\n"; }

void write_config(const fs::path& dir, const ExperimentConfig& cfg) {
  write_text(dir / "config.txt",
             "# calibrar resolved config\n" + hash_comment(cfg.hash) + cfg.resolved_text);
}

// Reads the hash recorded in a file's "# config_hash=" line.
std::optional<std::uint64_t> recorded_hash(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# config_hash=", 0) == 0) return parse_hex64(line.substr(14));
    if (!line.empty() && line[0] != '#') break;
  }
  return std::nullopt;
}

// ----------------------------------------------------------------- data

Splits load_splits(const ExperimentConfig& cfg) {
  if (cfg.data_dir.empty()) return split(synth(cfg.synth), cfg.fractions, cfg.split_seed);
  const fs::path dir(cfg.data_dir);
  Splits s{load_csv((dir / "train.csv").string()), load_csv((dir / "val.csv").string()),
           load_csv((dir / "test.csv").string())};
  const std::size_t z = std::max({s.train.num_classes, s.val.num_classes, s.test.num_classes});
  for (Dataset* d : {&s.train, &s.val, &s.test}) d->num_classes = z;
  if (s.val.dim() != s.train.dim() || s.test.dim() != s.train.dim()) {
    throw FormatError("data_dir splits have different feature counts");
  }
  return s;
}

Json metrics_json(const NumArray& probs, const Dataset& ds, const ExperimentConfig& cfg) {
  const AccuracySummary s = accuracy_confidence(probs, ds.labels);
  Json j;
  j["n"] = ds.size();
  j["accuracy"] = s.accuracy;
  j["confidence"] = s.confidence;
  j["ece"] = ece(probs, ds.labels, cfg.ece_buckets, cfg.binning).ece;
  return j;
}

void write_trajectory(const fs::path& path, std::uint64_t hash,
                      const std::vector<std::vector<TrajectoryRow>>& logs, bool shared) {
  std::string text = hash_comment(hash) + "member,t,r,p_correct,epsilon,conf,acc\n";
  for (std::size_t m = 0; m < logs.size(); ++m) {
    for (const TrajectoryRow& row : logs[m]) {
      text += (shared ? std::string("shared") : std::to_string(m)) + "," + std::to_string(row.epoch) +
              "," + std::to_string(row.subset + 1) + "," + shortest(row.correct_mass) + "," +
              shortest(row.epsilon) + "," + shortest(row.conf) + "," + shortest(row.acc) + "\n";
    }
  }
  write_text(path, text);
}

// Partition source for ar_adals training.
RobustnessSource partition_source(const ExperimentConfig& cfg, const Policy& policy,
                                  const std::string& partition_dir, bool on_the_fly,
                                  const Splits& data) {
  RobustnessSource source;
  if (!policy.needs_partition()) return source;
  if (on_the_fly) {
    source.on_the_fly = cfg.attack;
    return source;
  }
  if (partition_dir.empty()) {
    throw ConfigError("ar_adals needs --partition-dir (from `calibrar attack`) or --on-the-fly");
  }
  const fs::path dir(partition_dir);
  PartitionFileHeader th, vh;
  source.train = load_partition((dir / "train.partition").string(), &th);
  source.val = load_partition((dir / "val.partition").string(), &vh);
  if (source.train->num_subsets != policy.subsets() || source.val->num_subsets != policy.subsets()) {
    throw ConfigError("partition files have R=" + std::to_string(source.train->num_subsets) +
                      " but the policy uses R=" + std::to_string(policy.subsets()));
  }
  if (source.train->size() != data.train.size() || source.val->size() != data.val.size()) {
    throw FormatError("partition files do not cover the configured train/val splits");
  }
  return source;
}

// ----------------------------------------------------------------- verbs

int cmd_generate(const ExperimentConfig& cfg) {
  const Splits s = load_splits(cfg);
  const fs::path out(cfg.out);
  ensure_dir(out);
  save_csv(s.train, (out / "train.csv").string());
  save_csv(s.val, (out / "val.csv").string());
  save_csv(s.test, (out / "test.csv").string());
  write_config(out, cfg);
  Json j;
  j["config_hash"] = hex64(cfg.hash);
  j["num_classes"] = s.train.num_classes;
  j["dim"] = s.train.dim();
  j["train"] = s.train.size();
  j["val"] = s.val.size();
  j["test"] = s.test.size();
  write_json(out / "data.json", j);
  std::cout << "wrote " << s.train.size() << "/" << s.val.size() << "/" << s.test.size()
            << " examples to " << out.string() << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& partition_dir, bool on_the_fly) {
  const Splits s = load_splits(cfg);
  const RobustnessSource source = partition_source(cfg, cfg.policy, partition_dir, on_the_fly, s);
  PolicyRun run = train_policy(cfg.model_spec(s.train.dim(), s.train.num_classes), cfg.train, s.train,
                               s.val, cfg.policy, source);
  run.model.config_hash = cfg.hash;
  const fs::path out(cfg.out);
  ensure_dir(out);
  save_checkpoint(run.model, (out / "model.ckpt").string());
  write_trajectory(out / "trajectory.csv", cfg.hash, {run.trajectory}, false);
  write_config(out, cfg);

  std::string loss = hash_comment(cfg.hash) + "epoch,loss\n";
  for (std::size_t e = 0; e < run.epoch_loss.size(); ++e) {
    loss += std::to_string(e + 1) + "," + shortest(run.epoch_loss[e]) + "\n";
  }
  write_text(out / "loss.csv", loss);

  Json j;
  j["config_hash"] = hex64(cfg.hash);
  j["checkpoint_hash"] = hex64(checkpoint_hash(run.model));
  j["policy"] = cfg.policy.describe();
  j["epochs"] = cfg.train.epochs;
  j["partition"] = !cfg.policy.needs_partition() ? "none" : (on_the_fly ? "on_the_fly" : "precomputed");
  j["val"] = metrics_json(predict_proba(run.model, s.val.features), s.val, cfg);
  j["test"] = metrics_json(predict_proba(run.model, s.test.features), s.test, cfg);
  write_json(out / "summary.json", j);
  std::cout << cfg.policy.describe() << ": test accuracy " << j["test"]["accuracy"].get<double>()
            << ", ECE " << j["test"]["ece"].get<double>() << "\n";
  return 0;
}

int cmd_attack(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  if (checkpoint_path.empty()) throw ConfigError("attack needs --checkpoint");
  const Checkpoint model = load_checkpoint(checkpoint_path);
  const Splits s = load_splits(cfg);
  const std::array<std::pair<const char*, const Dataset*>, 3> parts{
      {{"train", &s.train}, {"val", &s.val}, {"test", &s.test}}};
  std::array<RobustnessScores, 3> scores;
  parallel_for(3, cfg.jobs, [&](std::size_t k) {
    scores[k] = robustness_scores(model, parts[k].second->features, cfg.attack);
  });
  const fs::path out(cfg.out);
  ensure_dir(out);
  const PartitionFileHeader header{cfg.num_subsets, cfg.attack.hash(), checkpoint_hash(model), cfg.hash};
  Json j;
  j["config_hash"] = hex64(cfg.hash);
  j["checkpoint_hash"] = hex64(header.checkpoint_hash);
  j["attack_config_hash"] = hex64(header.attack_config_hash);
  j["attack"] = cfg.attack.canonical();
  j["R"] = cfg.num_subsets;
  for (std::size_t k = 0; k < 3; ++k) {
    const RobustnessPartition p = partition(scores[k].scores, cfg.num_subsets);
    save_partition(p, header, (out / (std::string(parts[k].first) + ".partition")).string());
    Json split;
    split["n"] = parts[k].second->size();
    split["success_rate"] = scores[k].success_rate();
    std::size_t failed = 0;
    for (AttackStatus st : scores[k].status) failed += st == AttackStatus::failed ? 1 : 0;
    split["failed"] = failed;
    j[parts[k].first] = split;
    std::cout << "attack success rate (" << parts[k].first << "): " << scores[k].success_rate()
              << " of " << parts[k].second->size() << "\n";
  }
  write_config(out, cfg);
  write_json(out / "attack.json", j);
  return 0;
}

// A trained run directory: one model or an ensemble.
struct LoadedRun {
  std::vector<Checkpoint> members;
  bool ensemble = false;
  std::uint64_t hash = 0;
};

LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  const auto hash = recorded_hash(dir / "config.txt");
  if (!hash) throw IoError("missing or unreadable " + (dir / "config.txt").string());
  run.hash = *hash;
  if (fs::exists(dir / "manifest.json")) {
    const Json manifest = Json::parse(read_text(dir / "manifest.json"));
    const std::size_t m = manifest.at("M").get<std::size_t>();
    for (std::size_t k = 0; k < m; ++k) {
      run.members.push_back(load_checkpoint((dir / ("member_" + std::to_string(k) + ".ckpt")).string()));
    }
    run.ensemble = true;
  } else {
    run.members.push_back(load_checkpoint((dir / "model.ckpt").string()));
  }
  return run;
}

std::string row(std::initializer_list<std::string> fields) {
  std::string out;
  for (const std::string& f : fields) out += (out.empty() ? "" : ",") + f;
  return out + "\n";
}

int cmd_eval(const Common& common, const fs::path& run_dir, const std::string& partition_path,
             bool force) {
  LoadedRun run = load_run(run_dir);
  ConfigMap map;
  if (common.explicit_config()) {
    map = build_map(common);
  } else {
    map.merge_text(read_text(run_dir / "config.txt"), (run_dir / "config.txt").string());
    if (common.jobs) map.set("jobs", std::to_string(*common.jobs));
  }
  const ExperimentConfig cfg = resolve(map);
  if (cfg.hash != run.hash && !force) {
    throw ConfigError("config hash " + hex64(cfg.hash) + " does not match run " + run_dir.string() +
                      " (" + hex64(run.hash) + "); pass --force to evaluate anyway");
  }
  for (const Checkpoint& m : run.members) {
    if (m.config_hash != run.hash && !force) {
      throw ConfigError("checkpoint in " + run_dir.string() + " was written under config " +
                        hex64(m.config_hash) + ", run records " + hex64(run.hash) +
                        "; pass --force to evaluate anyway");
    }
  }
  const Splits s = load_splits(cfg);

  struct TestSet {
    std::string name, kind;
    int intensity = 0;
    Dataset data;
  };
  std::vector<TestSet> sets{{"clean", "none", 0, s.test}};
  for (Corruption kind : kAllCorruptions) {
    for (int level = 1; level <= kMaxIntensity; ++level) {
      sets.push_back({std::string(to_string(kind)) + "_" + std::to_string(level),
                      std::string(to_string(kind)), level,
                      corrupt(s.test, kind, level, cfg.corruption_seed)});
    }
  }

  const bool spread = run.members.size() >= 2;
  std::string table = hash_comment(cfg.hash) +
                      "test_set,kind,intensity,n,accuracy,confidence,ece,sigma2\n";
  // metric values per intensity across kinds, for the quartile summary
  std::vector<std::vector<double>> ece_at(kMaxIntensity + 1), acc_at(kMaxIntensity + 1),
      var_at(kMaxIntensity + 1);
  NumArray clean_probs;
  std::vector<NumArray> clean_members;
  for (const TestSet& t : sets) {
    std::vector<NumArray> probs;
    for (const Checkpoint& m : run.members) probs.push_back(predict_proba(m, t.data.features));
    const NumArray mean = mean_prediction(probs);
    const AccuracySummary a = accuracy_confidence(mean, t.data.labels);
    const double e = ece(mean, t.data.labels, cfg.ece_buckets, cfg.binning).ece;
    const std::optional<double> v =
        spread ? std::optional<double>(variance(probs, t.data.labels).sigma2) : std::nullopt;
    table += row({t.name, t.kind, std::to_string(t.intensity), std::to_string(t.data.size()),
                  shortest(a.accuracy), shortest(a.confidence), shortest(e), v ? shortest(*v) : ""});
    ece_at[t.intensity].push_back(e);
    acc_at[t.intensity].push_back(a.accuracy);
    if (v) var_at[t.intensity].push_back(*v);
    if (t.intensity == 0) {
      clean_probs = mean;
      clean_members = probs;
    }
  }
  write_text(run_dir / "eval.csv", table);

  std::string quart = hash_comment(cfg.hash) + "intensity,metric,min,q25,q50,q75,max\n";
  Json by_intensity = Json::array();
  for (int level = 0; level <= kMaxIntensity; ++level) {
    Json entry;
    entry["intensity"] = level;
    const std::array<std::pair<const char*, const std::vector<double>*>, 3> metrics{
        {{"ece", &ece_at[level]}, {"accuracy", &acc_at[level]}, {"sigma2", &var_at[level]}}};
    for (const auto& [name, values] : metrics) {
      if (values->empty()) continue;
      const Quartiles q = quartiles(*values);
      quart += row({std::to_string(level), name, shortest(q.min), shortest(q.q25), shortest(q.q50),
                    shortest(q.q75), shortest(q.max)});
      entry[std::string("mean_") + name] =
          std::accumulate(values->begin(), values->end(), 0.0) / static_cast<double>(values->size());
    }
    by_intensity.push_back(entry);
  }
  write_text(run_dir / "quartiles.csv", quart);

  std::string rel = hash_comment(cfg.hash) + "bucket,bin_center,count,accuracy,confidence\n";
  const auto rows = reliability_rows(clean_probs, s.test.labels, cfg.ece_buckets, cfg.binning);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    rel += row({std::to_string(k + 1), shortest(rows[k].bin_center), std::to_string(rows[k].count),
                shortest(rows[k].acc), shortest(rows[k].conf)});
  }
  write_text(run_dir / "reliability.csv", rel);

  Json j;
  j["config_hash"] = hex64(cfg.hash);
  j["members"] = run.members.size();
  j["clean"] = metrics_json(clean_probs, s.test, cfg);
  if (spread) j["clean"]["sigma2"] = variance(clean_members, s.test.labels).sigma2;
  j["by_intensity"] = by_intensity;

  const fs::path part_path = partition_path.empty() ? run_dir / "test.partition" : fs::path(partition_path);
  if (fs::exists(part_path)) {
    const RobustnessPartition part = load_partition(part_path.string());
    if (part.size() != s.test.size()) {
      throw FormatError(part_path.string() + " does not cover the test split");
    }
    const auto stats = per_subset_stats(clean_probs, s.test.labels, part, cfg.ece_buckets,
                                        spread ? std::span<const NumArray>(clean_members)
                                               : std::span<const NumArray>());
    std::string sub = hash_comment(cfg.hash) + "subset,count,accuracy,confidence,ece,sigma2\n";
    for (std::size_t r = 0; r < stats.size(); ++r) {
      sub += row({std::to_string(r + 1), std::to_string(stats[r].count), shortest(stats[r].acc),
                  shortest(stats[r].conf), shortest(stats[r].ece),
                  stats[r].variance ? shortest(*stats[r].variance) : ""});
    }
    write_text(run_dir / "subsets.csv", sub);
    j["subsets"] = stats.size();
  }
  write_json(run_dir / "eval.json", j);
  std::cout << "clean: accuracy " << j["clean"]["accuracy"].get<double>() << ", ECE "
            << j["clean"]["ece"].get<double>() << "; " << sets.size() << " test sets\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& partition_dir, bool on_the_fly) {
  if (cfg.sweep_grid.empty()) throw ConfigError("sweep_grid is empty");
  const bool over_epsilon = cfg.sweep_param == "epsilon";
  if (over_epsilon && cfg.sweep_policy != PolicyKind::ls) {
    throw ConfigError("sweep_param=epsilon needs sweep_policy=ls");
  }
  if (!over_epsilon && cfg.sweep_policy != PolicyKind::adals && cfg.sweep_policy != PolicyKind::ar_adals) {
    throw ConfigError("sweep_param=alpha needs sweep_policy adals or ar_adals");
  }
  const Splits s = load_splits(cfg);
  const Policy base = cfg.policy_of(cfg.sweep_policy);
  const RobustnessSource source = partition_source(cfg, base, partition_dir, on_the_fly, s);
  const fs::path out(cfg.out);
  ensure_dir(out);

  struct Point {
    double value = 0.0;
    bool ok = false;
    double val_ece = 0.0;
    double val_accuracy = 0.0;
    std::string message;
  };
  std::vector<Point> points(cfg.sweep_grid.size());
  parallel_for(points.size(), cfg.jobs, [&](std::size_t k) {
    Point& p = points[k];
    p.value = cfg.sweep_grid[k];
    try {
      Policy policy = base;
      (over_epsilon ? policy.epsilon : policy.alpha) = p.value;
      policy.validate();
      PolicyRun run = train_policy(cfg.model_spec(s.train.dim(), s.train.num_classes), cfg.train,
                                   s.train, s.val, policy, source);
      run.model.config_hash = cfg.hash;
      const NumArray probs = predict_proba(run.model, s.val.features);
      p.val_ece = ece(probs, s.val.labels, cfg.ece_buckets, cfg.binning).ece;
      p.val_accuracy = accuracy_confidence(probs, s.val.labels).accuracy;
      save_checkpoint(run.model, (out / ("point_" + std::to_string(k) + ".ckpt")).string());
      p.ok = true;
    } catch (const std::exception& e) {
      p.message = e.what();
    }
  });

  std::optional<std::size_t> best;
  std::string table = hash_comment(cfg.hash) + cfg.sweep_param + ",val_ece,val_accuracy,status\n";
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Point& p = points[k];
    table += row({shortest(p.value), p.ok ? shortest(p.val_ece) : "", p.ok ? shortest(p.val_accuracy) : "",
                  p.ok ? "ok" : "failed"});
    if (!p.ok) {
      std::cerr << "sweep point " << cfg.sweep_param << "=" << p.value << " failed: " << p.message << "\n";
      continue;
    }
    if (!best || p.val_ece < points[*best].val_ece ||
        (p.val_ece == points[*best].val_ece && p.value < points[*best].value)) {
      best = k;
    }
  }
  write_text(out / "sweep.csv", table);
  write_config(out, cfg);
  Json j;
  j["config_hash"] = hex64(cfg.hash);
  j["policy"] = std::string(to_string(cfg.sweep_policy));
  j["param"] = cfg.sweep_param;
  j["grid"] = cfg.sweep_grid;
  std::size_t failures = 0;
  for (const Point& p : points) failures += p.ok ? 0 : 1;
  j["failed_points"] = failures;
  if (best) {
    j["best_value"] = points[*best].value;
    j["best_val_ece"] = points[*best].val_ece;
  }
  write_json(out / "sweep.json", j);
  if (!best) {
    std::cerr << "sweep: every grid point failed\n";
    return kExitRuntime;
  }
  std::cout << "best " << cfg.sweep_param << " = " << points[*best].value << " (validation ECE "
            << points[*best].val_ece << ")\n";
  return 0;
}

int cmd_ensemble(const ExperimentConfig& cfg, const std::string& partition_dir, bool on_the_fly) {
  const EnsembleMode mode = cfg.ensemble_mode;
  const Policy policy = cfg.policy_of(member_policy_kind(mode));
  const Splits s = load_splits(cfg);
  const RobustnessSource source = partition_source(cfg, policy, partition_dir, on_the_fly, s);
  EnsembleRun run = train_ensemble(cfg.model_spec(s.train.dim(), s.train.num_classes), cfg.train,
                                   s.train, s.val, policy, cfg.ensemble_seeds, mode, source, cfg.jobs);
  const fs::path out(cfg.out);
  ensure_dir(out);
  for (std::size_t k = 0; k < run.members.size(); ++k) {
    run.members[k].config_hash = cfg.hash;
    save_checkpoint(run.members[k], (out / ("member_" + std::to_string(k) + ".ckpt")).string());
  }
  write_trajectory(out / "trajectory.csv", cfg.hash, run.trajectories, run.shared_state());
  write_config(out, cfg);
  Json manifest;
  manifest["config_hash"] = hex64(cfg.hash);
  manifest["mode"] = std::string(to_string(mode));
  manifest["M"] = run.members.size();
  manifest["seeds"] = run.seeds;
  manifest["policy"] = policy.describe();
  write_json(out / "manifest.json", manifest);

  Json j;
  j["config_hash"] = hex64(cfg.hash);
  j["mode"] = std::string(to_string(mode));
  for (const auto& [name, ds] : {std::pair<const char*, const Dataset*>{"val", &s.val}, {"test", &s.test}}) {
    const auto probs = member_predictions(run, ds->features);
    Json split = metrics_json(mean_prediction(probs), *ds, cfg);
    Json members = Json::array();
    for (const NumArray& p : probs) members.push_back(metrics_json(p, *ds, cfg));
    split["members"] = members;
    if (probs.size() >= 2) split["sigma2"] = variance(probs, ds->labels).sigma2;
    j[name] = split;
  }
  write_json(out / "summary.json", j);
  std::cout << to_string(mode) << " (M=" << run.members.size() << "): test accuracy "
            << j["test"]["accuracy"].get<double>() << ", ECE " << j["test"]["ece"].get<double>() << "\n";
  return 0;
}

// Minimal reader for the CSV tables this tool writes.
std::vector<std::vector<std::string>> read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> fields;
    for (std::string_view f : detail::split_fields(line)) fields.emplace_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

double number(const std::string& text, const fs::path& where) {
  const auto v = detail::parse_double(text);
  if (!v) throw FormatError(where.string() + ": bad number '" + text + "'");
  return *v;
}

int cmd_report(const ExperimentConfig& cfg, const std::vector<std::string>& runs) {
  if (runs.empty()) throw ConfigError("report needs at least one --run");
  const fs::path out(cfg.out);
  ensure_dir(out);
  Json j;
  j["config_hash"] = hex64(cfg.hash);
  Json sources = Json::array();

  // Shift robustness: ECE quartiles across corruption kinds per intensity.
  std::string fig3 = hash_comment(cfg.hash) + "run,intensity,ece_q25,ece_q50,ece_q75,sigma2_mean\n";
  for (const std::string& r : runs) {
    const fs::path dir(r);
    Json src;
    src["run"] = dir.filename().string();
    src["config_hash"] = hex64(recorded_hash(dir / "eval.csv").value_or(0));
    sources.push_back(src);
    const auto rows = read_table(dir / "eval.csv");
    for (int level = 0; level <= kMaxIntensity; ++level) {
      std::vector<double> e, v;
      for (const auto& f : rows) {
        if (f.size() < 8 || std::stoi(f[2]) != level) continue;
        e.push_back(number(f[6], dir / "eval.csv"));
        if (!f[7].empty()) v.push_back(number(f[7], dir / "eval.csv"));
      }
      if (e.empty()) throw FormatError((dir / "eval.csv").string() + ": no rows for intensity " +
                                       std::to_string(level));
      const Quartiles q = quartiles(e);
      const std::string vmean =
          v.empty() ? "" : shortest(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
      fig3 += row({dir.filename().string(), std::to_string(level), shortest(q.q25), shortest(q.q50),
                   shortest(q.q75), vmean});
    }
  }
  write_text(out / "fig3.csv", fig3);
  j["runs"] = sources;

  // Robustness subsets: accuracy, confidence, ECE and variance per subset.
  const fs::path subsets = fs::path(runs.front()) / "subsets.csv";
  if (fs::exists(subsets)) {
    const auto rows = read_table(subsets);
    std::string fig2 = hash_comment(cfg.hash) + "subset,accuracy,confidence,ece,sigma2\n";
    std::vector<double> index, acc, e, v;
    for (const auto& f : rows) {
      fig2 += row({f.at(0), f.at(2), f.at(3), f.at(4), f.at(5)});
      index.push_back(number(f[0], subsets));
      acc.push_back(number(f[2], subsets));
      e.push_back(number(f[4], subsets));
      if (!f[5].empty()) v.push_back(number(f[5], subsets));
    }
    write_text(out / "fig2.csv", fig2);
    if (index.size() >= 2) {
      j["spearman_subset_accuracy"] = spearman(index, acc);
      j["spearman_subset_ece"] = spearman(index, e);
      if (v.size() == index.size()) j["spearman_subset_sigma2"] = spearman(index, v);
    }
  }
  write_json(out / "report.json", j);
  std::cout << "wrote report tables to " << out.string() << "\n";
  return 0;
}

}  // namespace
}  // namespace calibrar::cli

int main(int argc, char** argv) {
  using namespace calibrar;
  using namespace calibrar::cli;
  CLI::App app{"Adversarial-robustness-conditioned adaptive label smoothing experiments"};
  app.require_subcommand(1);

  Common common;
  std::string partition_dir, checkpoint, run_dir, partition_file;
  std::vector<std::string> runs;
  bool on_the_fly = false, force = false;

  CLI::App* gen = app.add_subcommand("generate-data", "write train/val/test CSV splits");
  CLI::App* train_cmd = app.add_subcommand("train", "train one model under a policy");
  CLI::App* attack = app.add_subcommand("attack", "CW-l2 robustness scores and partitions");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a run on clean and shifted test sets");
  CLI::App* sweep = app.add_subcommand("sweep", "grid search by validation ECE");
  CLI::App* ens = app.add_subcommand("ensemble-train", "train an ensemble");
  CLI::App* report = app.add_subcommand("report", "plot-ready tables from eval outputs");
  for (CLI::App* sub : {gen, train_cmd, attack, eval_cmd, sweep, ens, report}) add_common(sub, common);
  for (CLI::App* sub : {train_cmd, sweep, ens}) {
    sub->add_option("--partition-dir", partition_dir, "directory with train.partition and val.partition");
    sub->add_flag("--on-the-fly", on_the_fly, "re-attack the current model after every epoch");
  }
  attack->add_option("--checkpoint", checkpoint, "vanilla checkpoint to attack");
  eval_cmd->add_option("--run", run_dir, "run directory")->required();
  eval_cmd->add_option("--partition", partition_file, "test partition (default <run>/test.partition)");
  eval_cmd->add_flag("--force", force, "evaluate even if config hashes disagree");
  ens->add_option("--mode", common.mode, "ensemble mode (sets ensemble_mode)");
  report->add_option("--run", runs, "run directories with eval outputs, repeatable")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (eval_cmd->parsed()) return cmd_eval(common, run_dir, partition_file, force);
    const ExperimentConfig cfg = resolve(build_map(common));
    if (gen->parsed()) return cmd_generate(cfg);
    if (train_cmd->parsed()) return cmd_train(cfg, partition_dir, on_the_fly);
    if (attack->parsed()) return cmd_attack(cfg, checkpoint);
    if (sweep->parsed()) return cmd_sweep(cfg, partition_dir, on_the_fly);
    if (ens->parsed()) return cmd_ensemble(cfg, partition_dir, on_the_fly);
    if (report->parsed()) return cmd_report(cfg, runs);
  } catch (const ConfigError& e) {
    std::cerr << "calibrar: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "calibrar: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
