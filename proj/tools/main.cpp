/*
 * Copyright 2026 The fedsim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/config.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/orchestrator.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  bool dump_params = false;
  bool dump_similarity = false;
  std::optional<std::string> out;
};

fedsim::RunConfig load(const std::string& path, const Overrides& o) {
  auto cfg = fedsim::load_config(path);
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.dump_params) cfg.output.dump_params = true;
  if (o.dump_similarity) cfg.output.dump_similarity = true;
  if (o.out) cfg.output.dir = *o.out;
  return cfg;
}

void print_report(const fedsim::Report& r) {
  std::cout << r.method << " [" << r.scenario << "] mean " << r.mean << " over " << r.seeds.size() << " seed(s)\n";
  std::cout << "  per client:";
  for (double v : r.per_client) std::cout << ' ' << v;
  std::cout << "\n  fairness: min " << r.fairness.min << ", max " << r.fairness.max << ", std " << r.fairness.std
            << ", worst client " << r.fairness.worst_client << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedsim: deterministic federated-learning simulator"};
  app.require_subcommand(1);
  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Run a single seed instead of the configured list");
    sub->add_flag("--dump-params", o.dump_params, "Write per-round parameter snapshots into the trace");
    sub->add_flag("--dump-similarity", o.dump_similarity, "Write per-round similarity and weight matrices");
    sub->add_option("--out", o.out, "Output directory");
  };

  std::string config_path;
  std::vector<std::string> config_paths;
  auto* run_cmd = app.add_subcommand("run", "Run one configuration");
  run_cmd->add_option("config", config_path, "Run configuration (JSON)")->required();
  add_common(run_cmd);
  auto* compare_cmd = app.add_subcommand("compare", "Run several configurations and tabulate their means");
  compare_cmd->add_option("configs", config_paths, "Run configurations (JSON)")->required();
  add_common(compare_cmd);
  auto* cluster_cmd = app.add_subcommand("cluster", "Print the feature-space client clustering");
  cluster_cmd->add_option("config", config_path, "Run configuration (JSON)")->required();
  add_common(cluster_cmd);
  auto* validate_cmd = app.add_subcommand("validate", "Check a configuration without running it");
  validate_cmd->add_option("config", config_path, "Run configuration (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (validate_cmd->parsed()) {
      const auto cfg = fedsim::load_config(config_path);
      std::cout << "ok: " << fedsim::to_string(cfg.method) << ", " << cfg.partition.n_clients << " clients, "
                << cfg.seeds.size() << " seed(s)\n";
      return kOk;
    }
    if (run_cmd->parsed()) {
      const auto cfg = load(config_path, o);
      const auto out = fedsim::run(cfg, cfg.output.dir);
      print_report(out.report);
      std::cout << "wrote " << cfg.output.dir.string() << '\n';
      return kOk;
    }
    if (cluster_cmd->parsed()) {
      const auto cfg = load(config_path, o);
      const auto seed = cfg.seeds.front();
      const auto a = fedsim::cluster_for(cfg, seed);
      std::cout << fedsim::format_clusters(a);
      if (o.out) {
        std::filesystem::create_directories(*o.out);
        std::ofstream(std::filesystem::path(*o.out) / "clusters.json") << fedsim::clusters_json(a).dump(2) << '\n';
      }
      return kOk;
    }
    if (compare_cmd->parsed()) {
      std::vector<fedsim::RunConfig> cfgs;
      for (const auto& p : config_paths) cfgs.push_back(load(p, o));
      const auto cmp = fedsim::compare(cfgs);
      std::cout << cmp.text();
      if (o.out) {
        std::filesystem::create_directories(*o.out);
        std::ofstream(std::filesystem::path(*o.out) / "comparison.json") << cmp.to_json().dump(2) << '\n';
      }
      return kOk;
    }
  } catch (const fedsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
