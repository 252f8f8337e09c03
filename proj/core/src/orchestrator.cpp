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

#include "fedsim/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "fedsim/errors.hpp"
#include "fedsim/fusion.hpp"

namespace fedsim {
namespace {

using nlohmann::json;

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

void scale_client(ClientDataset& train, ClientDataset& val, ClientDataset& test) {
  if (train.image || train.n() == 0) return;
  const auto scaler = MinMaxScaler::fit(train.x, all_rows(train.n()));
  train.x = scaler.transform(train.x);
  if (val.n() > 0) val.x = scaler.transform(val.x);
  if (test.n() > 0) test.x = scaler.transform(test.x);
}

ClientDataset empty_like(const ClientDataset& d) {
  ClientDataset e = d;
  e.x = Tensor2(0, d.x.cols());
  e.y.clear();
  e.labelled.clear();
  return e;
}

double test_metric(const ClientModel& model, const ClientDataset& test) {
  const auto rows = test.labelled_rows();
  if (rows.empty()) return std::nan("");
  return evaluate_metric(model, select_rows(test.x, rows), test.targets(rows));
}

std::string fmt(double v, int precision = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

FairnessRecord fairness(std::span<const double> per_client, Task task) {
  FairnessRecord f;
  if (per_client.empty()) return f;
  const auto [lo, hi] = std::minmax_element(per_client.begin(), per_client.end());
  f.min = *lo;
  f.max = *hi;
  f.mean = std::accumulate(per_client.begin(), per_client.end(), 0.0) / static_cast<double>(per_client.size());
  double var = 0.0;
  for (double v : per_client) var += (v - f.mean) * (v - f.mean);
  f.std = std::sqrt(var / static_cast<double>(per_client.size()));
  const auto worst = task == Task::kClassification ? lo : hi;
  f.worst_client = static_cast<std::size_t>(worst - per_client.begin());
  return f;
}

ClientSplits prepare_clients(const RunConfig& cfg, std::uint64_t seed) {
  const std::uint64_t data_seed = cfg.dataset.seed.value_or(seed);
  const auto& p = cfg.partition;
  ClientSplits out;
  std::vector<ClientDataset> clients;

  if (cfg.dataset.kind == DatasetKind::kSyntheticDigits) {
    DigitsSpec spec = cfg.dataset.digits;
    spec.seed = data_seed;
    const auto domains = synth_digits(spec);
    std::vector<std::size_t> domain_of(p.n_clients);
    for (std::size_t i = 0; i < p.n_clients; ++i) {
      domain_of[i] = p.client_domains.empty() ? i % spec.domains : p.client_domains[i];
    }
    clients.resize(p.n_clients);
    for (std::size_t d = 0; d < domains.size(); ++d) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < p.n_clients; ++i) {
        if (domain_of[i] == d) members.push_back(i);
      }
      if (members.empty()) continue;
      PartitionOptions opt;
      opt.n_clients = members.size();
      opt.core_size = 1;
      opt.seed = seed + 7919 * (d + 1);
      auto parts = partition_features(domains[d], opt);
      for (std::size_t m = 0; m < members.size(); ++m) {
        parts[m].client_id = members[m];
        clients[members[m]] = std::move(parts[m]);
      }
    }
    out.task = Task::kClassification;
    out.notes.push_back("digits: " + std::to_string(spec.domains) + " domains, side " + std::to_string(spec.side));
  } else {
    Dataset full;
    if (cfg.dataset.kind == DatasetKind::kSyntheticTabular) {
      TabularSpec spec = cfg.dataset.tabular;
      spec.seed = data_seed;
      full = synth_tabular(spec);
    } else {
      full = load_csv(cfg.dataset.csv_path, load_schema(cfg.dataset.schema_path));
    }
    if (full.bayes_reference) out.notes.push_back("bayes_reference " + fmt(*full.bayes_reference, 4));
    for (const auto& note : full.notes) out.notes.push_back(note);
    PartitionOptions opt;
    opt.n_clients = p.n_clients;
    opt.max_features = p.max_features;
    opt.core_size = p.core_size;
    opt.groups = p.groups;
    opt.seed = seed;
    clients = partition_features(full, opt);
    out.task = full.task;
  }

  std::vector<StatusPlan> plan;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    auto& c = clients[i];
    auto split = split_holdout(c, p.test_fraction, seed + 101 * i + 1);
    ClientDataset train = std::move(split.train);
    ClientDataset val = empty_like(train);
    if (!is_fusion(cfg.method) && p.val_fraction > 0.0) {
      auto inner = split_holdout(train, p.val_fraction, seed + 101 * i + 2);
      train = std::move(inner.train);
      val = std::move(inner.holdout);
    }
    ClientDataset test = std::move(split.holdout);
    scale_client(train, val, test);
    out.train.push_back(std::move(train));
    out.val.push_back(std::move(val));
    out.test.push_back(std::move(test));
    StatusPlan sp;
    sp.labelled_fraction = p.client_labelled_fraction.empty() ? p.labelled_fraction : p.client_labelled_fraction[i];
    plan.push_back(sp);
  }
  out.train = assign_statuses(std::move(out.train), plan, seed);
  return out;
}

ClusterAssignment cluster_for(const RunConfig& cfg, std::uint64_t seed) {
  const auto splits = prepare_clients(cfg, seed);
  std::vector<FeatureSubset> subsets;
  for (const auto& c : splits.train) subsets.push_back(c.features);
  RefineOptions opt = cfg.clustering;
  opt.seed = seed;
  return cluster_clients(subsets, opt);
}

SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed) {
  auto splits = prepare_clients(cfg, seed);
  const std::size_t n = splits.train.size();
  SeedResult out;
  out.seed = seed;
  out.notes = splits.notes;
  for (const auto& c : splits.train) out.client_sizes.push_back(is_fusion(cfg.method) ? c.n() : c.labelled_rows().size());
  RunContext ctx{seed, TraceOptions{cfg.output.dump_params, cfg.output.dump_similarity, true}};

  if (is_fusion(cfg.method)) {
    const std::size_t classes = splits.train[0].num_classes;
    ModelSpec spec = make_spec(splits.train[0].x.cols(), cfg.model.encoder, classes, Task::kClassification);
    spec.latent_activation = cfg.model.options.latent_activation;
    if (!cfg.model.options.default_classifier) spec.classifier_hidden = cfg.model.options.classifier_hidden;
    std::vector<FusionClient> clients;
    for (std::size_t i = 0; i < n; ++i) {
      clients.push_back(make_fusion_client(i, std::move(splits.train[i]), std::move(splits.test[i]), spec, cfg.fusion, seed));
    }
    const FusionMode mode = cfg.method == Method::kFedFusionStar ? FusionMode::kFedFusionStar
                            : cfg.method == Method::kFedFusion   ? FusionMode::kFedFusion
                                                                 : FusionMode::kSupervisedFedAvg;
    auto res = run_fusion(std::move(clients), mode, cfg.fusion, ctx);
    out.client_metric = res.test_metric;
    out.trace = std::move(res.trace);
    for (const auto& note : out.notes) out.trace.add_flag(note);
    return out;
  }

  ModelOptions mo = cfg.model.options;
  if (cfg.method == Method::kFedAvg) mo.shared_init = true;
  ProtocolResult res;
  std::vector<ClientDataset> tests = std::move(splits.test);
  if (cfg.method == Method::kDivenC) {
    std::vector<FeatureSubset> subsets;
    for (const auto& c : splits.train) subsets.push_back(c.features);
    RefineOptions ro = cfg.clustering;
    ro.seed = seed;
    auto assignment = cluster_clients(subsets, ro);
    for (const auto& f : assignment.flags) out.notes.push_back("clustering: " + f);
    auto built = make_clustered_clients(std::move(splits.train), std::move(splits.val), assignment, mo, seed);
    const auto cluster_of = assignment.cluster_of(n);
    for (std::size_t i = 0; i < n; ++i) tests[i] = project_features(tests[i], assignment.overlaps[cluster_of[i]]);
    res = run_diven_c(std::move(built.clients), cfg.diven, assignment, ctx);
    out.clusters = std::move(assignment);
  } else {
    std::vector<SimClient> clients;
    for (std::size_t i = 0; i < n; ++i) {
      clients.push_back(make_sim_client(i, std::move(splits.train[i]), std::move(splits.val[i]), mo, seed));
    }
    switch (cfg.method) {
      case Method::kSingle: res = run_baseline(std::move(clients), BaselineKind::kSingle, cfg.diven, ctx); break;
      case Method::kClassAgg: res = run_baseline(std::move(clients), BaselineKind::kClassAgg, cfg.diven, ctx); break;
      case Method::kFedAvg: res = run_baseline(std::move(clients), BaselineKind::kFedAvg, cfg.diven, ctx); break;
      default: res = run_diven(std::move(clients), cfg.diven, ctx); break;
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.client_metric.push_back(test_metric(res.models[i], tests[i]));
  out.trace = std::move(res.trace);
  for (const auto& note : out.notes) out.trace.add_flag(note);
  out.guard = std::move(res.guard);
  return out;
}

json Report::to_json() const {
  json j;
  j["name"] = name;
  j["method"] = method;
  j["scenario"] = scenario;
  j["metric"] = task == Task::kClassification ? "accuracy_percent" : "mae";
  j["seeds"] = seeds;
  j["mean"] = mean;
  j["per_client"] = per_client;
  j["fairness"] = {{"min", fairness.min}, {"max", fairness.max}, {"mean", fairness.mean},
                   {"std", fairness.std}, {"worst_client", fairness.worst_client}};
  j["per_seed_mean"] = per_seed_mean;
  j["per_seed_client"] = per_seed_client;
  return j;
}

Report make_report(const RunConfig& cfg, const std::vector<SeedResult>& seeds) {
  Report r;
  r.name = cfg.name;
  r.method = to_string(cfg.method);
  r.scenario = cfg.scenario_label();
  r.task = is_fusion(cfg.method) || cfg.dataset.kind == DatasetKind::kSyntheticDigits ? Task::kClassification
           : cfg.dataset.kind == DatasetKind::kSyntheticTabular                      ? cfg.dataset.tabular.task
                                                                                      : Task::kClassification;
  if (seeds.empty()) return r;
  const std::size_t n = seeds.front().client_metric.size();
  r.per_client.assign(n, 0.0);
  for (const auto& s : seeds) {
    r.seeds.push_back(s.seed);
    r.per_seed_client.push_back(s.client_metric);
    r.per_seed_mean.push_back(std::accumulate(s.client_metric.begin(), s.client_metric.end(), 0.0) /
                              static_cast<double>(s.client_metric.size()));
    for (std::size_t i = 0; i < n; ++i) r.per_client[i] += s.client_metric[i];
  }
  for (auto& v : r.per_client) v /= static_cast<double>(seeds.size());
  r.fairness = fairness(r.per_client, r.task);
  r.mean = r.fairness.mean;
  return r;
}

std::string trace_header(const RunConfig& cfg, std::uint64_t seed) {
  json config = to_json(cfg);
  config.erase("output");
  return json({{"type", "header"}, {"seed", seed}, {"method", to_string(cfg.method)}, {"config", config}}).dump();
}

void write_seed_files(const RunConfig& cfg, const SeedResult& seed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string tag = "seed" + std::to_string(seed.seed);
  write_trace_jsonl(dir / ("trace_" + tag + ".jsonl"), seed.trace, trace_header(cfg, seed.seed));
  write_timings_jsonl(dir / ("timing_" + tag + ".jsonl"), seed.trace);
  if (seed.clusters) {
    std::ofstream out(dir / ("clusters_" + tag + ".json"));
    out << clusters_json(*seed.clusters).dump(2) << '\n';
  }
}

void write_report(const Report& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "report.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "report.json").string());
  out << report.to_json().dump(2) << '\n';
}

RunOutput run(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  RunOutput out;
  for (auto seed : cfg.seeds) {
    out.seeds.push_back(run_seed(cfg, seed));
    if (out_dir) write_seed_files(cfg, out.seeds.back(), *out_dir);
  }
  out.report = make_report(cfg, out.seeds);
  if (out_dir) write_report(out.report, *out_dir);
  return out;
}

std::string Comparison::text() const {
  std::size_t first = std::string("method").size();
  for (const auto& m : methods) first = std::max(first, m.size());
  std::vector<std::size_t> widths;
  for (const auto& s : scenarios) widths.push_back(std::max<std::size_t>(s.size(), 8));
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(first)) << "method";
  for (std::size_t c = 0; c < scenarios.size(); ++c) os << "  " << std::right << std::setw(static_cast<int>(widths[c])) << scenarios[c];
  os << '\n';
  for (std::size_t r = 0; r < methods.size(); ++r) {
    os << std::left << std::setw(static_cast<int>(first)) << methods[r];
    for (std::size_t c = 0; c < scenarios.size(); ++c) {
      os << "  " << std::right << std::setw(static_cast<int>(widths[c])) << (cells[r][c] ? fmt(*cells[r][c]) : "-");
    }
    os << '\n';
  }
  return os.str();
}

json Comparison::to_json() const {
  json records = json::array();
  for (std::size_t r = 0; r < methods.size(); ++r) {
    for (std::size_t c = 0; c < scenarios.size(); ++c) {
      if (!cells[r][c]) continue;
      records.push_back({{"method", methods[r]}, {"scenario", scenarios[c]}, {"mean", *cells[r][c]}});
    }
  }
  json reps = json::array();
  for (const auto& rep : reports) reps.push_back(rep.to_json());
  return {{"cells", records}, {"reports", reps}};
}

Comparison compare(const std::vector<RunConfig>& configs) {
  if (configs.empty()) throw ConfigError("compare needs at least one config");
  const json dataset0 = to_json(configs.front())["dataset"];
  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (to_json(configs[i])["dataset"] != dataset0) {
      throw ConfigError("compare: config " + std::to_string(i) + " uses a different dataset");
    }
    if (configs[i].seeds != configs.front().seeds) {
      throw ConfigError("compare: config " + std::to_string(i) + " uses different seeds");
    }
  }
  Comparison cmp;
  std::vector<json> partitions;
  for (const auto& cfg : configs) {
    const std::string method = to_string(cfg.method);
    const std::string scenario = cfg.scenario_label();
    const json partition = to_json(cfg)["partition"];
    auto col = std::find(cmp.scenarios.begin(), cmp.scenarios.end(), scenario);
    if (col == cmp.scenarios.end()) {
      cmp.scenarios.push_back(scenario);
      partitions.push_back(partition);
      for (auto& row : cmp.cells) row.emplace_back();
      col = cmp.scenarios.end() - 1;
    } else if (partitions[static_cast<std::size_t>(col - cmp.scenarios.begin())] != partition) {
      throw ConfigError("compare: scenario '" + scenario + "' is defined by two different partitions");
    }
    auto row = std::find(cmp.methods.begin(), cmp.methods.end(), method);
    if (row == cmp.methods.end()) {
      cmp.methods.push_back(method);
      cmp.cells.emplace_back(cmp.scenarios.size());
      row = cmp.methods.end() - 1;
    }
    auto out = run(cfg);
    cmp.cells[static_cast<std::size_t>(row - cmp.methods.begin())][static_cast<std::size_t>(col - cmp.scenarios.begin())] =
        out.report.mean;
    cmp.reports.push_back(std::move(out.report));
  }
  return cmp;
}

std::string format_clusters(const ClusterAssignment& a) {
  std::ostringstream os;
  os << "clusters: " << a.clusters.size() << " (min_sim " << fmt(a.min_sim) << ")\n";
  auto join = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (auto x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
    return "{" + s + "}";
  };
  for (std::size_t k = 0; k < a.clusters.size(); ++k) {
    os << "  C" << k << ": clients " << join(a.clusters[k]) << "  overlap " << join(a.overlaps[k]) << '\n';
  }
  for (const auto& f : a.flags) os << "  flag: " << f << '\n';
  return os.str();
}

json clusters_json(const ClusterAssignment& a) {
  json clusters = json::array();
  for (std::size_t k = 0; k < a.clusters.size(); ++k) {
    clusters.push_back({{"clients", a.clusters[k]}, {"overlap", a.overlaps[k]}});
  }
  return {{"min_sim", a.min_sim}, {"clusters", clusters}, {"flags", a.flags}};
}

std::vector<double> descent_curve(const SeedResult& seed, std::string_view phase) {
  return round_losses(seed.trace, phase, seed.client_sizes);
}

}  // namespace fedsim
