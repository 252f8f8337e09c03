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

#include "fedsim/config.hpp"

#include <fstream>
#include <set>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

using nlohmann::json;

// Reads keys from one JSON object and rejects any key it was not asked about.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + display() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      read(*it, out);
    } catch (const json::exception&) {
      throw ConfigError("'" + full(key) + "' has the wrong type");
    } catch (const ConfigError& e) {
      throw ConfigError("'" + full(key) + "': " + e.what());
    }
  }

  bool has(const char* key) const {
    auto it = j_.find(key);
    return it != j_.end() && !it->is_null();
  }

  std::optional<Section> sub(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return std::nullopt;
    return Section(*it, full(key));
  }

  const json* raw(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown key '" + full(it.key().c_str()) + "'");
    }
  }

  std::string full(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  static void read(const json& v, std::size_t& out) {
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("expected a nonnegative integer");
    out = v.get<std::size_t>();
  }
  static void read(const json& v, double& out) {
    if (!v.is_number()) throw ConfigError("expected a number");
    out = v.get<double>();
  }
  static void read(const json& v, bool& out) {
    if (!v.is_boolean()) throw ConfigError("expected true or false");
    out = v.get<bool>();
  }
  static void read(const json& v, std::string& out) {
    if (!v.is_string()) throw ConfigError("expected a string");
    out = v.get<std::string>();
  }
  static void read(const json& v, std::filesystem::path& out) {
    if (!v.is_string()) throw ConfigError("expected a path string");
    out = v.get<std::string>();
  }
  template <typename T>
  static void read(const json& v, std::vector<T>& out) {
    if (!v.is_array()) throw ConfigError("expected an array");
    out.clear();
    for (const auto& e : v) {
      T item{};
      read(e, item);
      out.push_back(std::move(item));
    }
  }
  template <typename T>
  static void read(const json& v, std::optional<T>& out) {
    T item{};
    read(v, item);
    out = std::move(item);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

Task parse_task(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "regression") return Task::kRegression;
  throw ConfigError("unknown task '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + s + "'");
}

const char* dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kSyntheticTabular: return "synthetic_tabular";
    case DatasetKind::kSyntheticDigits: return "synthetic_digits";
    case DatasetKind::kCsv: return "csv";
  }
  return "?";
}

void parse_tabular(Section s, TabularSpec& t) {
  s.get("classes", t.n_clusters);
  s.get("features", t.n_features);
  s.get("samples", t.n_samples);
  s.get("latent_dim", t.latent_dim);
  s.get("noise", t.noise);
  s.get("feature_noise", t.feature_noise);
  s.get("separation", t.separation);
  s.get("antipodal", t.antipodal);
  std::string task;
  s.get("task", task);
  if (!task.empty()) {
    try {
      t.task = parse_task(task);
    } catch (const ConfigError& e) {
      throw ConfigError("'" + s.full("task") + "': " + e.what());
    }
  }
  s.get("target_noise", t.target_noise);
  s.finish();
}

void parse_digits(Section s, DigitsSpec& d) {
  s.get("domains", d.domains);
  s.get("side", d.side);
  s.get("samples_per_domain", d.samples_per_domain);
  s.get("classes", d.classes);
  s.get("base_noise", d.base_noise);
  if (const json* arr = s.raw("transforms")) {
    if (!arr->is_array()) throw ConfigError("'" + s.full("transforms") + "' must be an array");
    d.transforms.clear();
    for (std::size_t i = 0; i < arr->size(); ++i) {
      Section t((*arr)[i], s.full("transforms") + "[" + std::to_string(i) + "]");
      DomainTransform tr;
      t.get("invert", tr.invert);
      t.get("brightness", tr.brightness);
      t.get("contrast", tr.contrast);
      t.get("noise", tr.noise);
      t.finish();
      d.transforms.push_back(tr);
    }
  }
  s.finish();
}

}  // namespace

const char* to_string(Method m) {
  switch (m) {
    case Method::kSingle: return "single";
    case Method::kClassAgg: return "class_agg";
    case Method::kFedAvg: return "fedavg";
    case Method::kDiven: return "diven";
    case Method::kDivenMix: return "diven_mix";
    case Method::kDivenC: return "diven_c";
    case Method::kFedFusion: return "fedfusion";
    case Method::kFedFusionStar: return "fedfusion_star";
    case Method::kSupervisedFedAvg: return "supervised_fedavg";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::kSingle, Method::kClassAgg, Method::kFedAvg, Method::kDiven, Method::kDivenMix,
                 Method::kDivenC, Method::kFedFusion, Method::kFedFusionStar, Method::kSupervisedFedAvg}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

bool is_fusion(Method m) {
  return m == Method::kFedFusion || m == Method::kFedFusionStar || m == Method::kSupervisedFedAvg;
}

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  Section root(j, "");
  root.get("name", cfg.name);
  std::string method;
  root.get("method", method);
  if (method.empty()) throw ConfigError("'method' is required");
  try {
    cfg.method = parse_method(method);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("'method': ") + e.what());
  }
  root.get("seeds", cfg.seeds);

  if (auto ds = root.sub("dataset")) {
    std::string kind = "synthetic_tabular";
    ds->get("kind", kind);
    if (kind == "synthetic_tabular") cfg.dataset.kind = DatasetKind::kSyntheticTabular;
    else if (kind == "synthetic_digits") cfg.dataset.kind = DatasetKind::kSyntheticDigits;
    else if (kind == "csv") cfg.dataset.kind = DatasetKind::kCsv;
    else throw ConfigError("'dataset.kind': unknown dataset kind '" + kind + "'");
    ds->get("seed", cfg.dataset.seed);
    if (auto t = ds->sub("tabular")) parse_tabular(*t, cfg.dataset.tabular);
    if (auto d = ds->sub("digits")) {
      parse_digits(*d, cfg.dataset.digits);
    }
    if (auto c = ds->sub("csv")) {
      c->get("path", cfg.dataset.csv_path);
      c->get("schema", cfg.dataset.schema_path);
      c->finish();
    }
    ds->finish();
  } else {
    throw ConfigError("'dataset' section is required");
  }

  if (auto p = root.sub("partition")) {
    auto& pc = cfg.partition;
    p->get("n_clients", pc.n_clients);
    p->get("max_features", pc.max_features);
    p->get("core_size", pc.core_size);
    p->get("groups", pc.groups);
    p->get("test_fraction", pc.test_fraction);
    p->get("val_fraction", pc.val_fraction);
    p->get("labelled_fraction", pc.labelled_fraction);
    p->get("client_labelled_fraction", pc.client_labelled_fraction);
    p->get("client_domains", pc.client_domains);
    p->get("scenario", pc.scenario);
    p->finish();
  }

  if (auto m = root.sub("model")) {
    auto& mo = cfg.model.options;
    m->get("menu", mo.menu);
    m->get("search_budget", mo.search_budget);
    m->get("search_epochs", mo.search_epochs);
    if (m->has("classifier_hidden")) {
      m->get("classifier_hidden", mo.classifier_hidden);
      mo.default_classifier = false;
    } else {
      m->get("classifier_hidden", mo.classifier_hidden);
    }
    std::string act;
    m->get("latent_activation", act);
    if (!act.empty()) {
      try {
        mo.latent_activation = parse_activation(act);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("'model.latent_activation': ") + e.what());
      }
    }
    m->get("shared_init", mo.shared_init);
    m->get("search_lr", mo.lr);
    m->get("encoder", cfg.model.encoder);
    m->finish();
  }

  if (auto d = root.sub("diven")) {
    auto& dc = cfg.diven;
    d->get("rounds", dc.rounds);
    d->get("epochs_init", dc.epochs_init);
    d->get("epochs_low", dc.epochs_low);
    d->get("pull_lambda", dc.lambda);
    d->get("similarity_temperature", dc.similarity_temperature);
    d->get("guard_enabled", dc.guard_enabled);
    d->get("lr", dc.lr);
    d->get("momentum", dc.momentum);
    d->get("batch_size", dc.batch_size);
    d->get("participation_fraction", dc.participation_fraction);
    d->finish();
  }
  cfg.diven.variant = cfg.method == Method::kDivenMix ? DivEnVariant::kDivenMix
                      : cfg.method == Method::kDivenC ? DivEnVariant::kDivenC
                                                      : DivEnVariant::kDiven;

  if (auto f = root.sub("fusion")) {
    auto& fc = cfg.fusion;
    f->get("rounds_step1", fc.rounds_step1);
    f->get("rounds_step2", fc.rounds_step2);
    f->get("local_epochs", fc.local_epochs);
    f->get("pretext_classes", fc.pretext_classes);
    f->get("pretext_weight", fc.pretext_weight);
    f->get("confidence_threshold", fc.confidence_threshold);
    f->get("partial_weight", fc.partial_weight);
    f->get("consistency_weight", fc.consistency_weight);
    f->get("lr", fc.lr);
    f->get("momentum", fc.momentum);
    f->get("batch_size", fc.batch_size);
    f->get("freeze_unlabelled_encoder", fc.freeze_unlabelled_encoder);
    f->get("include_frozen_in_average", fc.include_frozen_in_average);
    if (auto a = f->sub("augment")) {
      std::size_t shift = static_cast<std::size_t>(fc.augment.max_shift);
      a->get("max_shift", shift);
      fc.augment.max_shift = static_cast<int>(shift);
      a->get("dropout_rate", fc.augment.dropout_rate);
      a->get("noise_sigma", fc.augment.noise_sigma);
      a->get("tabular_noise_sigma", fc.augment.tabular_noise_sigma);
      a->finish();
    }
    f->finish();
  }

  if (auto c = root.sub("clustering")) {
    c->get("min_sim", cfg.clustering.min_sim);
    c->get("max_size", cfg.clustering.max_size);
    c->get("max_k", cfg.clustering.max_k);
    c->finish();
  }

  if (auto o = root.sub("output")) {
    o->get("dir", cfg.output.dir);
    o->get("dump_params", cfg.output.dump_params);
    o->get("dump_similarity", cfg.output.dump_similarity);
    o->finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  auto cfg = parse_config(j);
  // Relative dataset paths resolve against the config file's directory.
  const auto base = path.parent_path();
  if (!cfg.dataset.csv_path.empty() && cfg.dataset.csv_path.is_relative()) cfg.dataset.csv_path = base / cfg.dataset.csv_path;
  if (!cfg.dataset.schema_path.empty() && cfg.dataset.schema_path.is_relative()) {
    cfg.dataset.schema_path = base / cfg.dataset.schema_path;
  }
  return cfg;
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("'seeds' must list at least one seed");
  const auto& p = partition;
  if (p.n_clients < 1) throw ConfigError("'partition.n_clients' must be at least 1");
  if (!(p.test_fraction > 0.0 && p.test_fraction < 1.0)) throw ConfigError("'partition.test_fraction' must be in (0, 1)");
  if (!(p.val_fraction >= 0.0 && p.val_fraction < 1.0)) throw ConfigError("'partition.val_fraction' must be in [0, 1)");
  if (!(p.labelled_fraction >= 0.0 && p.labelled_fraction <= 1.0)) {
    throw ConfigError("'partition.labelled_fraction' must be in [0, 1]");
  }
  if (!p.client_labelled_fraction.empty() && p.client_labelled_fraction.size() != p.n_clients) {
    throw ConfigError("'partition.client_labelled_fraction' needs one entry per client");
  }
  for (double f : p.client_labelled_fraction) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("'partition.client_labelled_fraction' entries must be in [0, 1]");
  }

  switch (dataset.kind) {
    case DatasetKind::kSyntheticTabular: {
      const auto& t = dataset.tabular;
      if (t.task == Task::kClassification && t.n_clusters < 2) throw ConfigError("'dataset.tabular.classes' must be at least 2");
      if (t.n_features < 1) throw ConfigError("'dataset.tabular.features' must be positive");
      if (t.latent_dim < 1) throw ConfigError("'dataset.tabular.latent_dim' must be positive");
      if (t.n_samples < 2 * p.n_clients) throw ConfigError("'dataset.tabular.samples' is too small for the client count");
      if (!(t.noise >= 0.0)) throw ConfigError("'dataset.tabular.noise' must be nonnegative");
      break;
    }
    case DatasetKind::kSyntheticDigits: {
      const auto& d = dataset.digits;
      if (d.side < 8) throw ConfigError("'dataset.digits.side' must be at least 8");
      if (d.classes < 2 || d.classes > 10) throw ConfigError("'dataset.digits.classes' must be in [2, 10]");
      if (d.domains < 1) throw ConfigError("'dataset.digits.domains' must be positive");
      if (!p.client_domains.empty() && p.client_domains.size() != p.n_clients) {
        throw ConfigError("'partition.client_domains' needs one entry per client");
      }
      for (auto dom : p.client_domains) {
        if (dom >= d.domains) throw ConfigError("'partition.client_domains' refers to a missing domain");
      }
      if (p.max_features != 0) throw ConfigError("'partition.max_features' does not apply to image data");
      break;
    }
    case DatasetKind::kCsv:
      if (dataset.csv_path.empty()) throw ConfigError("'dataset.csv.path' is required for csv datasets");
      if (dataset.schema_path.empty()) throw ConfigError("'dataset.csv.schema' is required for csv datasets");
      break;
  }

  if (is_fusion(method)) {
    const bool classification = dataset.kind == DatasetKind::kSyntheticDigits ||
                                (dataset.kind == DatasetKind::kSyntheticTabular && dataset.tabular.task == Task::kClassification);
    if (dataset.kind != DatasetKind::kCsv && !classification) {
      throw ConfigError("'method': " + std::string(to_string(method)) + " needs a classification task");
    }
    if (model.encoder.empty()) throw ConfigError("'model.encoder' must list at least one width");
    for (auto w : model.encoder) {
      if (w == 0) throw ConfigError("'model.encoder' widths must be positive");
    }
    fusion.validate();
  } else {
    if (model.options.menu.empty()) throw ConfigError("'model.menu' must list at least one encoder shape");
    for (const auto& shape : model.options.menu) {
      if (shape.empty()) throw ConfigError("'model.menu' entries must be nonempty");
      for (auto w : shape) {
        if (w == 0) throw ConfigError("'model.menu' widths must be positive");
      }
    }
    diven.validate();
    if (method == Method::kDivenC && !(clustering.min_sim > 0.0 && clustering.min_sim <= 1.0)) {
      throw ConfigError("'clustering.min_sim' must be in (0, 1]");
    }
  }
}

std::string RunConfig::scenario_label() const {
  if (!partition.scenario.empty()) return partition.scenario;
  if (partition.max_features != 0) return std::to_string(partition.max_features) + "-features";
  return "all-features";
}

json to_json(const RunConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["method"] = to_string(cfg.method);
  j["seeds"] = cfg.seeds;
  json ds = {{"kind", dataset_kind_name(cfg.dataset.kind)}};
  if (cfg.dataset.seed) ds["seed"] = *cfg.dataset.seed;
  const auto& t = cfg.dataset.tabular;
  const auto& d = cfg.dataset.digits;
  switch (cfg.dataset.kind) {
    case DatasetKind::kSyntheticTabular:
      ds["tabular"] = {{"classes", t.n_clusters}, {"features", t.n_features}, {"samples", t.n_samples},
                       {"latent_dim", t.latent_dim}, {"noise", t.noise}, {"feature_noise", t.feature_noise},
                       {"separation", t.separation}, {"antipodal", t.antipodal}, {"task", to_string(t.task)},
                       {"target_noise", t.target_noise}};
      break;
    case DatasetKind::kSyntheticDigits:
      ds["digits"] = {{"domains", d.domains}, {"side", d.side}, {"samples_per_domain", d.samples_per_domain},
                      {"classes", d.classes}, {"base_noise", d.base_noise}};
      break;
    case DatasetKind::kCsv:
      ds["csv"] = {{"path", cfg.dataset.csv_path.string()}, {"schema", cfg.dataset.schema_path.string()}};
      break;
  }
  j["dataset"] = ds;
  const auto& p = cfg.partition;
  j["partition"] = {{"n_clients", p.n_clients}, {"max_features", p.max_features}, {"core_size", p.core_size},
                    {"groups", p.groups}, {"test_fraction", p.test_fraction}, {"val_fraction", p.val_fraction},
                    {"labelled_fraction", p.labelled_fraction},
                    {"client_labelled_fraction", p.client_labelled_fraction},
                    {"client_domains", p.client_domains}, {"scenario", cfg.scenario_label()}};
  const auto& mo = cfg.model.options;
  j["model"] = {{"menu", mo.menu}, {"search_budget", mo.search_budget}, {"search_epochs", mo.search_epochs},
                {"latent_activation", mo.latent_activation == Activation::kRelu ? "relu" : "identity"},
                {"shared_init", mo.shared_init}, {"search_lr", mo.lr}, {"encoder", cfg.model.encoder}};
  if (!mo.default_classifier) j["model"]["classifier_hidden"] = mo.classifier_hidden;
  const auto& dc = cfg.diven;
  j["diven"] = {{"rounds", dc.rounds}, {"epochs_init", dc.epochs_init}, {"epochs_low", dc.epochs_low},
                {"pull_lambda", dc.lambda}, {"similarity_temperature", dc.similarity_temperature},
                {"guard_enabled", dc.guard_enabled}, {"lr", dc.lr}, {"momentum", dc.momentum},
                {"batch_size", dc.batch_size}, {"participation_fraction", dc.participation_fraction}};
  const auto& fc = cfg.fusion;
  j["fusion"] = {{"rounds_step1", fc.rounds_step1}, {"rounds_step2", fc.rounds_step2},
                 {"local_epochs", fc.local_epochs}, {"pretext_classes", fc.pretext_classes},
                 {"pretext_weight", fc.pretext_weight}, {"confidence_threshold", fc.confidence_threshold},
                 {"partial_weight", fc.partial_weight}, {"consistency_weight", fc.consistency_weight},
                 {"lr", fc.lr}, {"momentum", fc.momentum}, {"batch_size", fc.batch_size},
                 {"freeze_unlabelled_encoder", fc.freeze_unlabelled_encoder},
                 {"include_frozen_in_average", fc.include_frozen_in_average},
                 {"augment",
                  {{"max_shift", fc.augment.max_shift}, {"dropout_rate", fc.augment.dropout_rate},
                   {"noise_sigma", fc.augment.noise_sigma}, {"tabular_noise_sigma", fc.augment.tabular_noise_sigma}}}};
  j["clustering"] = {{"min_sim", cfg.clustering.min_sim}, {"max_size", cfg.clustering.max_size},
                     {"max_k", cfg.clustering.max_k}};
  j["output"] = {{"dir", cfg.output.dir.string()}, {"dump_params", cfg.output.dump_params},
                 {"dump_similarity", cfg.output.dump_similarity}};
  return j;
}

}  // namespace fedsim
