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

#include "fedsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fedsim/errors.hpp"

namespace fedsim {

const char* to_string(ClientStatus status) {
  switch (status) {
    case ClientStatus::kFullyLabelled: return "fully_labelled";
    case ClientStatus::kPartiallyLabelled: return "partially_labelled";
    case ClientStatus::kFullyUnlabelled: return "fully_unlabelled";
  }
  return "unknown";
}

const char* to_string(Task task) {
  return task == Task::kClassification ? "classification" : "regression";
}

// ---------------------------------------------------------------------------
// FeatureSubset / ClientDataset

FeatureSubset FeatureSubset::from_indices(std::vector<std::size_t> indices, std::size_t universe) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  if (indices.empty()) throw ConfigError("feature subset must be nonempty");
  if (indices.back() >= universe) {
    throw ConfigError("feature id " + std::to_string(indices.back()) + " outside universe of " +
                      std::to_string(universe));
  }
  return FeatureSubset{std::move(indices), universe};
}

FeatureSubset FeatureSubset::all(std::size_t universe) {
  std::vector<std::size_t> idx(universe);
  std::iota(idx.begin(), idx.end(), 0);
  return from_indices(std::move(idx), universe);
}

std::vector<std::uint8_t> FeatureSubset::binary_row() const {
  std::vector<std::uint8_t> row(universe, 0);
  for (auto i : indices) row[i] = 1;
  return row;
}

bool FeatureSubset::contains(std::size_t feature) const {
  return std::binary_search(indices.begin(), indices.end(), feature);
}

std::vector<std::size_t> ClientDataset::labelled_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < labelled.size(); ++r) {
    if (labelled[r]) rows.push_back(r);
  }
  return rows;
}

std::vector<std::size_t> ClientDataset::unlabelled_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < labelled.size(); ++r) {
    if (!labelled[r]) rows.push_back(r);
  }
  return rows;
}

Tensor2 ClientDataset::targets(const std::vector<std::size_t>& rows) const {
  Tensor2 t(rows.size(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= labelled.size() || !labelled[rows[i]]) {
      throw DataError("client " + std::to_string(client_id) + ": row " + std::to_string(rows[i]) +
                      " has no label");
    }
    t(i, 0) = y[rows[i]];
  }
  return t;
}

void ClientDataset::validate() const {
  if (labelled.size() != x.rows()) {
    throw ConfigError("client " + std::to_string(client_id) + ": labelled mask length mismatch");
  }
  if (x.cols() != features.size() && !image) {
    throw ConfigError("client " + std::to_string(client_id) + ": column count " +
                      std::to_string(x.cols()) + " != feature subset size " +
                      std::to_string(features.size()));
  }
  const auto n_lab = static_cast<std::size_t>(std::count(labelled.begin(), labelled.end(), 1));
  const bool any_labels = n_lab > 0;
  if (any_labels && y.size() != x.rows()) {
    throw ConfigError("client " + std::to_string(client_id) + ": label vector length mismatch");
  }
  switch (status) {
    case ClientStatus::kFullyLabelled:
      if (n_lab != x.rows()) throw ConfigError("fully_labelled client with unlabelled rows");
      break;
    case ClientStatus::kFullyUnlabelled:
      if (n_lab != 0) throw ConfigError("fully_unlabelled client with labelled rows");
      break;
    case ClientStatus::kPartiallyLabelled:
      if (n_lab == 0 || n_lab == x.rows()) {
        throw ConfigError("partially_labelled client needs both labelled and unlabelled rows");
      }
      break;
  }
}

ClientDataset subset_rows(const ClientDataset& d, const std::vector<std::size_t>& rows) {
  ClientDataset out = d;
  out.x = select_rows(d.x, rows);
  out.labelled.clear();
  out.y.clear();
  for (auto r : rows) {
    out.labelled.push_back(d.labelled[r]);
    if (!d.y.empty()) out.y.push_back(d.y[r]);
  }
  return out;
}

ClientDataset project_features(const ClientDataset& d, const std::vector<std::size_t>& keep) {
  std::vector<std::size_t> cols;
  for (auto f : keep) {
    auto it = std::lower_bound(d.features.indices.begin(), d.features.indices.end(), f);
    if (it == d.features.indices.end() || *it != f) {
      throw ConfigError("client " + std::to_string(d.client_id) + " does not hold feature " +
                        std::to_string(f));
    }
    cols.push_back(static_cast<std::size_t>(it - d.features.indices.begin()));
  }
  ClientDataset out = d;
  out.x = select_cols(d.x, cols);
  out.features = FeatureSubset::from_indices(keep, d.features.universe);
  return out;
}

HoldoutSplit split_holdout(const ClientDataset& d, double holdout_fraction, std::uint64_t seed) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout fraction must be in [0, 1)");
  }
  // Group rows by label (classification) so both parts keep the class mix.
  std::map<long long, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < d.n(); ++r) {
    long long key = -1;
    if (d.task == Task::kClassification && r < d.labelled.size() && d.labelled[r]) {
      key = static_cast<long long>(d.y[r]);
    }
    groups[key].push_back(r);
  }
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> hold_rows;
  for (auto& [key, rows] : groups) {
    auto rng = make_rng(seed, Stream::kSplit, {d.client_id, static_cast<std::uint64_t>(key + 1)});
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto take = static_cast<std::size_t>(
        std::llround(holdout_fraction * static_cast<double>(rows.size())));
    hold_rows.insert(hold_rows.end(), rows.begin(), rows.begin() + static_cast<long>(take));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<long>(take), rows.end());
  }
  if (holdout_fraction > 0.0 && d.n() >= 2) {
    if (hold_rows.empty()) {
      hold_rows.push_back(train_rows.back());
      train_rows.pop_back();
    } else if (train_rows.empty()) {
      train_rows.push_back(hold_rows.back());
      hold_rows.pop_back();
    }
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(hold_rows.begin(), hold_rows.end());
  return {subset_rows(d, train_rows), subset_rows(d, hold_rows)};
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  cells.push_back(cell);
  for (auto& c : cells) {
    const auto first = c.find_first_not_of(" \t");
    const auto last = c.find_last_not_of(" \t");
    c = first == std::string::npos ? std::string() : c.substr(first, last - first + 1);
  }
  return cells;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "?";
}

std::optional<double> parse_number(const std::string& cell) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

CsvSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("schema " + path.string() + ": " + e.what());
  }
  CsvSchema schema;
  if (!j.contains("target")) throw ConfigError("schema: missing key 'target'");
  schema.target = j.at("target").get<std::string>();
  const auto task = j.value("task", std::string("classification"));
  if (task == "classification") {
    schema.task = Task::kClassification;
  } else if (task == "regression") {
    schema.task = Task::kRegression;
  } else {
    throw ConfigError("schema: unknown task '" + task + "'");
  }
  for (const auto& c : j.value("columns", nlohmann::json::array())) {
    ColumnSchema col;
    col.name = c.at("name").get<std::string>();
    const auto type = c.value("type", std::string("numeric"));
    if (type == "categorical") {
      col.type = ColumnSchema::Type::kCategorical;
    } else if (type != "numeric") {
      throw ConfigError("schema: column '" + col.name + "' has unknown type '" + type + "'");
    }
    const auto enc = c.value("encoding", std::string("onehot"));
    if (enc == "ordinal") {
      col.encoding = ColumnSchema::Encoding::kOrdinal;
    } else if (enc != "onehot") {
      throw ConfigError("schema: column '" + col.name + "' has unknown encoding '" + enc + "'");
    }
    col.categories = c.value("categories", std::vector<std::string>{});
    schema.columns.push_back(std::move(col));
  }
  schema.ignore = j.value("ignore", std::vector<std::string>{});
  schema.target_classes = j.value("target_classes", std::vector<std::string>{});
  return schema;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  const auto header = split_csv_line(line);
  auto column_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(path.string() + ": unknown column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t target_col = column_of(schema.target);
  for (const auto& c : schema.columns) column_of(c.name);
  for (const auto& c : schema.ignore) column_of(c);

  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    }
    rows.push_back(std::move(cells));
    line_numbers.push_back(line_no);
  }

  Dataset ds;
  ds.task = schema.task;

  // Drop rows with a missing target.
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (is_missing(rows[r][target_col])) {
      ++ds.dropped_rows;
    } else {
      kept.push_back(r);
    }
  }
  if (ds.dropped_rows > 0) {
    ds.notes.push_back("dropped " + std::to_string(ds.dropped_rows) + " rows with missing target");
  }

  // Column plans, in header order.
  struct Plan {
    std::size_t col;
    const ColumnSchema* schema;
    std::vector<std::string> categories;
  };
  std::vector<Plan> plans;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == target_col) continue;
    if (std::find(schema.ignore.begin(), schema.ignore.end(), header[c]) != schema.ignore.end()) continue;
    const ColumnSchema* cs = nullptr;
    for (const auto& s : schema.columns) {
      if (s.name == header[c]) cs = &s;
    }
    Plan p{c, cs, {}};
    if (cs != nullptr && cs->type == ColumnSchema::Type::kCategorical) {
      if (!cs->categories.empty()) {
        p.categories = cs->categories;
      } else {
        std::set<std::string> seen;
        for (auto r : kept) seen.insert(rows[r][c]);
        p.categories.assign(seen.begin(), seen.end());
      }
    }
    plans.push_back(std::move(p));
  }
  for (const auto& p : plans) {
    if (p.schema != nullptr && p.schema->type == ColumnSchema::Type::kCategorical &&
        p.schema->encoding == ColumnSchema::Encoding::kOneHot) {
      for (const auto& cat : p.categories) ds.feature_names.push_back(header[p.col] + "=" + cat);
    } else {
      ds.feature_names.push_back(header[p.col]);
    }
  }

  // Target encoding.
  std::vector<std::string> classes = schema.target_classes;
  if (schema.task == Task::kClassification && classes.empty()) {
    std::set<std::string> seen;
    bool all_numeric = true;
    for (auto r : kept) {
      seen.insert(rows[r][target_col]);
      all_numeric = all_numeric && parse_number(rows[r][target_col]).has_value();
    }
    classes.assign(seen.begin(), seen.end());
    if (all_numeric) {
      std::sort(classes.begin(), classes.end(), [](const std::string& a, const std::string& b) {
        return *parse_number(a) < *parse_number(b);
      });
    }
  }
  ds.num_classes = schema.task == Task::kClassification ? classes.size() : 0;

  ds.x = Tensor2(kept.size(), ds.feature_names.size());
  ds.y.resize(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& cells = rows[kept[i]];
    const auto where = [&](std::size_t col) {
      return path.string() + ": line " + std::to_string(line_numbers[kept[i]]) + ", column '" +
             header[col] + "'";
    };
    std::size_t out_col = 0;
    for (const auto& p : plans) {
      const auto& cell = cells[p.col];
      if (p.schema != nullptr && p.schema->type == ColumnSchema::Type::kCategorical) {
        auto it = std::find(p.categories.begin(), p.categories.end(), cell);
        if (it == p.categories.end()) throw DataError(where(p.col) + ": unknown category '" + cell + "'");
        const auto idx = static_cast<std::size_t>(it - p.categories.begin());
        if (p.schema->encoding == ColumnSchema::Encoding::kOneHot) {
          ds.x(i, out_col + idx) = 1.0;
          out_col += p.categories.size();
        } else {
          ds.x(i, out_col++) = static_cast<double>(idx);
        }
      } else {
        auto v = parse_number(cell);
        if (!v) throw DataError(where(p.col) + ": cannot parse '" + cell + "' as a number");
        ds.x(i, out_col++) = *v;
      }
    }
    const auto& tcell = cells[target_col];
    if (schema.task == Task::kClassification) {
      auto it = std::find(classes.begin(), classes.end(), tcell);
      if (it == classes.end()) throw DataError(where(target_col) + ": unknown class '" + tcell + "'");
      ds.y[i] = static_cast<double>(it - classes.begin());
    } else {
      auto v = parse_number(tcell);
      if (!v) throw DataError(where(target_col) + ": cannot parse '" + tcell + "' as a number");
      ds.y[i] = *v;
    }
  }
  return ds;
}

MinMaxScaler MinMaxScaler::fit(const Tensor2& x, const std::vector<std::size_t>& rows) {
  MinMaxScaler s;
  s.mins.assign(x.cols(), 0.0);
  s.ranges.assign(x.cols(), 0.0);
  if (rows.empty()) throw DataError("cannot fit a scaler on zero rows");
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double lo = x(rows.front(), c);
    double hi = lo;
    for (auto r : rows) {
      lo = std::min(lo, x(r, c));
      hi = std::max(hi, x(r, c));
    }
    s.mins[c] = lo;
    s.ranges[c] = hi - lo;
    if (!(hi - lo > 0.0)) s.constant_columns.push_back(c);
  }
  return s;
}

Tensor2 MinMaxScaler::transform(const Tensor2& x) const {
  if (x.cols() != mins.size()) throw DimensionError("scaler fitted on a different column count");
  Tensor2 out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = ranges[c] > 0.0 ? (row[c] - mins[c]) / ranges[c] : 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning

std::vector<std::vector<std::size_t>> partition_rows(const Dataset& full, std::size_t n_clients,
                                                     std::uint64_t seed) {
  if (n_clients == 0) throw ConfigError("partition: n_clients must be positive");
  std::map<long long, std::vector<std::size_t>> by_class;
  for (std::size_t r = 0; r < full.n(); ++r) {
    const long long key =
        full.task == Task::kClassification ? static_cast<long long>(full.y[r]) : 0;
    by_class[key].push_back(r);
  }
  std::vector<std::vector<std::size_t>> out(n_clients);
  std::size_t dealt = 0;
  for (auto& [key, rows] : by_class) {
    auto rng = make_rng(seed, Stream::kPartition, {static_cast<std::uint64_t>(key + 1)});
    std::shuffle(rows.begin(), rows.end(), rng);
    for (auto r : rows) out[dealt++ % n_clients].push_back(r);
  }
  for (auto& rows : out) std::sort(rows.begin(), rows.end());
  return out;
}

std::vector<ClientDataset> partition_features(const Dataset& full, const PartitionOptions& options) {
  const std::size_t n_features = full.x.cols();
  const std::size_t max_features = options.max_features == 0 ? n_features : options.max_features;
  if (options.n_clients == 0) throw ConfigError("partition.clients must be positive");
  if (max_features > n_features) {
    throw ConfigError("partition.max_features " + std::to_string(max_features) + " exceeds " +
                      std::to_string(n_features) + " available features");
  }
  if (options.core_size == 0 || options.core_size > max_features) {
    throw ConfigError("partition.core_size must be in [1, max_features]");
  }
  if (full.n() < options.n_clients) {
    throw ConfigError("partition: fewer rows than clients");
  }

  std::vector<std::size_t> order(n_features);
  std::iota(order.begin(), order.end(), 0);
  {
    auto rng = make_rng(options.seed, Stream::kPartition, {1000});
    std::shuffle(order.begin(), order.end(), rng);
  }
  const std::vector<std::size_t> core(order.begin(), order.begin() + static_cast<long>(options.core_size));
  const std::vector<std::size_t> rest(order.begin() + static_cast<long>(options.core_size), order.end());

  auto draw_subset = [&](std::uint64_t key) {
    std::vector<std::size_t> pool = rest;
    auto rng = make_rng(options.seed, Stream::kPartition, {2000 + key});
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::size_t> idx = core;
    idx.insert(idx.end(), pool.begin(), pool.begin() + static_cast<long>(max_features - options.core_size));
    return FeatureSubset::from_indices(std::move(idx), n_features);
  };

  std::vector<FeatureSubset> subsets;
  if (options.groups > 0) {
    std::vector<FeatureSubset> group_sets;
    for (std::size_t g = 0; g < options.groups; ++g) group_sets.push_back(draw_subset(g));
    for (std::size_t i = 0; i < options.n_clients; ++i) {
      subsets.push_back(group_sets[i * options.groups / options.n_clients]);
    }
  } else {
    for (std::size_t i = 0; i < options.n_clients; ++i) subsets.push_back(draw_subset(i));
  }

  const auto rows = partition_rows(full, options.n_clients, options.seed);
  std::vector<ClientDataset> clients;
  for (std::size_t i = 0; i < options.n_clients; ++i) {
    ClientDataset c;
    c.client_id = i;
    c.x = select_cols(select_rows(full.x, rows[i]), subsets[i].indices);
    for (auto r : rows[i]) c.y.push_back(full.y[r]);
    c.labelled.assign(rows[i].size(), 1);
    c.features = subsets[i];
    c.status = ClientStatus::kFullyLabelled;
    c.task = full.task;
    c.num_classes = full.num_classes;
    c.image = full.image;
    clients.push_back(std::move(c));
  }
  return clients;
}

std::vector<ClientDataset> assign_statuses(std::vector<ClientDataset> clients,
                                           const std::vector<StatusPlan>& plan, std::uint64_t seed) {
  if (plan.size() != clients.size()) {
    throw ConfigError("status plan has " + std::to_string(plan.size()) + " entries for " +
                      std::to_string(clients.size()) + " clients");
  }
  for (std::size_t i = 0; i < clients.size(); ++i) {
    auto& c = clients[i];
    const double f = plan[i].labelled_fraction;
    if (f < 0.0 || f > 1.0) throw ConfigError("labelled_fraction must be in [0, 1]");
    ClientStatus derived = f >= 1.0 ? ClientStatus::kFullyLabelled
                           : f <= 0.0 ? ClientStatus::kFullyUnlabelled
                                      : ClientStatus::kPartiallyLabelled;
    if (plan[i].status && *plan[i].status != derived) {
      throw ConfigError("client " + std::to_string(c.client_id) + ": status " +
                        to_string(*plan[i].status) + " inconsistent with labelled_fraction " +
                        std::to_string(f));
    }
    if (c.y.size() != c.n() && f > 0.0) {
      throw ConfigError("client " + std::to_string(c.client_id) + " has no labels to keep");
    }
    std::map<long long, std::vector<std::size_t>> groups;
    for (std::size_t r = 0; r < c.n(); ++r) {
      const long long key = c.task == Task::kClassification && !c.y.empty()
                                ? static_cast<long long>(c.y[r]) : 0;
      groups[key].push_back(r);
    }
    c.labelled.assign(c.n(), 0);
    for (auto& [key, rows] : groups) {
      auto rng = make_rng(seed, Stream::kStatus, {c.client_id, static_cast<std::uint64_t>(key + 1)});
      std::shuffle(rows.begin(), rows.end(), rng);
      const auto take = static_cast<std::size_t>(std::llround(f * static_cast<double>(rows.size())));
      for (std::size_t k = 0; k < take && k < rows.size(); ++k) c.labelled[rows[k]] = 1;
    }
    c.status = derived;
    if (derived == ClientStatus::kFullyUnlabelled) {
      c.y.clear();
    } else {
      for (std::size_t r = 0; r < c.n(); ++r) {
        if (!c.labelled[r]) c.y[r] = std::numeric_limits<double>::quiet_NaN();
      }
    }
    c.validate();
  }
  return clients;
}

// ---------------------------------------------------------------------------
// Synthetic tabular data

namespace {

struct TabularModel {
  Eigen::MatrixXd map;                    // n_features × latent_dim
  std::vector<Eigen::VectorXd> means;     // latent space
  Eigen::VectorXd regression_weights;
};

TabularModel make_tabular_model(const TabularSpec& spec) {
  if (spec.latent_dim == 0 || spec.n_features == 0) throw ConfigError("synth_tabular: empty dimensions");
  if (spec.task == Task::kClassification && spec.n_clusters < 2) {
    throw ConfigError("synth_tabular: need at least two clusters");
  }
  auto rng = make_rng(spec.seed, Stream::kGenerator, {1});
  std::normal_distribution<double> normal(0.0, 1.0);
  TabularModel m;
  m.map = Eigen::MatrixXd(spec.n_features, spec.latent_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  for (Eigen::Index r = 0; r < m.map.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.map.cols(); ++c) m.map(r, c) = normal(rng) * scale;
  }
  const std::size_t k = std::max<std::size_t>(spec.n_clusters, 1);
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd mu(spec.latent_dim);
    if (spec.antipodal && c == 1) {
      mu = -m.means[0];
    } else {
      for (Eigen::Index d = 0; d < mu.size(); ++d) mu(d) = normal(rng);
      mu *= spec.separation / std::max(mu.norm(), 1e-12);
    }
    m.means.push_back(mu);
  }
  m.regression_weights = Eigen::VectorXd(spec.latent_dim);
  for (Eigen::Index d = 0; d < m.regression_weights.size(); ++d) m.regression_weights(d) = normal(rng);
  return m;
}

struct TabularDraw {
  Eigen::VectorXd z;
  Eigen::VectorXd x;
};

TabularDraw draw_tabular(const TabularSpec& spec, const TabularModel& m, std::size_t cls, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z = m.means[cls];
  for (Eigen::Index d = 0; d < z.size(); ++d) z(d) += spec.noise * normal(rng);
  Eigen::VectorXd x = m.map * z;
  if (spec.feature_noise > 0.0) {
    for (Eigen::Index f = 0; f < x.size(); ++f) x(f) += spec.feature_noise * normal(rng);
  }
  return {std::move(z), std::move(x)};
}

}  // namespace

TabularGenerative tabular_generative(const TabularSpec& spec) {
  const auto m = make_tabular_model(spec);
  TabularGenerative g;
  for (const auto& mu : m.means) {
    Eigen::VectorXd fm = m.map * mu;
    g.class_means.emplace_back(fm.data(), fm.data() + fm.size());
  }
  const auto nf = static_cast<Eigen::Index>(spec.n_features);
  Eigen::MatrixXd cov = spec.noise * spec.noise * m.map * m.map.transpose() +
                        spec.feature_noise * spec.feature_noise * Eigen::MatrixXd::Identity(nf, nf);
  Eigen::MatrixXd prec = cov.completeOrthogonalDecomposition().pseudoInverse();
  for (Eigen::Index r = 0; r < nf; ++r) {
    g.precision.emplace_back(nf);
    for (Eigen::Index c = 0; c < nf; ++c) g.precision.back()[static_cast<std::size_t>(c)] = prec(r, c);
  }
  return g;
}

Dataset synth_tabular(const TabularSpec& spec) {
  const auto m = make_tabular_model(spec);
  Dataset ds;
  ds.task = spec.task;
  ds.num_classes = spec.task == Task::kClassification ? spec.n_clusters : 0;
  ds.x = Tensor2(spec.n_samples, spec.n_features);
  ds.y.resize(spec.n_samples);
  for (std::size_t f = 0; f < spec.n_features; ++f) ds.feature_names.push_back("f" + std::to_string(f));

  auto rng = make_rng(spec.seed, Stream::kGenerator, {2});
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t k = m.means.size();
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const std::size_t cls = i % k;
    auto draw = draw_tabular(spec, m, cls, rng);
    for (std::size_t f = 0; f < spec.n_features; ++f) ds.x(i, f) = draw.x(static_cast<Eigen::Index>(f));
    if (spec.task == Task::kClassification) {
      ds.y[i] = static_cast<double>(cls);
    } else {
      ds.y[i] = m.regression_weights.dot(draw.z) + spec.target_noise * normal(rng);
    }
  }

  if (spec.task == Task::kRegression) {
    // With noiseless features the latent is recoverable, so the Bayes
    // predictor only suffers the target noise: E|ε| = σ·sqrt(2/π).
    if (spec.feature_noise == 0.0 && spec.n_features >= spec.latent_dim) {
      ds.bayes_reference = spec.target_noise * std::sqrt(2.0 / std::numbers::pi);
    }
    return ds;
  }

  // Bayes-optimal accuracy of the generative posterior, on held-out draws.
  // Classes share one covariance and have equal priors, so the posterior argmax
  // is a linear discriminant.
  constexpr std::size_t kReferenceDraws = 20000;
  auto ref_rng = make_rng(spec.seed, Stream::kGenerator, {3});
  const bool latent_route = spec.feature_noise == 0.0;
  std::vector<Eigen::VectorXd> disc_w;
  std::vector<double> disc_b;
  if (!latent_route) {
    const auto g = tabular_generative(spec);
    const auto nf = static_cast<Eigen::Index>(spec.n_features);
    Eigen::MatrixXd prec(nf, nf);
    for (Eigen::Index r = 0; r < nf; ++r) {
      for (Eigen::Index c = 0; c < nf; ++c) prec(r, c) = g.precision[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    for (const auto& mean : g.class_means) {
      Eigen::Map<const Eigen::VectorXd> mu(mean.data(), nf);
      Eigen::VectorXd w = prec * mu;
      disc_w.push_back(w);
      disc_b.push_back(-0.5 * mu.dot(w));
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < kReferenceDraws; ++i) {
    const std::size_t cls = i % k;
    auto draw = draw_tabular(spec, m, cls, ref_rng);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double score;
      if (latent_route) {
        score = m.means[c].dot(draw.z) - 0.5 * m.means[c].squaredNorm();
      } else {
        score = disc_w[c].dot(draw.x) + disc_b[c];
      }
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    if (best == cls) ++correct;
  }
  ds.bayes_reference = 100.0 * static_cast<double>(correct) / static_cast<double>(kReferenceDraws);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic digits

namespace {

// Segment bits: a=top, b=upper right, c=lower right, d=bottom, e=lower left,
// f=upper left, g=middle.
constexpr std::uint8_t kSegments[10] = {
    0b0111111,  // 0: abcdef
    0b0000110,  // 1: bc
    0b1011011,  // 2: abdeg
    0b1001111,  // 3: abcdg
    0b1100110,  // 4: bcfg
    0b1101101,  // 5: acdfg
    0b1111101,  // 6: acdefg
    0b0000111,  // 7: abc
    0b1111111,  // 8
    0b1101111,  // 9: abcdfg
};

std::vector<double> render_glyph(std::size_t digit, std::size_t side) {
  std::vector<double> img(side * side, 0.0);
  const std::size_t left = 2;
  const std::size_t right = side - 3;
  const std::size_t top = 1;
  const std::size_t bottom = side - 2;
  const std::size_t mid = (top + bottom) / 2;
  auto hline = [&](std::size_t r) {
    for (std::size_t c = left; c <= right; ++c) img[r * side + c] = 1.0;
  };
  auto vline = [&](std::size_t c, std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r <= r1; ++r) img[r * side + c] = 1.0;
  };
  const auto s = kSegments[digit];
  if (s & 0b0000001) hline(top);
  if (s & 0b0000010) vline(right, top, mid);
  if (s & 0b0000100) vline(right, mid, bottom);
  if (s & 0b0001000) hline(bottom);
  if (s & 0b0010000) vline(left, mid, bottom);
  if (s & 0b0100000) vline(left, top, mid);
  if (s & 0b1000000) hline(mid);
  return img;
}

std::vector<double> shift_image(std::span<const double> img, std::size_t side, std::size_t channels,
                                int dx, int dy) {
  std::vector<double> out(img.size(), 0.0);
  const int s = static_cast<int>(side);
  for (int r = 0; r < s; ++r) {
    const int sr = r - dy;
    if (sr < 0 || sr >= s) continue;
    for (int c = 0; c < s; ++c) {
      const int sc = c - dx;
      if (sc < 0 || sc >= s) continue;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        out[(static_cast<std::size_t>(r) * side + static_cast<std::size_t>(c)) * channels + ch] =
            img[(static_cast<std::size_t>(sr) * side + static_cast<std::size_t>(sc)) * channels + ch];
      }
    }
  }
  return out;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

DomainTransform default_domain_transform(std::size_t domain) {
  switch (domain % 5) {
    case 0: return {};
    case 1: return {.invert = true};
    case 2: return {.brightness = 0.15, .contrast = 0.6, .noise = 0.15};
    case 3: return {.noise = 0.3};
    default: return {.invert = true, .contrast = 0.7, .noise = 0.1};
  }
}

std::vector<Dataset> synth_digits(const DigitsSpec& spec) {
  if (spec.side < 8) throw ConfigError("synth_digits: side must be at least 8");
  if (spec.classes < 2 || spec.classes > 10) throw ConfigError("synth_digits: classes must be in [2, 10]");
  if (spec.domains == 0) throw ConfigError("synth_digits: need at least one domain");
  std::vector<std::vector<double>> glyphs;
  for (std::size_t d = 0; d < spec.classes; ++d) glyphs.push_back(render_glyph(d, spec.side));
  const ImageMeta meta{spec.side, 1};

  std::vector<Dataset> out;
  for (std::size_t dom = 0; dom < spec.domains; ++dom) {
    const DomainTransform tf =
        dom < spec.transforms.size() ? spec.transforms[dom] : default_domain_transform(dom);
    auto rng = make_rng(spec.seed, Stream::kGenerator, {100 + dom});
    std::uniform_int_distribution<int> shift(-1, 1);
    std::uniform_real_distribution<double> ink(0.7, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    Dataset ds;
    ds.task = Task::kClassification;
    ds.num_classes = spec.classes;
    ds.image = meta;
    ds.x = Tensor2(spec.samples_per_domain, meta.pixels());
    ds.y.resize(spec.samples_per_domain);
    for (std::size_t p = 0; p < meta.pixels(); ++p) ds.feature_names.push_back("px" + std::to_string(p));
    for (std::size_t i = 0; i < spec.samples_per_domain; ++i) {
      const std::size_t cls = i % spec.classes;
      const int dx = shift(rng);
      const int dy = shift(rng);
      const double level = ink(rng);
      auto img = shift_image(glyphs[cls], spec.side, 1, dx, dy);
      auto row = ds.x.row(i);
      for (std::size_t p = 0; p < img.size(); ++p) {
        double v = clamp01(img[p] * level + spec.base_noise * normal(rng));
        v = clamp01(tf.contrast * (v - 0.5) + 0.5 + tf.brightness);
        if (tf.invert) v = 1.0 - v;
        if (tf.noise > 0.0) v = clamp01(v + tf.noise * normal(rng));
        row[p] = v;
      }
      ds.y[i] = static_cast<double>(cls);
    }
    out.push_back(std::move(ds));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation and rotation

std::vector<double> rotate_image(std::span<const double> pixels, const ImageMeta& meta,
                                 int quarter_turns) {
  const std::size_t s = meta.side;
  const std::size_t ch = meta.channels;
  if (pixels.size() != s * s * ch) {
    throw DimensionError("rotate_image: " + std::to_string(pixels.size()) +
                         " values are not a square " + std::to_string(s) + "x" + std::to_string(s) +
                         " image");
  }
  std::vector<double> cur(pixels.begin(), pixels.end());
  const int turns = ((quarter_turns % 4) + 4) % 4;
  for (int t = 0; t < turns; ++t) {
    std::vector<double> next(cur.size());
    // Counter-clockwise: new(r, c) = old(c, s-1-r).
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t c = 0; c < s; ++c) {
        for (std::size_t k = 0; k < ch; ++k) {
          next[(r * s + c) * ch + k] = cur[(c * s + (s - 1 - r)) * ch + k];
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

Tensor2 rotate_images(const Tensor2& x, const ImageMeta& meta, int quarter_turns) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto rotated = rotate_image(x.row(r), meta, quarter_turns);
    std::copy(rotated.begin(), rotated.end(), out.row(r).begin());
  }
  return out;
}

Tensor2 weak_aug(const Tensor2& x, const std::optional<ImageMeta>& meta, std::uint64_t seed,
                 const AugmentOptions& options) {
  if (!meta) return x;
  if (x.cols() != meta->pixels()) throw DimensionError("weak_aug: image meta does not match columns");
  auto rng = make_rng(seed, Stream::kAugment, {0});
  std::uniform_int_distribution<int> shift(-options.max_shift, options.max_shift);
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const int dx = shift(rng);
    const int dy = shift(rng);
    auto moved = shift_image(x.row(r), meta->side, meta->channels, dx, dy);
    auto dst = out.row(r);
    for (std::size_t p = 0; p < moved.size(); ++p) dst[p] = clamp01(moved[p]);
  }
  return out;
}

Tensor2 strong_aug(const Tensor2& x, const std::optional<ImageMeta>& meta, std::uint64_t seed,
                   const AugmentOptions& options) {
  auto rng = make_rng(seed, Stream::kAugment, {1});
  std::normal_distribution<double> normal(0.0, 1.0);
  if (!meta) {
    Tensor2 out = x;
    if (options.tabular_noise_sigma > 0.0) {
      for (double& v : out.values()) v = clamp01(v + options.tabular_noise_sigma * normal(rng));
    }
    return out;
  }
  Tensor2 out = weak_aug(x, meta, seed, options);
  std::bernoulli_distribution drop(std::clamp(options.dropout_rate, 0.0, 1.0));
  for (double& v : out.values()) {
    if (options.dropout_rate > 0.0 && drop(rng)) {
      v = 0.0;
    } else if (options.noise_sigma > 0.0) {
      v = clamp01(v + options.noise_sigma * normal(rng));
    }
  }
  return out;
}

}  // namespace fedsim
