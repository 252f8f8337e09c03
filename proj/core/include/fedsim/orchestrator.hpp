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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsim/clustering.hpp"
#include "fedsim/config.hpp"
#include "fedsim/diven.hpp"
#include "fedsim/trace.hpp"

namespace fedsim {

struct FairnessRecord {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t worst_client = 0;
};

// Worst client: lowest accuracy, or highest error for regression.
FairnessRecord fairness(std::span<const double> per_client, Task task);

/// Per-client train / validation / test splits for one seed.
struct ClientSplits {
  std::vector<ClientDataset> train;
  std::vector<ClientDataset> val;
  std::vector<ClientDataset> test;
  Task task = Task::kClassification;
  std::vector<std::string> notes;
};

ClientSplits prepare_clients(const RunConfig& cfg, std::uint64_t seed);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<double> client_metric;      // test split, per client
  std::vector<std::size_t> client_sizes;  // training rows, per client
  RunTrace trace;
  std::vector<GuardOutcome> guard;
  std::optional<ClusterAssignment> clusters;
  std::vector<std::string> notes;
};

SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed);

struct Report {
  std::string name;
  std::string method;
  std::string scenario;
  Task task = Task::kClassification;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_client;  // averaged over seeds
  double mean = 0.0;
  FairnessRecord fairness;
  std::vector<double> per_seed_mean;
  std::vector<std::vector<double>> per_seed_client;

  nlohmann::json to_json() const;
};

Report make_report(const RunConfig& cfg, const std::vector<SeedResult>& seeds);

struct RunOutput {
  Report report;
  std::vector<SeedResult> seeds;
};

/// Runs every seed. With an output directory, each seed's trace is written as
/// soon as that seed finishes, so completed seeds survive a later failure.
RunOutput run(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Trace header (configuration without output settings, plus the seed).
std::string trace_header(const RunConfig& cfg, std::uint64_t seed);
void write_seed_files(const RunConfig& cfg, const SeedResult& seed, const std::filesystem::path& dir);
void write_report(const Report& report, const std::filesystem::path& dir);

struct Comparison {
  std::vector<std::string> methods;    // rows
  std::vector<std::string> scenarios;  // columns
  std::vector<std::vector<std::optional<double>>> cells;
  std::vector<Report> reports;

  std::string text() const;
  nlohmann::json to_json() const;
};

/// Runs each configuration; all must share the dataset and seeds.
Comparison compare(const std::vector<RunConfig>& configs);

ClusterAssignment cluster_for(const RunConfig& cfg, std::uint64_t seed);
std::string format_clusters(const ClusterAssignment& a);
nlohmann::json clusters_json(const ClusterAssignment& a);

// Size-weighted mean training loss per round of `phase` for one seed.
std::vector<double> descent_curve(const SeedResult& seed, std::string_view phase);

}  // namespace fedsim
