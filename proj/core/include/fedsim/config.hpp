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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsim/clustering.hpp"
#include "fedsim/data.hpp"
#include "fedsim/diven.hpp"
#include "fedsim/fusion.hpp"

namespace fedsim {

enum class Method {
  kSingle,
  kClassAgg,
  kFedAvg,
  kDiven,
  kDivenMix,
  kDivenC,
  kFedFusion,
  kFedFusionStar,
  kSupervisedFedAvg,
};

const char* to_string(Method m);
Method parse_method(const std::string& name);
bool is_fusion(Method m);

enum class DatasetKind { kSyntheticTabular, kSyntheticDigits, kCsv };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::kSyntheticTabular;
  TabularSpec tabular;
  DigitsSpec digits;
  std::filesystem::path csv_path;
  std::filesystem::path schema_path;
  std::optional<std::uint64_t> seed;  // unset: the run seed
};

struct PartitionConfig {
  std::size_t n_clients = 1;
  std::size_t max_features = 0;
  std::size_t core_size = 2;
  std::size_t groups = 0;
  double test_fraction = 0.2;
  double val_fraction = 0.2;  // of the remaining rows
  double labelled_fraction = 1.0;
  std::vector<double> client_labelled_fraction;  // per client, overrides labelled_fraction
  std::vector<std::size_t> client_domains;       // digits: domain per client
  std::string scenario;                          // column label in comparisons
};

struct ModelConfig {
  ModelOptions options;
  std::vector<std::size_t> encoder = {32, 16};  // fusion architecture
};

struct OutputConfig {
  std::filesystem::path dir = "fedsim-out";
  bool dump_params = false;
  bool dump_similarity = false;
};

struct RunConfig {
  std::string name;
  Method method = Method::kDiven;
  std::vector<std::uint64_t> seeds = {0};
  DatasetConfig dataset;
  PartitionConfig partition;
  ModelConfig model;
  DivEnConfig diven;
  FusionConfig fusion;
  RefineOptions clustering;
  OutputConfig output;

  // Throws ConfigError naming the offending key.
  void validate() const;
  std::string scenario_label() const;
};

// Unknown keys are rejected; errors name the full key path.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace fedsim
