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

#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class Task { kClassification, kRegression };

enum class ClientStatus : int {
  kFullyLabelled = 1,
  kPartiallyLabelled = 2,
  kFullyUnlabelled = 3,
};

const char* to_string(ClientStatus status);
const char* to_string(Task task);

/// Sorted set of feature ids drawn from a universe of `universe` features.
struct FeatureSubset {
  std::vector<std::size_t> indices;
  std::size_t universe = 0;

  // Sorts, deduplicates and validates (nonempty, in range).
  static FeatureSubset from_indices(std::vector<std::size_t> indices, std::size_t universe);
  static FeatureSubset all(std::size_t universe);

  std::vector<std::uint8_t> binary_row() const;
  std::size_t size() const { return indices.size(); }
  bool contains(std::size_t feature) const;

  bool operator==(const FeatureSubset&) const = default;
};

/// Layout of flattened images: row-major, channel-last.
struct ImageMeta {
  std::size_t side = 0;
  std::size_t channels = 1;

  std::size_t pixels() const { return side * side * channels; }
  bool operator==(const ImageMeta&) const = default;
};

/// A whole (pre-partition) dataset.
struct Dataset {
  Tensor2 x;
  std::vector<double> y;  // class index or regression target, one per row
  std::vector<std::string> feature_names;
  Task task = Task::kClassification;
  std::size_t num_classes = 0;  // 0 for regression
  std::optional<ImageMeta> image;
  // Generative reference: Bayes-optimal accuracy (%) or expected MAE.
  std::optional<double> bayes_reference;
  std::size_t dropped_rows = 0;
  std::vector<std::string> notes;

  std::size_t n() const { return x.rows(); }
};

/// One client's local data. Columns of `x` follow `features.indices`.
struct ClientDataset {
  std::size_t client_id = 0;
  Tensor2 x;
  std::vector<double> y;               // empty when the client has no labels at all
  std::vector<std::uint8_t> labelled;  // per row; y[r] is meaningful iff labelled[r]
  FeatureSubset features;
  ClientStatus status = ClientStatus::kFullyLabelled;
  Task task = Task::kClassification;
  std::size_t num_classes = 0;
  std::optional<ImageMeta> image;

  std::size_t n() const { return x.rows(); }
  std::vector<std::size_t> labelled_rows() const;
  std::vector<std::size_t> unlabelled_rows() const;
  // Targets for `rows` as a column tensor (class indices or values).
  Tensor2 targets(const std::vector<std::size_t>& rows) const;
  // Throws ConfigError if status, mask and labels disagree.
  void validate() const;
};

ClientDataset subset_rows(const ClientDataset& d, const std::vector<std::size_t>& rows);
// Keeps only columns whose feature id is in `keep` (must be a subset of d.features).
ClientDataset project_features(const ClientDataset& d, const std::vector<std::size_t>& keep);

struct HoldoutSplit {
  ClientDataset train;
  ClientDataset holdout;
};
// Seeded, label-stratified where labels exist. Both parts keep at least one row
// when d.n() >= 2.
HoldoutSplit split_holdout(const ClientDataset& d, double holdout_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// CSV ingestion

struct ColumnSchema {
  std::string name;
  enum class Type { kNumeric, kCategorical } type = Type::kNumeric;
  enum class Encoding { kOneHot, kOrdinal } encoding = Encoding::kOneHot;
  std::vector<std::string> categories;  // optional explicit order
};

struct CsvSchema {
  std::string target;
  Task task = Task::kClassification;
  std::vector<ColumnSchema> columns;  // columns not listed are numeric
  std::vector<std::string> ignore;
  std::vector<std::string> target_classes;  // optional explicit class order
};

// Schema file: JSON object {"target", "task", "columns": [...], "ignore": [...]}.
CsvSchema load_schema(const std::filesystem::path& path);

/// Reads a header-first, comma-separated file. Categorical features are
/// one-hot or ordinal encoded; rows with a missing target are dropped and
/// counted. Features are returned unscaled; see MinMaxScaler.
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Per-column min-max scaling to [0,1]. Columns with zero range map to 0 and
/// are reported in `constant_columns`.
struct MinMaxScaler {
  std::vector<double> mins;
  std::vector<double> ranges;
  std::vector<std::size_t> constant_columns;

  static MinMaxScaler fit(const Tensor2& x, const std::vector<std::size_t>& rows);
  Tensor2 transform(const Tensor2& x) const;
};

// ---------------------------------------------------------------------------
// Partitioning

struct PartitionOptions {
  std::size_t n_clients = 1;
  std::size_t max_features = 0;  // 0 = all features
  std::size_t core_size = 2;     // features shared by every client
  // 0: each client draws its own subset. g > 0: clients are split into g
  // contiguous groups that share one subset each.
  std::size_t groups = 0;
  std::uint64_t seed = 0;
};

/// Feature-subset and row partition. Every subset contains the shared core and
/// has exactly max_features features; rows are dealt disjointly (label-
/// stratified for classification).
std::vector<ClientDataset> partition_features(const Dataset& full, const PartitionOptions& options);

// Rows dealt to clients (same stratified deal used by partition_features).
std::vector<std::vector<std::size_t>> partition_rows(const Dataset& full, std::size_t n_clients,
                                                     std::uint64_t seed);

struct StatusPlan {
  double labelled_fraction = 1.0;
  std::optional<ClientStatus> status;  // derived from the fraction when unset
};

/// Draws labelled masks (class-stratified) and sets statuses.
std::vector<ClientDataset> assign_statuses(std::vector<ClientDataset> clients,
                                           const std::vector<StatusPlan>& plan,
                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic generators

struct TabularSpec {
  std::size_t n_clusters = 3;  // classes
  std::size_t n_features = 16;
  std::size_t n_samples = 600;
  std::size_t latent_dim = 4;
  double noise = 1.0;          // within-class spread in latent space
  double feature_noise = 0.0;  // independent per-feature noise
  double separation = 3.0;     // scale of class means
  bool antipodal = false;      // two classes with means μ and −μ
  Task task = Task::kClassification;
  double target_noise = 0.1;   // regression only
  std::uint64_t seed = 0;
};

/// Gaussian class blobs in a latent space pushed through a random linear map.
/// bayes_reference holds the Bayes-optimal accuracy (%) of the generative
/// model estimated on held-out draws, or the Bayes MAE for regression.
Dataset synth_tabular(const TabularSpec& spec);

// Bayes-optimal class for x under the generative model of `spec`.
struct TabularGenerative {
  std::vector<std::vector<double>> class_means;   // in feature space
  std::vector<std::vector<double>> precision;     // inverse covariance (shared)
};
TabularGenerative tabular_generative(const TabularSpec& spec);

struct DomainTransform {
  bool invert = false;
  double brightness = 0.0;
  double contrast = 1.0;
  double noise = 0.0;
};

struct DigitsSpec {
  std::size_t domains = 3;
  std::size_t side = 10;
  std::size_t samples_per_domain = 300;
  std::size_t classes = 10;
  double base_noise = 0.05;
  // Empty: default_domain_transform(d) for each domain.
  std::vector<DomainTransform> transforms;
  std::uint64_t seed = 0;
};

DomainTransform default_domain_transform(std::size_t domain);

/// Seven-segment style glyphs on side×side grids; each domain applies its own
/// brightness / contrast / inversion / noise transform to the same label space.
std::vector<Dataset> synth_digits(const DigitsSpec& spec);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentOptions {
  int max_shift = 1;               // pixels
  double dropout_rate = 0.2;       // strong only
  double noise_sigma = 0.05;       // strong only
  double tabular_noise_sigma = 0.05;
};

// Images: seeded ±max_shift translation with zero fill. Tabular: identity.
Tensor2 weak_aug(const Tensor2& x, const std::optional<ImageMeta>& meta, std::uint64_t seed,
                 const AugmentOptions& options = {});
// Images: the weak translation, then pixel dropout and Gaussian noise.
// Tabular: additive Gaussian noise. Output clamped to [0,1].
Tensor2 strong_aug(const Tensor2& x, const std::optional<ImageMeta>& meta, std::uint64_t seed,
                   const AugmentOptions& options = {});

// quarter_turns counter-clockwise rotations of every image row.
Tensor2 rotate_images(const Tensor2& x, const ImageMeta& meta, int quarter_turns);
std::vector<double> rotate_image(std::span<const double> pixels, const ImageMeta& meta,
                                 int quarter_turns);

}  // namespace fedsim
