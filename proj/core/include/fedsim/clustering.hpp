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
#include <span>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

using Group = std::vector<std::size_t>;  // sorted client ids

double jaccard(const FeatureSubset& a, const FeatureSubset& b);

// One 0/1 row per client over the feature universe.
Tensor2 binary_matrix(std::span<const FeatureSubset> subsets);

struct KMeansResult {
  std::vector<Group> groups;  // K nonempty groups of row indices, ordered by first member
  std::vector<std::size_t> labels;
  double inertia = 0.0;
};

/// Lloyd's k-means on binary rows with squared Euclidean distance and
/// k-means++ seeding (several restarts, best inertia kept). Empty clusters are
/// re-seeded so the result always has K nonempty groups.
KMeansResult kmeans_binary(const Tensor2& rows, std::size_t k, std::uint64_t seed);

// Mean silhouette coefficient using Euclidean distance.
// Singletons contribute 0.
double silhouette_score(const Tensor2& rows, std::span<const std::size_t> labels);

struct KSelection {
  std::size_t k = 1;
  std::vector<double> silhouettes;  // for k = 2 .. max_k
  KMeansResult clustering;
};

// Silhouette over K ∈ {2, …, min(max_k, n−1, distinct rows)}; ties go to lower
// inertia (elbow) then smaller K. Fewer than two candidates yields one group.
KSelection select_k(const Tensor2& rows, std::size_t max_k, std::uint64_t seed);

struct ClusterAssignment {
  std::vector<Group> clusters;
  std::vector<std::vector<std::size_t>> overlaps;  // O_k, ascending feature ids
  double min_sim = 0.8;
  std::vector<std::string> flags;

  // Cluster index per client.
  std::vector<std::size_t> cluster_of(std::size_t n_clients) const;
};

struct RefineOptions {
  double min_sim = 0.8;
  std::size_t max_size = 2;  // clusters larger than this are re-clustered, smaller ones split
  std::size_t max_k = 8;
  std::uint64_t seed = 0;
};

/// Recursive refinement: a cluster whose minimum pairwise Jaccard is below
/// min_sim is re-clustered (size > max_size) or split into singletons.
/// Multi-client clusters with an empty feature intersection are also split.
ClusterAssignment refine_clusters(const std::vector<Group>& initial,
                                  std::span<const FeatureSubset> subsets, const RefineOptions& options);

// Exact intersection of the members' feature subsets.
std::vector<std::size_t> overlap_features(std::span<const FeatureSubset> subsets, const Group& cluster);

double min_pairwise_jaccard(std::span<const FeatureSubset> subsets, const Group& cluster);

/// Full pipeline: binary matrix → k-means with silhouette K → refinement → O_k.
ClusterAssignment cluster_clients(std::span<const FeatureSubset> subsets, const RefineOptions& options);

}  // namespace fedsim
