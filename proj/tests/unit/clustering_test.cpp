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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "fedsim/clustering.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace fedsim {
namespace {

using testing::fold_intersection;

FeatureSubset fs(std::vector<std::size_t> idx, std::size_t universe = 16) {
  return FeatureSubset::from_indices(std::move(idx), universe);
}

// Every client exactly once, every group nonempty.
void expect_partition(const std::vector<Group>& groups, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& g : groups) {
    EXPECT_FALSE(g.empty());
    for (auto i : g) {
      ASSERT_LT(i, n);
      ++seen[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(seen[i], 1) << "client " << i;
}

// Threshold condition checked over all pairs directly.
void expect_threshold(const ClusterAssignment& a, std::span<const FeatureSubset> subsets) {
  for (const auto& g : a.clusters) {
    for (std::size_t x = 0; x < g.size(); ++x)
      for (std::size_t y = x + 1; y < g.size(); ++y) EXPECT_GE(jaccard(subsets[g[x]], subsets[g[y]]), a.min_sim);
  }
}

// Silhouette by the textbook formula, Euclidean distance, singletons 0.
double direct_silhouette(const Tensor2& rows, const std::vector<std::size_t>& labels) {
  const std::size_t n = rows.rows();
  const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;
  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < rows.cols(); ++j) s += (rows(a, j) - rows(b, j)) * (rows(a, j) - rows(b, j));
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum(k, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sum[labels[j]] += dist(i, j);
      ++cnt[labels[j]];
    }
    if (cnt[labels[i]] == 0) continue;
    const double a = sum[labels[i]] / static_cast<double>(cnt[labels[i]]);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != labels[i] && cnt[c] > 0) b = std::min(b, sum[c] / static_cast<double>(cnt[c]));
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

Tensor2 three_blocks(std::uint64_t seed, std::vector<std::size_t>* truth = nullptr) {
  auto rng = make_rng(seed, Stream::kPartition, {3});
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution flip(0.05);
  const std::size_t per = 5, blocks = 3, d = 20;
  std::vector<std::vector<double>> protos(blocks, std::vector<double>(d));
  for (auto& p : protos)
    for (auto& v : p) v = coin(rng) ? 1.0 : 0.0;
  Tensor2 rows(per * blocks, d);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t m = 0; m < per; ++m) {
      for (std::size_t j = 0; j < d; ++j) {
        const double v = protos[b][j];
        rows(b * per + m, j) = flip(rng) ? 1.0 - v : v;
      }
      if (truth) truth->push_back(b);
    }
  return rows;
}

TEST(Jaccard, Examples) {
  EXPECT_EQ(jaccard(fs({1, 2, 3}), fs({1, 2, 3})), 1.0);
  EXPECT_EQ(jaccard(fs({1, 2}), fs({3, 4})), 0.0);
  EXPECT_EQ(jaccard(fs({1, 2, 3}), fs({2, 3, 4})), 0.5);
}

TEST(BinaryMatrix, RowsMatchSubsets) {
  const std::vector<FeatureSubset> s{fs({0, 2}, 4), fs({1}, 4)};
  EXPECT_EQ(binary_matrix(s), Tensor2::from_rows({{1, 0, 1, 0}, {0, 1, 0, 0}}));
}

TEST(KMeans, KEqualsNGivesSingletons) {
  const auto rows = Tensor2::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}});
  const auto r = kmeans_binary(rows, 4, 0);
  ASSERT_EQ(r.groups.size(), 4u);
  for (const auto& g : r.groups) EXPECT_EQ(g.size(), 1u);
  EXPECT_EQ(r.inertia, 0.0);
}

TEST(KMeans, TwoIdenticalBlocksRecovered) {
  const auto rows = Tensor2::from_rows({{1, 1, 0, 0}, {0, 0, 1, 1}, {1, 1, 0, 0}, {0, 0, 1, 1}, {1, 1, 0, 0}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = kmeans_binary(rows, 2, seed);
    ASSERT_EQ(r.groups.size(), 2u);
    EXPECT_EQ(r.groups[0], (Group{0, 2, 4}));
    EXPECT_EQ(r.groups[1], (Group{1, 3}));
    EXPECT_EQ(r.inertia, 0.0);
  }
}

TEST(KMeans, OutOfRangeK) {
  const auto rows = Tensor2::from_rows({{1, 0}, {0, 1}});
  EXPECT_ANY_THROW(kmeans_binary(rows, 0, 0));
  EXPECT_ANY_THROW(kmeans_binary(rows, 3, 0));
}

TEST(KMeans, DeterministicAndNonEmpty) {
  const auto rows = three_blocks(5);
  const auto a = kmeans_binary(rows, 4, 11);
  const auto b = kmeans_binary(rows, 4, 11);
  EXPECT_EQ(a.groups, b.groups);
  EXPECT_EQ(a.inertia, b.inertia);
  expect_partition(a.groups, rows.rows());
  EXPECT_EQ(a.groups.size(), 4u);
}

TEST(Silhouette, MatchesDirectFormula) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto rows = three_blocks(seed);
    for (std::size_t k = 2; k <= 5; ++k) {
      const auto r = kmeans_binary(rows, k, seed);
      EXPECT_NEAR(silhouette_score(rows, r.labels), direct_silhouette(rows, r.labels), 1e-12);
    }
  }
}

TEST(Silhouette, SelectsThreeBlocks) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto rows = three_blocks(seed);
    // Oracle: enumerate K and score each clustering with the direct formula.
    std::size_t best_k = 0;
    double best = -2.0;
    for (std::size_t k = 2; k <= 5; ++k) {
      const double s = direct_silhouette(rows, kmeans_binary(rows, k, seed).labels);
      if (s > best) {
        best = s;
        best_k = k;
      }
    }
    const auto sel = select_k(rows, 5, seed);
    EXPECT_EQ(sel.k, best_k) << "seed " << seed;
    if (sel.k == 3) ++hits;
  }
  EXPECT_GE(hits, 18);
}

TEST(SelectK, TinyInputsGiveOneGroup) {
  const auto rows = Tensor2::from_rows({{1, 0}, {0, 1}});
  const auto sel = select_k(rows, 8, 0);
  EXPECT_EQ(sel.k, 1u);
  ASSERT_EQ(sel.clustering.groups.size(), 1u);
  EXPECT_EQ(sel.clustering.groups[0], (Group{0, 1}));
}

TEST(Overlap, Examples) {
  const std::vector<FeatureSubset> s{fs({1, 2, 3}), fs({2, 3, 4}), fs({2, 3})};
  EXPECT_EQ(overlap_features(s, Group{0}), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(overlap_features(s, Group{0, 1, 2}), (std::vector<std::size_t>{2, 3}));
}

TEST(Overlap, MatchesFoldIntersection) {
  auto rng = make_rng(3, Stream::kPartition);
  std::bernoulli_distribution coin(0.7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<FeatureSubset> s;
    for (int c = 0; c < 5; ++c) {
      std::vector<std::size_t> idx{0};
      for (std::size_t f = 1; f < 12; ++f)
        if (coin(rng)) idx.push_back(f);
      s.push_back(fs(idx, 12));
    }
    const Group all{0, 1, 2, 3, 4};
    EXPECT_EQ(overlap_features(s, all), fold_intersection(s, all));
    const Group some{1, 3};
    EXPECT_EQ(overlap_features(s, some), fold_intersection(s, some));
  }
}

TEST(Refine, IdenticalSetsFormOneCluster) {
  const std::vector<FeatureSubset> s(6, fs({0, 3, 5}));
  RefineOptions o;
  const auto a = cluster_clients(s, o);
  ASSERT_EQ(a.clusters.size(), 1u);
  EXPECT_EQ(a.overlaps[0], s[0].indices);
}

TEST(Refine, DisjointSetsBecomeSingletons) {
  std::vector<FeatureSubset> s;
  for (std::size_t c = 0; c < 6; ++c) s.push_back(fs({2 * c, 2 * c + 1}));
  const auto a = cluster_clients(s, {});
  EXPECT_EQ(a.clusters.size(), 6u);
  expect_partition(a.clusters, 6);
}

TEST(Refine, PlantedGroupsRecovered) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<int> truth;
    const auto s = testing::planted_two_groups(seed, &truth);
    RefineOptions o;
    o.seed = seed;
    const auto a = cluster_clients(s, o);
    ASSERT_EQ(a.clusters.size(), 2u) << "seed " << seed;
    for (const auto& g : a.clusters) {
      ASSERT_EQ(g.size(), 5u);
      for (auto i : g) EXPECT_EQ(truth[i], truth[g[0]]);
    }
    expect_threshold(a, s);
    for (std::size_t k = 0; k < a.clusters.size(); ++k) {
      EXPECT_EQ(a.overlaps[k], fold_intersection(s, a.clusters[k]));
    }
  }
}

TEST(Refine, LowSimilarityPairSplits) {
  const std::vector<FeatureSubset> s{fs({0, 1, 2}), fs({0, 1, 3})};
  const auto a = refine_clusters({Group{0, 1}}, s, {});
  EXPECT_EQ(a.clusters.size(), 2u);
}

TEST(Refine, EmptyOverlapSplitsAndFlags) {
  // Pairwise Jaccard 1/3 passes the threshold, but no feature is common to all three.
  const std::vector<FeatureSubset> s{fs({0, 1}), fs({1, 2}), fs({0, 2})};
  RefineOptions o;
  o.min_sim = 0.3;
  const auto a = refine_clusters({Group{0, 1, 2}}, s, o);
  EXPECT_EQ(a.clusters.size(), 3u);
  EXPECT_FALSE(a.flags.empty());
}

std::vector<FeatureSubset> random_subsets(std::uint64_t seed, std::size_t n) {
  auto rng = make_rng(seed, Stream::kPartition, {8});
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> family(0, 2);
  std::vector<std::vector<std::size_t>> bases{{0, 1, 2, 3, 4, 5, 6}, {5, 6, 7, 8, 9, 10}, {0, 11, 12, 13, 14}};
  std::vector<FeatureSubset> out;
  for (std::size_t c = 0; c < n; ++c) {
    auto idx = bases[static_cast<std::size_t>(family(rng))];
    if (coin(rng)) idx.push_back(15);
    out.push_back(fs(idx));
  }
  return out;
}

TEST(Refine, PartitionThresholdIdempotenceDeterminism) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = random_subsets(seed, 9);
    for (double min_sim : {0.5, 0.8, 1.0}) {
      RefineOptions o;
      o.seed = seed;
      o.min_sim = min_sim;
      const auto a = cluster_clients(s, o);
      expect_partition(a.clusters, s.size());
      expect_threshold(a, s);
      ASSERT_EQ(a.overlaps.size(), a.clusters.size());
      for (std::size_t k = 0; k < a.clusters.size(); ++k) {
        EXPECT_EQ(a.overlaps[k], fold_intersection(s, a.clusters[k]));
        EXPECT_FALSE(a.overlaps[k].empty());
      }
      const auto again = refine_clusters(a.clusters, s, o);
      EXPECT_EQ(again.clusters, a.clusters);
      EXPECT_EQ(cluster_clients(s, o).clusters, a.clusters);
    }
  }
}

TEST(Assignment, ClusterOf) {
  ClusterAssignment a;
  a.clusters = {{0, 2}, {1}};
  EXPECT_EQ(a.cluster_of(3), (std::vector<std::size_t>{0, 1, 0}));
}

}  // namespace
}  // namespace fedsim
