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

#include "fedsim/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

constexpr std::size_t kRestarts = 8;
constexpr std::size_t kMaxIterations = 100;

KMeansResult lloyd_once(const Tensor2& rows, std::size_t k, Rng& rng) {
  const std::size_t n = rows.rows();
  const std::size_t dim = rows.cols();
  Tensor2 centroids(k, dim);

  // k-means++ seeding.
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  const std::size_t start = first(rng);
  std::copy(rows.row(start).begin(), rows.row(start).end(), centroids.row(0).begin());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(rows.row(i), centroids.row(c - 1)));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (pick = 0; pick + 1 < n; ++pick) {
        target -= nearest[pick];
        if (target <= 0.0) break;
      }
    } else {
      pick = first(rng);
    }
    std::copy(rows.row(pick).begin(), rows.row(pick).end(), centroids.row(c).begin());
  }

  std::vector<std::size_t> labels(n, 0);
  for (std::size_t iter = 0; iter < kMaxIterations; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(rows.row(i), centroids.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[i] != best) changed = true;
      labels[i] = best;
    }
    // Re-seed empty clusters with the point farthest from its centroid.
    std::vector<std::size_t> counts(k, 0);
    for (auto l : labels) ++counts[l];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[labels[i]] < 2) continue;
        const double d = squared_distance(rows.row(i), centroids.row(labels[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) break;
      --counts[labels[far]];
      labels[far] = c;
      counts[c] = 1;
      changed = true;
    }
    Tensor2 next(k, dim);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = next.row(labels[i]);
      auto src = rows.row(i);
      for (std::size_t d = 0; d < dim; ++d) dst[d] += src[d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (double& v : next.row(c)) v /= static_cast<double>(counts[c]);
    }
    centroids = std::move(next);
    if (!changed) break;
  }

  KMeansResult result;
  result.labels = labels;
  for (std::size_t i = 0; i < n; ++i) result.inertia += squared_distance(rows.row(i), centroids.row(labels[i]));
  return result;
}

// Relabels so groups are ordered by their first member; fills groups.
void canonicalise(KMeansResult& r, std::size_t k) {
  std::vector<std::size_t> remap(k, k);
  std::size_t next = 0;
  for (auto& l : r.labels) {
    if (remap[l] == k) remap[l] = next++;
    l = remap[l];
  }
  r.groups.assign(next, {});
  for (std::size_t i = 0; i < r.labels.size(); ++i) r.groups[r.labels[i]].push_back(i);
}

}  // namespace

double jaccard(const FeatureSubset& a, const FeatureSubset& b) {
  std::vector<std::size_t> inter;
  std::set_intersection(a.indices.begin(), a.indices.end(), b.indices.begin(), b.indices.end(),
                        std::back_inserter(inter));
  const std::size_t uni = a.indices.size() + b.indices.size() - inter.size();
  return uni == 0 ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni);
}

Tensor2 binary_matrix(std::span<const FeatureSubset> subsets) {
  if (subsets.empty()) return {};
  const std::size_t universe = subsets.front().universe;
  Tensor2 w(subsets.size(), universe);
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    if (subsets[i].universe != universe) throw DimensionError("binary_matrix: feature universes differ");
    for (auto f : subsets[i].indices) w(i, f) = 1.0;
  }
  return w;
}

KMeansResult kmeans_binary(const Tensor2& rows, std::size_t k, std::uint64_t seed) {
  const std::size_t n = rows.rows();
  if (k < 1 || k > n) {
    throw ConfigError("kmeans: K=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t restart = 0; restart < kRestarts; ++restart) {
    auto rng = make_rng(seed, Stream::kKMeans, {k, restart});
    auto r = lloyd_once(rows, k, rng);
    if (r.inertia < best.inertia) best = std::move(r);
  }
  canonicalise(best, k);
  return best;
}

double silhouette_score(const Tensor2& rows, std::span<const std::size_t> labels) {
  const std::size_t n = rows.rows();
  if (labels.size() != n) throw DimensionError("silhouette_score: label count mismatch");
  if (n == 0) return 0.0;
  const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> counts(k, 0);
  for (auto l : labels) ++counts[l];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[labels[i]] < 2) continue;
    std::vector<double> sums(k, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sums[labels[j]] += std::sqrt(squared_distance(rows.row(i), rows.row(j)));
    }
    const double a = sums[labels[i]] / static_cast<double>(counts[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c == labels[i] || counts[c] == 0) continue;
      b = std::min(b, sums[c] / static_cast<double>(counts[c]));
    }
    if (!std::isfinite(b)) continue;
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

KSelection select_k(const Tensor2& rows, std::size_t max_k, std::uint64_t seed) {
  const std::size_t n = rows.rows();
  KSelection sel;
  // More clusters than distinct rows would split identical clients apart.
  std::set<std::vector<double>> distinct;
  for (std::size_t i = 0; i < n; ++i) distinct.emplace(rows.row(i).begin(), rows.row(i).end());
  const std::size_t upper = std::min({max_k, n == 0 ? 0 : n - 1, distinct.size()});
  if (upper < 2) {
    sel.k = 1;
    sel.clustering = kmeans_binary(rows, 1, seed);
    return sel;
  }
  double best_s = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 2; k <= upper; ++k) {
    auto r = kmeans_binary(rows, k, seed);
    const double s = silhouette_score(rows, r.labels);
    sel.silhouettes.push_back(s);
    const bool better = s > best_s + 1e-12;
    const bool tie = std::abs(s - best_s) <= 1e-12 && r.inertia < sel.clustering.inertia - 1e-12;
    if (better || tie) {
      best_s = s;
      sel.k = k;
      sel.clustering = std::move(r);
    }
  }
  return sel;
}

std::vector<std::size_t> ClusterAssignment::cluster_of(std::size_t n_clients) const {
  std::vector<std::size_t> out(n_clients, clusters.size());
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    for (auto i : clusters[k]) {
      if (i < n_clients) out[i] = k;
    }
  }
  return out;
}

double min_pairwise_jaccard(std::span<const FeatureSubset> subsets, const Group& cluster) {
  double worst = 1.0;
  for (std::size_t a = 0; a < cluster.size(); ++a) {
    for (std::size_t b = a + 1; b < cluster.size(); ++b) {
      worst = std::min(worst, jaccard(subsets[cluster[a]], subsets[cluster[b]]));
    }
  }
  return worst;
}

std::vector<std::size_t> overlap_features(std::span<const FeatureSubset> subsets, const Group& cluster) {
  if (cluster.empty()) throw ConfigError("overlap_features: empty cluster");
  std::vector<std::size_t> acc = subsets[cluster.front()].indices;
  for (std::size_t m = 1; m < cluster.size(); ++m) {
    std::vector<std::size_t> next;
    const auto& other = subsets[cluster[m]].indices;
    std::set_intersection(acc.begin(), acc.end(), other.begin(), other.end(), std::back_inserter(next));
    acc = std::move(next);
  }
  return acc;
}

ClusterAssignment refine_clusters(const std::vector<Group>& initial,
                                  std::span<const FeatureSubset> subsets, const RefineOptions& options) {
  if (!(options.min_sim > 0.0 && options.min_sim <= 1.0)) {
    throw ConfigError("clustering.min_sim must be in (0, 1]");
  }
  ClusterAssignment out;
  out.min_sim = options.min_sim;
  std::vector<Group> pending = initial;
  std::vector<Group> done;
  std::size_t depth_tag = 0;
  while (!pending.empty()) {
    Group g = std::move(pending.back());
    pending.pop_back();
    std::sort(g.begin(), g.end());
    if (g.size() <= 1 || min_pairwise_jaccard(subsets, g) >= options.min_sim) {
      done.push_back(std::move(g));
      continue;
    }
    if (g.size() <= options.max_size) {
      for (auto i : g) done.push_back({i});
      continue;
    }
    std::vector<FeatureSubset> members;
    for (auto i : g) members.push_back(subsets[i]);
    const auto sel = select_k(binary_matrix(members), options.max_k, options.seed + 7919 * ++depth_tag);
    if (sel.clustering.groups.size() < 2) {
      for (auto i : g) done.push_back({i});
      continue;
    }
    for (const auto& sub : sel.clustering.groups) {
      Group mapped;
      for (auto local : sub) mapped.push_back(g[local]);
      pending.push_back(std::move(mapped));
    }
  }

  for (auto& g : done) {
    auto overlap = overlap_features(subsets, g);
    if (g.size() > 1 && overlap.empty()) {
      std::string ids;
      for (auto i : g) ids += (ids.empty() ? "" : ",") + std::to_string(i);
      out.flags.push_back("empty feature intersection in cluster {" + ids + "}; split to singletons");
      for (auto i : g) out.clusters.push_back({i});
      continue;
    }
    out.clusters.push_back(g);
  }
  std::sort(out.clusters.begin(), out.clusters.end());
  for (const auto& g : out.clusters) out.overlaps.push_back(overlap_features(subsets, g));
  return out;
}

ClusterAssignment cluster_clients(std::span<const FeatureSubset> subsets, const RefineOptions& options) {
  if (subsets.empty()) throw ConfigError("cluster_clients: no clients");
  const auto sel = select_k(binary_matrix(subsets), options.max_k, options.seed);
  return refine_clusters(sel.clustering.groups, subsets, options);
}

}  // namespace fedsim
