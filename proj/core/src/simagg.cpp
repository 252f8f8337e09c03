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

#include "fedsim/simagg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsim/errors.hpp"

namespace fedsim {

CosineResult cosine_matrix(std::span<const std::vector<double>> latents) {
  if (latents.empty()) throw DimensionError("cosine_matrix: no latent vectors");
  const std::size_t n = latents.size();
  const std::size_t dim = latents.front().size();
  std::vector<double> norms(n);
  CosineResult out{Tensor2(n, n), {}};
  for (std::size_t i = 0; i < n; ++i) {
    if (latents[i].size() != dim) throw DimensionError("cosine_matrix: latent lengths differ");
    double sq = 0.0;
    for (double v : latents[i]) sq += v * v;
    norms[i] = std::sqrt(sq);
    if (norms[i] < kDegenerateNorm) out.degenerate.push_back(i);
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.s(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double value = 0.0;
      if (norms[i] >= kDegenerateNorm && norms[j] >= kDegenerateNorm) {
        double dot = 0.0;
        for (std::size_t k = 0; k < dim; ++k) dot += latents[i][k] * latents[j][k];
        value = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      }
      out.s(i, j) = value;
      out.s(j, i) = value;
    }
  }
  return out;
}

SimilarityWeights softmax_weights(const Tensor2& s, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("similarity_temperature must be positive");
  if (s.rows() != s.cols()) throw DimensionError("softmax_weights: similarity matrix is not square");
  SimilarityWeights w{s.rows(), s, Tensor2(s.rows(), s.cols()), temperature};
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    auto dst = w.alpha.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      dst[j] = std::exp((row[j] - peak) / temperature);
      total += dst[j];
    }
    for (double& v : dst) v /= total;
  }
  return w;
}

ParamSet weighted_param_avg(std::span<const ParamSet> params, std::span<const double> weights) {
  if (params.empty()) throw DimensionError("weighted_param_avg: nothing to average");
  if (params.size() != weights.size()) {
    throw DimensionError("weighted_param_avg: " + std::to_string(params.size()) + " parameter sets, " +
                         std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("weighted_param_avg: negative or NaN weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("weighted_param_avg: weights sum to " + std::to_string(total) + ", not 1");
  }
  for (std::size_t j = 1; j < params.size(); ++j) {
    require_compatible(params.front(), params[j], "weighted_param_avg");
  }
  ParamSet out = scaled(params.front(), weights.front());
  for (std::size_t j = 1; j < params.size(); ++j) axpy(out, weights[j], params[j]);
  return out;
}

std::vector<ParamSet> per_client_global_classifiers(std::span<const ParamSet> classifiers,
                                                    const SimilarityWeights& w) {
  if (classifiers.size() != w.n) {
    throw DimensionError("per_client_global_classifiers: " + std::to_string(classifiers.size()) +
                         " classifiers for " + std::to_string(w.n) + " weight rows");
  }
  std::vector<ParamSet> out;
  out.reserve(w.n);
  for (std::size_t i = 0; i < w.n; ++i) out.push_back(weighted_param_avg(classifiers, w.alpha.row(i)));
  return out;
}

std::vector<double> size_weights(std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw DimensionError("size_weights: no clients");
  double total = 0.0;
  for (auto n : sizes) {
    if (n == 0) throw ConfigError("size_weights: client sizes must be positive");
    total += static_cast<double>(n);
  }
  std::vector<double> w;
  w.reserve(sizes.size());
  for (auto n : sizes) w.push_back(static_cast<double>(n) / total);
  return w;
}

}  // namespace fedsim
