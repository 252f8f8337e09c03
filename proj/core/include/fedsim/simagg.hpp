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
#include <span>
#include <vector>

#include "fedsim/param_set.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

// Latent summaries with norm below this are treated as degenerate.
inline constexpr double kDegenerateNorm = 1e-12;

struct CosineResult {
  Tensor2 s;
  std::vector<std::size_t> degenerate;  // clients with (near) zero latent summaries
};

/// Pairwise cosine similarity. A degenerate vector gets similarity 0 with every
/// other client and 1 with itself.
CosineResult cosine_matrix(std::span<const std::vector<double>> latents);

/// Row-wise temperature softmax over a similarity matrix (the α weights).
struct SimilarityWeights {
  std::size_t n = 0;
  Tensor2 s;
  Tensor2 alpha;
  double temperature = 1.0;
};

SimilarityWeights softmax_weights(const Tensor2& s, double temperature);

/// Σ_j w_j·params_j. Weights must be nonnegative and sum to 1 within 1e-9.
ParamSet weighted_param_avg(std::span<const ParamSet> params, std::span<const double> weights);

// output[i] = Σ_j alpha(i, j)·classifiers[j]
std::vector<ParamSet> per_client_global_classifiers(std::span<const ParamSet> classifiers,
                                                    const SimilarityWeights& w);

// n_k / Σ n_j
std::vector<double> size_weights(std::span<const std::size_t> sizes);

}  // namespace fedsim
