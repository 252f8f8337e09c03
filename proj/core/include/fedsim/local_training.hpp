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
#include <optional>
#include <vector>

#include "fedsim/nn.hpp"

namespace fedsim {

struct TrainOptions {
  std::size_t epochs = 1;
  double lr = 0.05;
  double momentum = 0.0;
  std::size_t batch_size = 0;  // 0 = full batch
  LossSpec loss;
};

// L2 pull of layers [first_layer, end) towards `anchor` (to_params naming of
// that tail, i.e. "0.weight" is layer first_layer).
struct PullTerm {
  ParamSet anchor;
  double lambda = 0.0;
  std::size_t first_layer = 0;
};

struct TrainStats {
  std::vector<double> epoch_losses;  // sample-weighted mean batch objective
  double last_loss() const { return epoch_losses.empty() ? 0.0 : epoch_losses.back(); }
};

/// Supervised SGD on `layers`. Layers below `frozen_prefix` are never updated.
/// Full-batch training does not touch `rng`; mini-batch training reshuffles
/// each epoch from it.
TrainStats train_supervised(Stack& layers, const Tensor2& x, const Tensor2& targets,
                            const TrainOptions& options, Rng& rng,
                            const std::optional<PullTerm>& pull = std::nullopt,
                            std::size_t frozen_prefix = 0);

// Contiguous mini-batches over a permutation of [0, n).
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* rng);

}  // namespace fedsim
