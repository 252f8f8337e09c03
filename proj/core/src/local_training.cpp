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

#include "fedsim/local_training.hpp"

#include <algorithm>
#include <numeric>

#include "fedsim/errors.hpp"

namespace fedsim {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (batch_size == 0 || batch_size >= n) return {order};
  if (rng != nullptr) std::shuffle(order.begin(), order.end(), *rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(stop));
  }
  return batches;
}

TrainStats train_supervised(Stack& layers, const Tensor2& x, const Tensor2& targets,
                            const TrainOptions& options, Rng& rng,
                            const std::optional<PullTerm>& pull, std::size_t frozen_prefix) {
  if (x.rows() == 0) throw DimensionError("train_supervised: no training rows");
  if (pull && pull->first_layer > layers.size()) {
    throw DimensionError("train_supervised: pull term starts beyond the stack");
  }
  const bool use_pull = pull && pull->lambda > 0.0;
  Sgd opt(options.lr, options.momentum);
  TrainStats stats;
  const bool full_batch = options.batch_size == 0 || options.batch_size >= x.rows();
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    auto batches = make_batches(x.rows(), options.batch_size, full_batch ? nullptr : &rng);
    double weighted = 0.0;
    for (const auto& batch : batches) {
      const bool whole = batch.size() == x.rows();
      auto lg = whole ? loss_and_grad(layers, x, targets, options.loss)
                      : loss_and_grad(layers, select_rows(x, batch), select_rows(targets, batch), options.loss);
      double objective = lg.loss;
      if (use_pull) {
        std::span<const DenseLayer> tail(layers.data() + pull->first_layer, layers.size() - pull->first_layer);
        const ParamSet local = to_params(tail);
        objective += l2_pull_value(local, pull->anchor, pull->lambda);
        const ParamSet pg = l2_pull_grad(local, pull->anchor, pull->lambda);
        for (std::size_t k = 0; k < pg.size(); ++k) {
          auto dst = lg.grads.entries()[2 * pull->first_layer + k].value.values();
          auto src = pg.entries()[k].value.values();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
      }
      opt.step(layers, lg.grads, frozen_prefix);
      weighted += objective * static_cast<double>(batch.size());
    }
    stats.epoch_losses.push_back(weighted / static_cast<double>(x.rows()));
  }
  return stats;
}

}  // namespace fedsim
