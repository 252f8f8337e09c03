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
#include <span>
#include <string>
#include <vector>

#include "fedsim/param_set.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

// Softmax is never a layer activation: it is fused into the cross-entropy
// loss, so classification stacks end in an identity layer producing logits.
enum class Activation { kIdentity, kRelu };

struct DenseLayer {
  Tensor2 weight;  // in × out
  Tensor2 bias;    // 1 × out
  Activation activation = Activation::kIdentity;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

using Stack = std::vector<DenseLayer>;

// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero bias.
DenseLayer make_dense(std::size_t in, std::size_t out, Activation activation, Rng& rng);

struct ForwardCache {
  std::vector<Tensor2> inputs;           // input to each layer
  std::vector<Tensor2> pre_activations;  // x·W + b for each layer
};

struct ForwardResult {
  Tensor2 logits;
  ForwardCache cache;
};

// Throws DimensionError naming the offending layer.
ForwardResult forward(std::span<const DenseLayer> layers, const Tensor2& input);
// Forward pass without keeping the cache.
Tensor2 infer(std::span<const DenseLayer> layers, const Tensor2& input);

// Gradients of a scalar objective given dObjective/dOutput. Names follow
// to_params(): "<i>.weight", "<i>.bias". If `input_grad` is non-null it
// receives dObjective/dInput.
ParamSet backward(std::span<const DenseLayer> layers, const ForwardCache& cache,
                  const Tensor2& output_grad, Tensor2* input_grad = nullptr);

enum class LossKind { kCrossEntropy, kMeanSquaredError, kMeanAbsoluteError };

struct LossSpec {
  LossKind kind = LossKind::kCrossEntropy;
};

struct LogitLoss {
  double loss = 0.0;
  Tensor2 grad;  // d loss / d logits
};

/// Batch loss on raw outputs.
///
/// Cross-entropy targets are either a column of class indices (cols == 1) or
/// one probability row per sample (cols == logits.cols()). Regression losses
/// take targets of the same shape as the outputs and average over outputs.
/// With `sample_weights`, the loss is (1/B)·Σ w_b·l_b, B being the row count.
LogitLoss loss_on_logits(const Tensor2& logits, const Tensor2& targets, LossSpec spec,
                         std::span<const double> sample_weights = {});

struct LossAndGrad {
  double loss = 0.0;
  ParamSet grads;
};

LossAndGrad loss_and_grad(std::span<const DenseLayer> layers, const Tensor2& batch_x,
                          const Tensor2& batch_y, LossSpec spec);

Tensor2 softmax_rows(const Tensor2& logits);
std::vector<std::size_t> argmax_rows(const Tensor2& t);

ParamSet to_params(std::span<const DenseLayer> layers);
// Overwrites layer tensors from `params` (as produced by to_params).
void assign_params(std::span<DenseLayer> layers, const ParamSet& params);

// params − lr·grads
ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr);
// 2·lambda·(local − anchor): gradient of lambda·Σ‖local − anchor‖².
ParamSet l2_pull_grad(const ParamSet& local, const ParamSet& anchor, double lambda);
// lambda·Σ‖local − anchor‖²
double l2_pull_value(const ParamSet& local, const ParamSet& anchor, double lambda);

/// Plain SGD with optional heavy-ball momentum. With momentum == 0 an update
/// is exactly `p -= lr * g`, matching sgd_step().
class Sgd {
 public:
  Sgd(double lr, double momentum = 0.0);

  // Updates layers [first_layer, layers.size()); grads use to_params naming.
  void step(std::span<DenseLayer> layers, const ParamSet& grads, std::size_t first_layer = 0);

 private:
  double lr_;
  double momentum_;
  std::optional<ParamSet> velocity_;
};

}  // namespace fedsim
