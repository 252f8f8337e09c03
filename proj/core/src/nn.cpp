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

#include "fedsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

std::string weight_name(std::size_t i) { return std::to_string(i) + ".weight"; }
std::string bias_name(std::size_t i) { return std::to_string(i) + ".bias"; }

void check_finite_output(const Tensor2& t, std::size_t layer) {
  if (!t.all_finite()) {
    throw NumericError("non-finite activations at layer " + std::to_string(layer));
  }
}

}  // namespace

DenseLayer make_dense(std::size_t in, std::size_t out, Activation activation, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  DenseLayer layer{Tensor2(in, out), Tensor2(1, out), activation};
  for (double& w : layer.weight.values()) w = dist(rng);
  return layer;
}

ForwardResult forward(std::span<const DenseLayer> layers, const Tensor2& input) {
  ForwardResult result;
  result.cache.inputs.reserve(layers.size());
  result.cache.pre_activations.reserve(layers.size());
  Tensor2 current = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (current.cols() != layer.in_dim()) {
      throw DimensionError("layer " + std::to_string(i) + " expects " +
                           std::to_string(layer.in_dim()) + " inputs, got " +
                           std::to_string(current.cols()));
    }
    if (layer.bias.rows() != 1 || layer.bias.cols() != layer.out_dim()) {
      throw DimensionError("layer " + std::to_string(i) + " bias shape " +
                           layer.bias.shape_string() + " does not match weight " +
                           layer.weight.shape_string());
    }
    Tensor2 pre = matmul(current, layer.weight);
    auto bias = layer.bias.row(0);
    for (std::size_t r = 0; r < pre.rows(); ++r) {
      auto row = pre.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
    }
    Tensor2 out = pre;
    if (layer.activation == Activation::kRelu) {
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    }
    result.cache.inputs.push_back(std::move(current));
    result.cache.pre_activations.push_back(std::move(pre));
    current = std::move(out);
  }
  result.logits = std::move(current);
  return result;
}

Tensor2 infer(std::span<const DenseLayer> layers, const Tensor2& input) {
  return forward(layers, input).logits;
}

ParamSet backward(std::span<const DenseLayer> layers, const ForwardCache& cache,
                  const Tensor2& output_grad, Tensor2* input_grad) {
  if (cache.inputs.size() != layers.size()) {
    throw DimensionError("backward: cache does not match layer count");
  }
  std::vector<Tensor2> weight_grads(layers.size());
  std::vector<Tensor2> bias_grads(layers.size());
  Tensor2 grad = output_grad;
  for (std::size_t idx = layers.size(); idx-- > 0;) {
    const auto& layer = layers[idx];
    const Tensor2& pre = cache.pre_activations[idx];
    if (!grad.same_shape(pre)) {
      throw DimensionError("backward: gradient shape " + grad.shape_string() +
                           " does not match layer " + std::to_string(idx) + " output " +
                           pre.shape_string());
    }
    if (layer.activation == Activation::kRelu) {
      auto g = grad.values();
      auto p = pre.values();
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (!(p[k] > 0.0)) g[k] = 0.0;
      }
    }
    weight_grads[idx] = matmul_transpose_a(cache.inputs[idx], grad);
    Tensor2 bgrad(1, grad.cols());
    for (std::size_t r = 0; r < grad.rows(); ++r) {
      auto row = grad.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) bgrad(0, c) += row[c];
    }
    bias_grads[idx] = std::move(bgrad);
    if (idx > 0 || input_grad != nullptr) {
      grad = matmul_transpose_b(grad, layer.weight);
    }
  }
  if (input_grad != nullptr) *input_grad = std::move(grad);
  ParamSet grads;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    grads.add(weight_name(i), std::move(weight_grads[i]));
    grads.add(bias_name(i), std::move(bias_grads[i]));
  }
  return grads;
}

Tensor2 softmax_rows(const Tensor2& logits) {
  Tensor2 out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto dst = out.row(r);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - peak);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor2& t) {
  std::vector<std::size_t> out(t.rows(), 0);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

LogitLoss loss_on_logits(const Tensor2& logits, const Tensor2& targets, LossSpec spec,
                         std::span<const double> sample_weights) {
  const std::size_t batch = logits.rows();
  if (batch == 0) throw DimensionError("loss on an empty batch");
  if (targets.rows() != batch) {
    throw DimensionError("targets have " + std::to_string(targets.rows()) + " rows, outputs have " +
                         std::to_string(batch));
  }
  if (!sample_weights.empty() && sample_weights.size() != batch) {
    throw DimensionError("sample weight count does not match batch size");
  }
  auto weight = [&](std::size_t b) { return sample_weights.empty() ? 1.0 : sample_weights[b]; };
  const double inv_batch = 1.0 / static_cast<double>(batch);
  LogitLoss out{0.0, Tensor2(batch, logits.cols())};

  if (spec.kind == LossKind::kCrossEntropy) {
    const std::size_t k = logits.cols();
    const bool index_targets = targets.cols() == 1 && k != 1;
    if (!index_targets && targets.cols() != k) {
      throw DimensionError("cross-entropy needs class indices or " + std::to_string(k) +
                           "-way target rows, got " + targets.shape_string());
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const double w = weight(b);
      auto z = logits.row(b);
      const double peak = *std::max_element(z.begin(), z.end());
      double total = 0.0;
      for (double v : z) total += std::exp(v - peak);
      const double log_norm = peak + std::log(total);
      auto g = out.grad.row(b);
      if (index_targets) {
        const double raw = targets(b, 0);
        if (raw < 0.0 || raw >= static_cast<double>(k) || raw != std::floor(raw)) {
          throw DimensionError("class index " + std::to_string(raw) + " out of range for " +
                               std::to_string(k) + " classes");
        }
        const auto cls = static_cast<std::size_t>(raw);
        if (w != 0.0) out.loss += w * (log_norm - z[cls]);
        for (std::size_t c = 0; c < k; ++c) {
          const double p = std::exp(z[c] - log_norm);
          g[c] = w * inv_batch * (p - (c == cls ? 1.0 : 0.0));
        }
      } else {
        auto t = targets.row(b);
        double mass = 0.0;
        double sample_loss = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          mass += t[c];
          if (t[c] != 0.0) sample_loss += t[c] * (log_norm - z[c]);
        }
        if (w != 0.0) out.loss += w * sample_loss;
        for (std::size_t c = 0; c < k; ++c) {
          const double p = std::exp(z[c] - log_norm);
          g[c] = w * inv_batch * (mass * p - t[c]);
        }
      }
    }
  } else {
    if (!targets.same_shape(logits)) {
      throw DimensionError("regression targets " + targets.shape_string() +
                           " do not match outputs " + logits.shape_string());
    }
    const double inv_out = 1.0 / static_cast<double>(logits.cols());
    const bool squared = spec.kind == LossKind::kMeanSquaredError;
    for (std::size_t b = 0; b < batch; ++b) {
      const double w = weight(b);
      auto p = logits.row(b);
      auto t = targets.row(b);
      auto g = out.grad.row(b);
      double sample_loss = 0.0;
      for (std::size_t c = 0; c < p.size(); ++c) {
        const double diff = p[c] - t[c];
        if (squared) {
          sample_loss += diff * diff;
          g[c] = w * inv_batch * inv_out * 2.0 * diff;
        } else {
          sample_loss += std::abs(diff);
          const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          g[c] = w * inv_batch * inv_out * sign;
        }
      }
      out.loss += w * sample_loss * inv_out;
    }
  }
  out.loss *= inv_batch;
  return out;
}

LossAndGrad loss_and_grad(std::span<const DenseLayer> layers, const Tensor2& batch_x,
                          const Tensor2& batch_y, LossSpec spec) {
  if (batch_x.rows() == 0) throw DimensionError("loss_and_grad on an empty batch");
  if (batch_y.rows() != batch_x.rows()) {
    throw DimensionError("batch_y has " + std::to_string(batch_y.rows()) + " rows, batch_x has " +
                         std::to_string(batch_x.rows()));
  }
  auto fwd = forward(layers, batch_x);
  auto loss = loss_on_logits(fwd.logits, batch_y, spec);
  if (!std::isfinite(loss.loss)) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Tensor2& out = i + 1 < layers.size() ? fwd.cache.inputs[i + 1] : fwd.logits;
      check_finite_output(out, i);
    }
    throw NumericError("non-finite loss at output layer " + std::to_string(layers.size() - 1));
  }
  return {loss.loss, backward(layers, fwd.cache, loss.grad)};
}

ParamSet to_params(std::span<const DenseLayer> layers) {
  ParamSet p;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    p.add(weight_name(i), layers[i].weight);
    p.add(bias_name(i), layers[i].bias);
  }
  return p;
}

void assign_params(std::span<DenseLayer> layers, const ParamSet& params) {
  require_compatible(to_params(layers), params, "assign_params");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight = params.entries()[2 * i].value;
    layers[i].bias = params.entries()[2 * i + 1].value;
  }
}

ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  require_compatible(params, grads, "sgd_step");
  ParamSet out = params;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto p = out.entries()[i].value.values();
    auto g = grads.entries()[i].value.values();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
  return out;
}

ParamSet l2_pull_grad(const ParamSet& local, const ParamSet& anchor, double lambda) {
  if (lambda < 0.0) throw ConfigError("pull lambda must be nonnegative");
  require_compatible(local, anchor, "l2_pull_grad");
  ParamSet out = zeros_like(local);
  const double scale = 2.0 * lambda;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto g = out.entries()[i].value.values();
    auto l = local.entries()[i].value.values();
    auto a = anchor.entries()[i].value.values();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = scale * (l[k] - a[k]);
  }
  return out;
}

double l2_pull_value(const ParamSet& local, const ParamSet& anchor, double lambda) {
  require_compatible(local, anchor, "l2_pull_value");
  double acc = 0.0;
  for (std::size_t i = 0; i < local.size(); ++i) {
    auto l = local.entries()[i].value.values();
    auto a = anchor.entries()[i].value.values();
    for (std::size_t k = 0; k < l.size(); ++k) acc += (l[k] - a[k]) * (l[k] - a[k]);
  }
  return lambda * acc;
}

Sgd::Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
}

void Sgd::step(std::span<DenseLayer> layers, const ParamSet& grads, std::size_t first_layer) {
  if (grads.size() != 2 * layers.size()) {
    throw CompatibilityError("Sgd::step: gradient set does not match layer stack");
  }
  if (momentum_ > 0.0 && !velocity_) velocity_ = zeros_like(grads);
  for (std::size_t i = first_layer; i < layers.size(); ++i) {
    for (std::size_t part = 0; part < 2; ++part) {
      Tensor2& target = part == 0 ? layers[i].weight : layers[i].bias;
      const Tensor2& g = grads.entries()[2 * i + part].value;
      if (!target.same_shape(g)) {
        throw CompatibilityError("Sgd::step: shape mismatch at '" +
                                 grads.entries()[2 * i + part].name + "'");
      }
      auto p = target.values();
      auto gv = g.values();
      if (momentum_ > 0.0) {
        auto v = velocity_->entries()[2 * i + part].value.values();
        for (std::size_t k = 0; k < p.size(); ++k) {
          v[k] = momentum_ * v[k] + gv[k];
          p[k] -= lr_ * v[k];
        }
      } else {
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr_ * gv[k];
      }
    }
  }
}

}  // namespace fedsim
