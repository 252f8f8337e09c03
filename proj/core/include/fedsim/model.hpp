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
#include "fedsim/local_training.hpp"
#include "fedsim/nn.hpp"

namespace fedsim {

/// Encoder widths plus the fixed classifier architecture shared by all clients.
struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> encoder_layers;     // hidden widths, last one is the latent dim
  std::vector<std::size_t> classifier_hidden;  // hidden widths of the classifier head
  std::size_t num_outputs = 0;
  Task task = Task::kClassification;
  Activation latent_activation = Activation::kRelu;

  std::size_t latent_dim() const { return encoder_layers.empty() ? input_dim : encoder_layers.back(); }
  std::size_t parameter_count() const;
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

// Classifier head defaults to one relu hidden layer of width 2ℓ.
ModelSpec make_spec(std::size_t input_dim, std::vector<std::size_t> encoder_layers,
                    std::size_t num_outputs, Task task);

/// M = C ∘ E, with an optional pretext head P over the same latent.
struct ClientModel {
  ModelSpec spec;
  Stack layers;   // encoder layers followed by classifier layers
  Stack pretext;  // empty unless a pretext head is attached

  std::size_t encoder_depth() const { return spec.encoder_layers.size(); }
  std::span<const DenseLayer> encoder() const { return {layers.data(), encoder_depth()}; }
  std::span<const DenseLayer> classifier() const {
    return {layers.data() + encoder_depth(), layers.size() - encoder_depth()};
  }
  std::span<DenseLayer> encoder() { return {layers.data(), encoder_depth()}; }
  std::span<DenseLayer> classifier() {
    return {layers.data() + encoder_depth(), layers.size() - encoder_depth()};
  }
  bool has_pretext() const { return !pretext.empty(); }

  // Blocks are named "encoder.<i>.weight", "classifier.<i>.bias", ...
  ParamSet encoder_params() const;
  ParamSet classifier_params() const;
  ParamSet pretext_params() const;
  void set_encoder_params(const ParamSet& p);
  void set_classifier_params(const ParamSet& p);
  void set_pretext_params(const ParamSet& p);

  // Encoder followed by the pretext head, as one trainable stack.
  Stack pretext_stack() const;
  void set_from_pretext_stack(const Stack& stack);
};

inline constexpr std::string_view kEncoderPrefix = "encoder.";
inline constexpr std::string_view kClassifierPrefix = "classifier.";
inline constexpr std::string_view kPretextPrefix = "pretext.";

ClientModel build_model(const ModelSpec& spec, Rng& rng);
// Single linear layer ℓ → classes.
void attach_pretext_head(ClientModel& model, std::size_t classes, Rng& rng);

Tensor2 encode(const ClientModel& model, const Tensor2& x);
// Raw classifier outputs (logits or regression values) for given latents.
Tensor2 classifier_forward(const ClientModel& model, const Tensor2& latents);
// Class probabilities for classification, raw outputs for regression.
Tensor2 predict(const ClientModel& model, const Tensor2& x);
std::vector<double> mean_latent(const ClientModel& model, const Tensor2& x);

// Accuracy in percent (classification) or mean absolute error (regression).
double evaluate_metric(const ClientModel& model, const Tensor2& x, const Tensor2& targets);
double evaluate_metric(std::span<const DenseLayer> stack, Task task, const Tensor2& x,
                       const Tensor2& targets);
bool metric_better(double candidate, double incumbent, Task task);

LossSpec default_loss(Task task);

struct SearchOptions {
  std::size_t epochs = 30;
  TrainOptions train;  // epochs ignored; `epochs` above is used
  std::vector<std::size_t> classifier_hidden;  // empty: 2ℓ default
  Activation latent_activation = Activation::kRelu;
  bool use_default_classifier = true;
};

struct SearchResult {
  ModelSpec spec;
  std::size_t menu_index = 0;
  double metric = 0.0;
  std::vector<double> candidate_metrics;  // per evaluated menu entry, menu order; NaN if skipped
  bool used_training_metric = false;      // dataset too small to split
};

/// Picks the encoder widths from `menu` with the best validation metric after
/// a fixed training budget. `budget` menu entries are evaluated (all of them if
/// budget >= menu size). Ties go to the smaller parameter count, then menu order.
SearchResult search_encoder(const ClientDataset& dataset,
                            const std::vector<std::vector<std::size_t>>& menu, std::size_t budget,
                            std::uint64_t seed, const SearchOptions& options);

}  // namespace fedsim
