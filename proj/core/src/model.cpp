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

#include "fedsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedsim/errors.hpp"

namespace fedsim {

std::size_t ModelSpec::parameter_count() const {
  std::size_t count = 0;
  std::size_t in = input_dim;
  auto add = [&](std::size_t out) {
    count += in * out + out;
    in = out;
  };
  for (auto w : encoder_layers) add(w);
  for (auto w : classifier_hidden) add(w);
  add(num_outputs);
  return count;
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
  if (num_outputs == 0) throw ConfigError("model: num_outputs must be positive");
  for (auto w : encoder_layers) {
    if (w == 0) throw ConfigError("model: encoder widths must be positive");
  }
  for (auto w : classifier_hidden) {
    if (w == 0) throw ConfigError("model: classifier widths must be positive");
  }
}

ModelSpec make_spec(std::size_t input_dim, std::vector<std::size_t> encoder_layers,
                    std::size_t num_outputs, Task task) {
  ModelSpec spec;
  spec.input_dim = input_dim;
  spec.encoder_layers = std::move(encoder_layers);
  spec.num_outputs = num_outputs;
  spec.task = task;
  spec.classifier_hidden = {2 * spec.latent_dim()};
  return spec;
}

ParamSet ClientModel::encoder_params() const { return with_prefix(to_params(encoder()), kEncoderPrefix); }
ParamSet ClientModel::classifier_params() const {
  return with_prefix(to_params(classifier()), kClassifierPrefix);
}
ParamSet ClientModel::pretext_params() const { return with_prefix(to_params(pretext), kPretextPrefix); }

void ClientModel::set_encoder_params(const ParamSet& p) { assign_params(encoder(), strip_prefix(p, kEncoderPrefix)); }
void ClientModel::set_classifier_params(const ParamSet& p) {
  assign_params(classifier(), strip_prefix(p, kClassifierPrefix));
}
void ClientModel::set_pretext_params(const ParamSet& p) { assign_params(pretext, strip_prefix(p, kPretextPrefix)); }

Stack ClientModel::pretext_stack() const {
  Stack s(layers.begin(), layers.begin() + static_cast<long>(encoder_depth()));
  s.insert(s.end(), pretext.begin(), pretext.end());
  return s;
}

void ClientModel::set_from_pretext_stack(const Stack& stack) {
  if (stack.size() != encoder_depth() + pretext.size()) {
    throw DimensionError("pretext stack does not match the model");
  }
  std::copy(stack.begin(), stack.begin() + static_cast<long>(encoder_depth()), layers.begin());
  std::copy(stack.begin() + static_cast<long>(encoder_depth()), stack.end(), pretext.begin());
}

ClientModel build_model(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ClientModel m;
  m.spec = spec;
  std::size_t in = spec.input_dim;
  for (std::size_t i = 0; i < spec.encoder_layers.size(); ++i) {
    const bool last = i + 1 == spec.encoder_layers.size();
    const auto act = last ? spec.latent_activation : Activation::kRelu;
    m.layers.push_back(make_dense(in, spec.encoder_layers[i], act, rng));
    in = spec.encoder_layers[i];
  }
  for (auto w : spec.classifier_hidden) {
    m.layers.push_back(make_dense(in, w, Activation::kRelu, rng));
    in = w;
  }
  m.layers.push_back(make_dense(in, spec.num_outputs, Activation::kIdentity, rng));
  return m;
}

void attach_pretext_head(ClientModel& model, std::size_t classes, Rng& rng) {
  if (classes < 2) throw ConfigError("pretext head needs at least two classes");
  model.pretext = {make_dense(model.spec.latent_dim(), classes, Activation::kIdentity, rng)};
}

Tensor2 encode(const ClientModel& model, const Tensor2& x) {
  if (x.cols() != model.spec.input_dim) {
    throw DimensionError("encode: expected " + std::to_string(model.spec.input_dim) +
                         " input columns, got " + std::to_string(x.cols()));
  }
  return infer(model.encoder(), x);
}

Tensor2 classifier_forward(const ClientModel& model, const Tensor2& latents) {
  return infer(model.classifier(), latents);
}

Tensor2 predict(const ClientModel& model, const Tensor2& x) {
  Tensor2 out = classifier_forward(model, encode(model, x));
  return model.spec.task == Task::kClassification ? softmax_rows(out) : out;
}

std::vector<double> mean_latent(const ClientModel& model, const Tensor2& x) {
  if (x.rows() == 0) throw DimensionError("mean_latent: empty input");
  return column_means(encode(model, x));
}

double evaluate_metric(std::span<const DenseLayer> stack, Task task, const Tensor2& x,
                       const Tensor2& targets) {
  if (x.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Tensor2 out = infer(stack, x);
  if (task == Task::kClassification) {
    const auto pred = argmax_rows(out);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < pred.size(); ++r) {
      if (static_cast<double>(pred[r]) == targets(r, 0)) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
  }
  double total = 0.0;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) total += std::abs(out(r, c) - targets(r, c));
  }
  return total / static_cast<double>(out.size());
}

double evaluate_metric(const ClientModel& model, const Tensor2& x, const Tensor2& targets) {
  return evaluate_metric(model.layers, model.spec.task, x, targets);
}

bool metric_better(double candidate, double incumbent, Task task) {
  if (std::isnan(candidate)) return false;
  if (std::isnan(incumbent)) return true;
  return task == Task::kClassification ? candidate > incumbent : candidate < incumbent;
}

LossSpec default_loss(Task task) {
  return {task == Task::kClassification ? LossKind::kCrossEntropy : LossKind::kMeanSquaredError};
}

SearchResult search_encoder(const ClientDataset& dataset,
                            const std::vector<std::vector<std::size_t>>& menu, std::size_t budget,
                            std::uint64_t seed, const SearchOptions& options) {
  if (menu.empty()) throw ConfigError("search_encoder: empty menu");
  if (budget == 0) throw ConfigError("search_encoder: budget must be at least 1");
  const std::size_t outputs = dataset.task == Task::kClassification ? dataset.num_classes : 1;

  auto make_candidate = [&](std::size_t idx) {
    ModelSpec spec = make_spec(dataset.x.cols(), menu[idx], outputs, dataset.task);
    if (!options.use_default_classifier) spec.classifier_hidden = options.classifier_hidden;
    spec.latent_activation = options.latent_activation;
    return spec;
  };

  SearchResult result;
  result.candidate_metrics.assign(menu.size(), std::numeric_limits<double>::quiet_NaN());
  if (menu.size() == 1) {
    result.spec = make_candidate(0);
    return result;
  }

  std::vector<std::size_t> candidates(menu.size());
  std::iota(candidates.begin(), candidates.end(), 0);
  if (budget < menu.size()) {
    auto rng = make_rng(seed, Stream::kSearch, {dataset.client_id, 0});
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(budget);
    std::sort(candidates.begin(), candidates.end());
  }

  const auto labelled = dataset.labelled_rows();
  ClientDataset usable = subset_rows(dataset, labelled);
  ClientDataset train = usable;
  ClientDataset val = usable;
  if (usable.n() >= 10) {
    auto split = split_holdout(usable, 0.2, seed ^ 0x5eed5eedULL);
    train = std::move(split.train);
    val = std::move(split.holdout);
  } else {
    result.used_training_metric = true;
  }
  if (train.n() == 0) throw DataError("search_encoder: no labelled rows");
  const Tensor2 train_y = train.targets([&] {
    std::vector<std::size_t> r(train.n());
    std::iota(r.begin(), r.end(), 0);
    return r;
  }());
  const Tensor2 val_y = val.targets([&] {
    std::vector<std::size_t> r(val.n());
    std::iota(r.begin(), r.end(), 0);
    return r;
  }());

  TrainOptions train_options = options.train;
  train_options.epochs = options.epochs;
  std::size_t best = candidates.front();
  double best_metric = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_params = 0;
  for (auto idx : candidates) {
    const ModelSpec spec = make_candidate(idx);
    auto init_rng = make_rng(seed, Stream::kSearch, {dataset.client_id, 1, idx});
    ClientModel model = build_model(spec, init_rng);
    auto shuffle_rng = make_rng(seed, Stream::kSearch, {dataset.client_id, 2, idx});
    train_supervised(model.layers, train.x, train_y, train_options, shuffle_rng);
    const double metric = evaluate_metric(model, val.x, val_y);
    result.candidate_metrics[idx] = metric;
    const std::size_t params = spec.parameter_count();
    const bool better = metric_better(metric, best_metric, dataset.task);
    const bool tie = metric == best_metric && params < best_params;
    if (std::isnan(best_metric) || better || tie) {
      best = idx;
      best_metric = metric;
      best_params = params;
    }
  }
  result.spec = make_candidate(best);
  result.menu_index = best;
  result.metric = best_metric;
  return result;
}

}  // namespace fedsim
