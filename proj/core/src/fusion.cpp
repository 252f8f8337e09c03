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

#include "fedsim/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "fedsim/errors.hpp"
#include "fedsim/simagg.hpp"

namespace fedsim {
namespace {

constexpr std::uint64_t kStep1 = 1;
constexpr std::uint64_t kStep2 = 2;

ParamSet concat(const ParamSet& a, const ParamSet& b) {
  ParamSet out = a;
  for (const auto& e : b) out.add(e.name, e.value);
  return out;
}

ParamSet task_params(const ClientModel& m) { return concat(m.encoder_params(), m.classifier_params()); }

void set_task_params(ClientModel& m, const ParamSet& p) {
  m.set_encoder_params(select_prefix(p, kEncoderPrefix));
  m.set_classifier_params(select_prefix(p, kClassifierPrefix));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Every image in each of the first v rotations; a fixed set for loss reporting.
PretextBatch all_rotations(const Tensor2& images, const ImageMeta& meta, std::size_t v) {
  PretextBatch out{Tensor2(images.rows() * v, images.cols()), Tensor2(images.rows() * v, 1)};
  for (std::size_t q = 0; q < v; ++q) {
    const Tensor2 rotated = rotate_images(images, meta, static_cast<int>(q));
    for (std::size_t r = 0; r < images.rows(); ++r) {
      std::copy(rotated.row(r).begin(), rotated.row(r).end(), out.x.row(q * images.rows() + r).begin());
      out.labels(q * images.rows() + r, 0) = static_cast<double>(q);
    }
  }
  return out;
}

double test_metric(const FusionClient& c) {
  const auto rows = c.test.labelled_rows();
  if (rows.empty()) return std::nan("");
  return evaluate_metric(c.model, select_rows(c.test.x, rows), c.test.targets(rows));
}

}  // namespace

void FusionConfig::validate() const {
  if (rounds_step1 < 1 && rounds_step2 < 1) throw ConfigError("fusion: at least one round is required");
  if (local_epochs < 1) throw ConfigError("fusion.local_epochs must be at least 1");
  if (pretext_classes != 2 && pretext_classes != 4) throw ConfigError("fusion.pretext_classes must be 2 or 4");
  if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0)) {
    throw ConfigError("fusion.confidence_threshold must be in (0, 1)");
  }
  if (!(partial_weight >= 0.0)) throw ConfigError("fusion.partial_weight must be nonnegative");
  if (!(pretext_weight >= 0.0)) throw ConfigError("fusion.pretext_weight must be nonnegative");
  if (!(consistency_weight >= 0.0)) throw ConfigError("fusion.consistency_weight must be nonnegative");
  if (!(lr > 0.0)) throw ConfigError("fusion.lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("fusion.momentum must be in [0, 1)");
}

PretextBatch rotation_pretext_batch(const Tensor2& images, const ImageMeta& meta, std::size_t v, std::uint64_t seed) {
  if (v != 2 && v != 4) throw ConfigError("rotation pretext supports v = 2 or v = 4");
  if (meta.side == 0 || meta.pixels() != images.cols()) {
    throw DimensionError("rotation pretext needs square images; got " + std::to_string(images.cols()) +
                         " columns for side " + std::to_string(meta.side));
  }
  auto rng = make_rng(seed, Stream::kPretext);
  std::uniform_int_distribution<std::size_t> pick(0, v - 1);
  PretextBatch out{Tensor2(images.rows(), images.cols()), Tensor2(images.rows(), 1)};
  for (std::size_t r = 0; r < images.rows(); ++r) {
    const auto q = pick(rng);
    const auto rotated = rotate_image(images.row(r), meta, static_cast<int>(q));
    std::copy(rotated.begin(), rotated.end(), out.x.row(r).begin());
    out.labels(r, 0) = static_cast<double>(q);
  }
  return out;
}

FixMatchResult fixmatch_losses(std::span<const DenseLayer> student, std::span<const DenseLayer> teacher,
                               const std::optional<LabelledBatch>& labelled,
                               const std::optional<UnlabelledBatch>& unlabelled, double confidence_threshold,
                               double l2_weight) {
  if (!labelled && !unlabelled) throw DimensionError("fixmatch_losses: both batches are absent");
  FixMatchResult out;
  out.grads = zeros_like(to_params(student));
  if (labelled) {
    auto fw = forward(student, labelled->x);
    auto ll = loss_on_logits(fw.logits, labelled->y, {LossKind::kCrossEntropy});
    out.l1 = ll.loss;
    out.grads = backward(student, fw.cache, ll.grad);
  }
  if (unlabelled) {
    if (unlabelled->weak.rows() != unlabelled->strong.rows()) {
      throw DimensionError("fixmatch_losses: weak and strong views differ in row count");
    }
    const std::size_t b = unlabelled->weak.rows();
    if (b > 0) {
      const Tensor2 q = softmax_rows(infer(teacher, unlabelled->weak));
      const auto hard = argmax_rows(q);
      std::vector<double> mask(b, 0.0);
      Tensor2 targets(b, 1);
      for (std::size_t i = 0; i < b; ++i) {
        const auto row = q.row(i);
        if (*std::max_element(row.begin(), row.end()) >= confidence_threshold) {
          mask[i] = 1.0;
          ++out.confident;
        }
        targets(i, 0) = static_cast<double>(hard[i]);
      }
      out.mask_rate = static_cast<double>(out.confident) / static_cast<double>(b);
      if (out.confident > 0 && l2_weight > 0.0) {
        auto fw = forward(student, unlabelled->strong);
        auto ll = loss_on_logits(fw.logits, targets, {LossKind::kCrossEntropy}, mask);
        out.l2 = ll.loss;
        axpy(out.grads, l2_weight, backward(student, fw.cache, ll.grad));
      } else if (out.confident > 0) {
        out.l2 = loss_on_logits(infer(student, unlabelled->strong), targets, {LossKind::kCrossEntropy}, mask).loss;
      }
    }
  }
  out.objective = out.l1 + l2_weight * out.l2;
  return out;
}

LossAndGrad consistency_loss_and_grad(const ClientModel& model, const Tensor2& weak, const Tensor2& strong) {
  if (weak.rows() != strong.rows() || weak.rows() == 0) {
    throw DimensionError("consistency loss needs two nonempty views of equal size");
  }
  auto fa = forward(model.encoder(), weak);
  auto fb = forward(model.encoder(), strong);
  const double inv = 1.0 / static_cast<double>(weak.rows());
  Tensor2 ga(fa.logits.rows(), fa.logits.cols());
  Tensor2 gb(fa.logits.rows(), fa.logits.cols());
  LossAndGrad out;
  for (std::size_t i = 0; i < ga.rows(); ++i) {
    for (std::size_t j = 0; j < ga.cols(); ++j) {
      const double d = fa.logits(i, j) - fb.logits(i, j);
      out.loss += d * d;
      ga(i, j) = 2.0 * d * inv;
      gb(i, j) = -2.0 * d * inv;
    }
  }
  out.loss *= inv;
  out.grads = backward(model.encoder(), fa.cache, ga);
  axpy(out.grads, 1.0, backward(model.encoder(), fb.cache, gb));
  return out;
}

double consistency_loss(const ClientModel& model, const Tensor2& weak, const Tensor2& strong) {
  const Tensor2 a = encode(model, weak);
  const Tensor2 b = encode(model, strong);
  if (!a.same_shape(b)) throw DimensionError("consistency loss: view shapes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    total += d * d;
  }
  return a.rows() == 0 ? 0.0 : total / static_cast<double>(a.rows());
}

ParamSet fusion_step1_round(FusionState& state, const ParamSet& global_encoder, const FusionConfig& cfg,
                            std::size_t round) {
  RunTrace& trace = state.trace;
  std::vector<ParamSet> encoders;
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < state.clients.size(); ++i) {
    auto& c = state.clients[i];
    RoundRecord rec;
    rec.phase = "step1";
    rec.round = round;
    rec.client = i;
    if (c.train.n() == 0) {
      rec.participated = false;
      rec.events.push_back("excluded_no_samples");
      trace.add_flag("step1 round " + std::to_string(round) + ": client " + std::to_string(i) +
                     " has no samples and was excluded");
      trace.add_round(std::move(rec));
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    trace.download("step1", round, i, global_encoder);
    c.model.set_encoder_params(global_encoder);
    TrainOptions opt;
    opt.epochs = 1;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;
    opt.batch_size = cfg.batch_size;
    opt.loss = {LossKind::kCrossEntropy};
    auto shuffle = make_rng(state.seed, Stream::kShuffle, {kStep1, i, round});
    if (c.train.status == ClientStatus::kFullyUnlabelled) {
      if (!c.train.image || !c.model.has_pretext()) {
        throw ConfigError("client " + std::to_string(i) + ": the rotation pretext task needs image data");
      }
      Stack stack = c.model.pretext_stack();
      auto pre_rng = make_rng(state.seed, Stream::kPretext, {i, round});
      for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
        const auto batch = rotation_pretext_batch(c.train.x, *c.train.image, cfg.pretext_classes, pre_rng());
        train_supervised(stack, batch.x, batch.labels, opt, shuffle);
      }
      c.model.set_from_pretext_stack(stack);
      const auto eval = all_rotations(c.train.x, *c.train.image, cfg.pretext_classes);
      rec.train_loss = cfg.pretext_weight * loss_on_logits(infer(stack, eval.x), eval.labels, opt.loss).loss;
    } else {
      const auto rows = c.train.labelled_rows();
      const Tensor2 x = select_rows(c.train.x, rows);
      const Tensor2 y = c.train.targets(rows);
      opt.epochs = cfg.local_epochs;
      opt.loss = default_loss(c.train.task);
      train_supervised(c.model.layers, x, y, opt, shuffle);
      rec.train_loss = loss_on_logits(infer(c.model.layers, x), y, opt.loss).loss;
    }
    ClientReport rep;
    rep.client = i;
    rep.n_samples = c.train.n();
    rep.status = c.train.status;
    rep.params = c.model.encoder_params();
    trace.upload("step1", round, rep);
    trace.add_snapshot("step1", round, i, "local", concat(task_params(c.model), c.model.pretext_params()));
    encoders.push_back(std::move(rep.params));
    sizes.push_back(rep.n_samples);
    rec.encoder_norm = c.model.encoder_params().norm();
    rec.classifier_norm = c.model.classifier_params().norm();
    trace.add_round(std::move(rec));
    trace.add_timing("step1", round, i, seconds_since(t0));
  }
  if (encoders.empty()) throw DataError("step1 round " + std::to_string(round) + ": no participating clients");
  ParamSet aggregated = weighted_param_avg(encoders, size_weights(sizes));
  trace.add_snapshot("step1", round, kServer, "server", aggregated);
  return aggregated;
}

ParamSet fusion_step2_round(FusionState& state, const ParamSet& global_model, const FusionConfig& cfg,
                            std::size_t round, bool pseudo_labels) {
  RunTrace& trace = state.trace;
  std::vector<ParamSet> updates;
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < state.clients.size(); ++i) {
    auto& c = state.clients[i];
    RoundRecord rec;
    rec.phase = "step2";
    rec.round = round;
    rec.client = i;
    const ClientStatus status = c.train.status;
    const bool unlabelled_only = status == ClientStatus::kFullyUnlabelled;
    if (c.train.n() == 0 || (unlabelled_only && !pseudo_labels)) {
      rec.participated = false;
      rec.events.push_back(c.train.n() == 0 ? "excluded_no_samples" : "sits_out_without_pseudo_labels");
      trace.add_round(std::move(rec));
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    trace.download("step2", round, i, global_model);
    set_task_params(c.model, global_model);
    const ClientModel teacher = c.model;  // pseudo-labels come from the received global model

    const auto lab_rows = c.train.labelled_rows();
    const auto unl_rows = c.train.unlabelled_rows();
    const bool use_l1 = status != ClientStatus::kFullyUnlabelled && !lab_rows.empty();
    const bool use_l2 = pseudo_labels && status != ClientStatus::kFullyLabelled && !unl_rows.empty();
    const double l2_weight = status == ClientStatus::kPartiallyLabelled ? cfg.partial_weight : 1.0;
    const bool frozen = unlabelled_only && cfg.freeze_unlabelled_encoder;
    const Tensor2 x_lab = select_rows(c.train.x, lab_rows);
    const Tensor2 y_lab = c.train.targets(lab_rows);
    const Tensor2 x_unl = select_rows(c.train.x, unl_rows);

    Sgd opt(cfg.lr, cfg.momentum);
    auto aug_rng = make_rng(state.seed, Stream::kAugment, {kStep2, i, round});
    auto shuffle = make_rng(state.seed, Stream::kShuffle, {kStep2, i, round});
    double last_objective = 0.0;
    double mask_sum = 0.0;
    std::size_t mask_count = 0;
    for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
      const std::uint64_t s_lab = aug_rng();
      const std::uint64_t s_unl = aug_rng();
      const Tensor2 weak_lab = use_l1 ? weak_aug(x_lab, c.train.image, s_lab, cfg.augment) : Tensor2();
      const Tensor2 weak_unl = use_l2 ? weak_aug(x_unl, c.train.image, s_unl, cfg.augment) : Tensor2();
      const Tensor2 strong_unl = use_l2 ? strong_aug(x_unl, c.train.image, s_unl, cfg.augment) : Tensor2();
      const bool full = cfg.batch_size == 0;
      const auto lab_batches = use_l1 ? make_batches(x_lab.rows(), cfg.batch_size, full ? nullptr : &shuffle)
                                      : std::vector<std::vector<std::size_t>>{};
      const auto unl_batches = use_l2 ? make_batches(x_unl.rows(), cfg.batch_size, full ? nullptr : &shuffle)
                                      : std::vector<std::vector<std::size_t>>{};
      const std::size_t steps = std::max(lab_batches.size(), unl_batches.size());
      double epoch_objective = 0.0;
      for (std::size_t s = 0; s < steps; ++s) {
        std::optional<LabelledBatch> lb;
        std::optional<UnlabelledBatch> ub;
        if (!lab_batches.empty()) {
          const auto& rows = lab_batches[s % lab_batches.size()];
          lb = LabelledBatch{select_rows(weak_lab, rows), select_rows(y_lab, rows)};
        }
        if (!unl_batches.empty()) {
          const auto& rows = unl_batches[s % unl_batches.size()];
          ub = UnlabelledBatch{select_rows(weak_unl, rows), select_rows(strong_unl, rows)};
        }
        if (!lb && !ub) break;
        auto fm = fixmatch_losses(c.model.layers, teacher.layers, lb, ub, cfg.confidence_threshold, l2_weight);
        if (ub) {
          mask_sum += fm.mask_rate;
          ++mask_count;
        }
        double objective = fm.objective;
        if (cfg.consistency_weight > 0.0 && ub && !frozen) {
          auto cons = consistency_loss_and_grad(c.model, ub->weak, ub->strong);
          objective += cfg.consistency_weight * cons.loss;
          for (std::size_t k = 0; k < cons.grads.size(); ++k) {
            auto dst = fm.grads.entries()[k].value.values();
            auto src = cons.grads.entries()[k].value.values();
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += cfg.consistency_weight * src[j];
          }
        }
        opt.step(c.model.layers, fm.grads, frozen ? c.model.encoder_depth() : 0);
        epoch_objective += objective;
      }
      last_objective = steps == 0 ? 0.0 : epoch_objective / static_cast<double>(steps);
    }
    rec.train_loss = last_objective;
    if (mask_count > 0) rec.mask_rate = mask_sum / static_cast<double>(mask_count);
    if (frozen) rec.events.push_back("encoder_frozen");

    ClientReport rep;
    rep.client = i;
    rep.n_samples = c.train.n();
    rep.status = status;
    rep.params = task_params(c.model);
    trace.upload("step2", round, rep);
    trace.add_snapshot("step2", round, i, "local", rep.params);
    if (!(frozen && !cfg.include_frozen_in_average)) {
      updates.push_back(std::move(rep.params));
      sizes.push_back(rep.n_samples);
    }
    rec.encoder_norm = c.model.encoder_params().norm();
    rec.classifier_norm = c.model.classifier_params().norm();
    trace.add_round(std::move(rec));
    trace.add_timing("step2", round, i, seconds_since(t0));
  }
  if (updates.empty()) return global_model;
  ParamSet aggregated = weighted_param_avg(updates, size_weights(sizes));
  trace.add_snapshot("step2", round, kServer, "server", aggregated);
  return aggregated;
}

FusionResult run_fusion(std::vector<FusionClient> clients, FusionMode mode, const FusionConfig& cfg,
                        const RunContext& ctx) {
  cfg.validate();
  if (clients.empty()) throw ConfigError("fusion run needs at least one client");
  for (const auto& c : clients) {
    if (c.train.task != Task::kClassification) throw ConfigError("fusion protocols need a classification task");
    c.train.validate();
  }
  for (std::size_t i = 1; i < clients.size(); ++i) {
    require_compatible(task_params(clients[0].model), task_params(clients[i].model),
                       "fusion clients 0 and " + std::to_string(i));
  }

  FusionState state{std::move(clients), RunTrace(ctx.trace), ctx.seed};
  // The server's initial encoder and fresh task head.
  auto server_rng = make_rng(ctx.seed, Stream::kInit, {kServer});
  const ClientModel server_init = build_model(state.clients[0].model.spec, server_rng);
  ParamSet encoder = server_init.encoder_params();

  std::size_t step2_rounds = cfg.rounds_step2;
  if (mode == FusionMode::kSupervisedFedAvg) {
    step2_rounds += cfg.rounds_step1;
  } else {
    for (std::size_t t = 1; t <= cfg.rounds_step1; ++t) encoder = fusion_step1_round(state, encoder, cfg, t);
  }

  ParamSet w = concat(encoder, server_init.classifier_params());
  const bool pseudo = mode == FusionMode::kFedFusionStar;
  for (std::size_t t = 1; t <= step2_rounds; ++t) w = fusion_step2_round(state, w, cfg, t, pseudo);

  FusionResult res;
  res.global_model = w;
  for (std::size_t i = 0; i < state.clients.size(); ++i) {
    auto& c = state.clients[i];
    set_task_params(c.model, w);
    state.trace.download("final", step2_rounds, i, w);
    res.test_metric.push_back(test_metric(c));
    res.models.push_back(c.model);
  }
  res.trace = std::move(state.trace);
  return res;
}

FusionClient make_fusion_client(std::size_t id, ClientDataset train, ClientDataset test, const ModelSpec& spec,
                                const FusionConfig& cfg, std::uint64_t seed) {
  train.client_id = id;
  test.client_id = id;
  auto rng = make_rng(seed, Stream::kInit, {id});
  FusionClient c;
  c.id = id;
  c.model = build_model(spec, rng);
  if (train.status == ClientStatus::kFullyUnlabelled) {
    if (!train.image) throw ConfigError("client " + std::to_string(id) + ": fully unlabelled clients need image data");
    attach_pretext_head(c.model, cfg.pretext_classes, rng);
  }
  c.train = std::move(train);
  c.test = std::move(test);
  return c;
}

}  // namespace fedsim
