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


#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fedsim/errors.hpp"
#include "fedsim/simagg.hpp"
#include "support/fixtures.hpp"

namespace fedsim {
namespace {

using testing::digits_clients;
using testing::snapshots_of;

void expect_same_values(const ParamSet& a, const ParamSet& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a.entries()[k].value, b.entries()[k].value) << a.entries()[k].name;
  }
}

FusionConfig small_config() {
  FusionConfig cfg;
  cfg.rounds_step1 = 2;
  cfg.rounds_step2 = 2;
  cfg.local_epochs = 2;
  cfg.lr = 0.1;
  cfg.confidence_threshold = 0.5;
  return cfg;
}

const RunContext kDump{9, {.dump_params = true}};

TEST(Step1, SendsEncodersOnly) {
  const auto cfg = small_config();
  const auto res = run_fusion(digits_clients({1, 0.5, 0}, 1, cfg), FusionMode::kFedFusion, cfg, kDump);
  std::size_t step1 = 0;
  for (const auto& m : res.trace.messages()) {
    if (m.phase != "step1") continue;
    ++step1;
    EXPECT_NE(m.kind, MessageKind::kLatentSummary);
    for (const auto& n : m.names) EXPECT_EQ(n.rfind("encoder.", 0), 0u) << n;
  }
  EXPECT_GT(step1, 0u);
}

TEST(Step1, UnlabelledClientKeepsTaskHead) {
  const auto cfg = small_config();
  FusionState state{digits_clients({1, 0}, 2, cfg), RunTrace({.dump_params = true}), 2};
  const auto head_before = state.clients[1].model.classifier_params();
  const auto pretext_before = state.clients[1].model.pretext_params();
  const auto agg = fusion_step1_round(state, state.clients[0].model.encoder_params(), cfg, 1);
  expect_same_values(state.clients[1].model.classifier_params(), head_before);
  EXPECT_NE(state.clients[1].model.pretext_params().entries()[0].value, pretext_before.entries()[0].value);
  for (const auto& e : agg) EXPECT_EQ(e.name.rfind("encoder.", 0), 0u);
}

TEST(Step1, EqualSizesGivePlainMean) {
  const auto cfg = small_config();
  FusionState state{digits_clients({1, 1}, 3, cfg), RunTrace({.dump_params = true}), 3};
  ASSERT_EQ(state.clients[0].train.n(), state.clients[1].train.n());
  const auto agg = fusion_step1_round(state, state.clients[0].model.encoder_params(), cfg, 1);
  const std::vector<ParamSet> enc{state.clients[0].model.encoder_params(), state.clients[1].model.encoder_params()};
  const std::vector<double> half{0.5, 0.5};
  expect_same_values(agg, weighted_param_avg(enc, half));
}

TEST(Step1, MixedStatusesAverageBySize) {
  const auto cfg = small_config();
  auto clients = digits_clients({1, 0.5, 0}, 4, cfg, 80);
  clients[0].train = subset_rows(clients[0].train, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  FusionState state{std::move(clients), RunTrace({.dump_params = true}), 4};
  const auto agg = fusion_step1_round(state, state.clients[1].model.encoder_params(), cfg, 1);
  std::vector<ParamSet> enc;
  std::vector<std::size_t> n;
  for (std::size_t i = 0; i < 3; ++i) {
    enc.push_back(select_prefix(snapshots_of(state.trace, "step1", "local", i).at(0), kEncoderPrefix));
    n.push_back(state.clients[i].train.n());
  }
  EXPECT_EQ(n[0], 12u);
  expect_same_values(agg, weighted_param_avg(enc, size_weights(n)));
}

TEST(Step2, FrozenEncoderForUnlabelledClient) {
  auto cfg = small_config();
  const auto res = run_fusion(digits_clients({1, 1, 0}, 5, cfg), FusionMode::kFedFusionStar, cfg, kDump);
  const auto step1_final = snapshots_of(res.trace, "step1", "server", kServer).back();
  const auto servers = snapshots_of(res.trace, "step2", "server", kServer);
  const auto locals = snapshots_of(res.trace, "step2", "local", 2);
  ASSERT_EQ(locals.size(), cfg.rounds_step2);
  for (std::size_t t = 0; t < locals.size(); ++t) {
    const auto received = t == 0 ? step1_final : select_prefix(servers.at(t - 1), kEncoderPrefix);
    expect_same_values(select_prefix(locals[t], kEncoderPrefix), received);
  }
  bool flagged = false;
  for (const auto& r : res.trace.rounds()) {
    if (r.phase == "step2" && r.client == 2) {
      EXPECT_TRUE(r.participated);
      EXPECT_TRUE(r.mask_rate.has_value());
      for (const auto& e : r.events) flagged |= e == "encoder_frozen";
    }
  }
  EXPECT_TRUE(flagged);
}

TEST(Step2, AggregateIsSizeWeighted) {
  auto cfg = small_config();
  const auto res = run_fusion(digits_clients({1, 0.5, 0}, 6, cfg), FusionMode::kFedFusionStar, cfg, kDump);
  const auto servers = snapshots_of(res.trace, "step2", "server", kServer);
  for (std::size_t t = 0; t < cfg.rounds_step2; ++t) {
    std::vector<ParamSet> locals;
    std::vector<std::size_t> n;
    for (std::size_t i = 0; i < 3; ++i) {
      locals.push_back(snapshots_of(res.trace, "step2", "local", i).at(t));
      n.push_back(60 - 15);
    }
    expect_same_values(servers.at(t), weighted_param_avg(locals, size_weights(n)));
  }
  expect_same_values(res.global_model, servers.back());
}

TEST(Step2, FrozenClientCanBeLeftOutOfAverage) {
  auto cfg = small_config();
  cfg.include_frozen_in_average = false;
  const auto res = run_fusion(digits_clients({1, 1, 0}, 7, cfg), FusionMode::kFedFusionStar, cfg, kDump);
  const auto servers = snapshots_of(res.trace, "step2", "server", kServer);
  for (std::size_t t = 0; t < cfg.rounds_step2; ++t) {
    const std::vector<ParamSet> locals{snapshots_of(res.trace, "step2", "local", 0).at(t),
                                       snapshots_of(res.trace, "step2", "local", 1).at(t)};
    const std::vector<double> half{0.5, 0.5};
    expect_same_values(servers.at(t), weighted_param_avg(locals, half));
  }
}

TEST(Step2, UnlabelledSitsOutWithoutPseudoLabels) {
  const auto cfg = small_config();
  const auto res = run_fusion(digits_clients({1, 0.5, 0}, 8, cfg), FusionMode::kFedFusion, cfg, kDump);
  for (const auto& r : res.trace.rounds()) {
    if (r.phase != "step2") continue;
    if (r.client == 2) {
      EXPECT_FALSE(r.participated);
      ASSERT_EQ(r.events.size(), 1u);
      EXPECT_EQ(r.events[0], "sits_out_without_pseudo_labels");
    } else {
      EXPECT_TRUE(r.participated);
      EXPECT_FALSE(r.mask_rate.has_value());  // L1 only
    }
  }
}

TEST(Step2, SupervisedFedAvgUsesWholeBudget) {
  const auto cfg = small_config();
  const auto res = run_fusion(digits_clients({1, 1, 0}, 9, cfg), FusionMode::kSupervisedFedAvg, cfg, kDump);
  std::size_t rounds = 0;
  for (const auto& r : res.trace.rounds()) {
    EXPECT_NE(r.phase, "step1");
    if (r.client == 0) ++rounds;
    if (r.client == 2) EXPECT_FALSE(r.participated);
  }
  EXPECT_EQ(rounds, cfg.rounds_step1 + cfg.rounds_step2);
  ASSERT_EQ(res.test_metric.size(), 3u);
  for (const auto& m : res.models) expect_same_values(select_prefix(model_params(m), kEncoderPrefix),
                                                      select_prefix(res.global_model, kEncoderPrefix));
}

// With every client fully labelled on tabular data (weak view = identity) and
// no pretext rounds, Step 2 is FedAvg started from the server's initial model.
TEST(Step2, AllLabelledMatchesFedAvg) {
  const std::uint64_t seed = 12;
  const auto data = testing::tabular_clients(3, 180, seed);
  const ModelSpec spec = make_spec(6, {8}, 3, Task::kClassification);
  FusionConfig fcfg;
  fcfg.rounds_step1 = 0;
  fcfg.rounds_step2 = 3;
  fcfg.local_epochs = 2;
  fcfg.lr = 0.1;
  std::vector<FusionClient> fclients;
  for (std::size_t i = 0; i < 3; ++i) fclients.push_back(make_fusion_client(i, data.train[i], data.val[i], spec, fcfg, seed));
  const auto fusion = run_fusion(fclients, FusionMode::kFedFusion, fcfg, {seed, {.dump_params = true}});

  auto server_rng = make_rng(seed, Stream::kInit, {kServer});
  const ClientModel init = build_model(spec, server_rng);
  std::vector<SimClient> sclients;
  for (std::size_t i = 0; i < 3; ++i) sclients.push_back({i, data.train[i], data.val[i], init});
  DivEnConfig dcfg;
  dcfg.rounds = fcfg.rounds_step2 + 1;
  dcfg.epochs_init = dcfg.epochs_low = fcfg.local_epochs;
  dcfg.lr = fcfg.lr;
  const auto fedavg = run_baseline(sclients, BaselineKind::kFedAvg, dcfg, {seed, {.dump_params = true}});

  const auto a = snapshots_of(fusion.trace, "step2", "server", kServer);
  const auto b = snapshots_of(fedavg.trace, "local", "server", kServer);
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(b.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) expect_same_values(a[t], b[t]);
}

// --------------------------------------------------------------------------
// FixMatch objective

// Identity 2→2 layer: logits equal inputs.
Stack identity_stack() {
  DenseLayer l;
  l.weight = Tensor2::from_rows({{1, 0}, {0, 1}});
  l.bias = Tensor2(1, 2);
  return {l};
}

UnlabelledBatch confidence_batch() {
  // Teacher confidences 0.9 and 0.6, both on class 0.
  UnlabelledBatch u;
  u.weak = Tensor2::from_rows({{std::log(9.0), 0}, {std::log(1.5), 0}});
  u.strong = Tensor2::from_rows({{0, 1}, {2, 0}});
  return u;
}

TEST(FixMatch, ThresholdMasksLowConfidence) {
  const auto s = identity_stack();
  const auto r = fixmatch_losses(s, s, std::nullopt, confidence_batch(), 0.8, 1.0);
  EXPECT_EQ(r.confident, 1u);
  EXPECT_DOUBLE_EQ(r.mask_rate, 0.5);
  // Only the first row counts, still divided by the full batch size.
  EXPECT_NEAR(r.l2, 0.5 * std::log1p(std::numbers::e), 1e-12);
  EXPECT_DOUBLE_EQ(r.l1, 0.0);
  EXPECT_DOUBLE_EQ(r.objective, r.l2);
}

TEST(FixMatch, ThresholdAboveEveryConfidence) {
  const auto s = identity_stack();
  const auto r = fixmatch_losses(s, s, std::nullopt, confidence_batch(), 0.95, 1.0);
  EXPECT_EQ(r.confident, 0u);
  EXPECT_EQ(r.l2, 0.0);
  for (const auto& e : r.grads) {
    for (double v : e.value.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(FixMatch, TinyThresholdUsesEverySample) {
  const auto s = identity_stack();
  const auto r = fixmatch_losses(s, s, std::nullopt, confidence_batch(), 1e-9, 1.0);
  EXPECT_EQ(r.confident, 2u);
  EXPECT_NEAR(r.l2, 0.5 * (std::log1p(std::numbers::e) + std::log1p(std::exp(-2.0))), 1e-12);
}

TEST(FixMatch, LabelledTermAndWeight) {
  const auto s = identity_stack();
  const LabelledBatch lb{Tensor2::from_rows({{0, 0}}), Tensor2::from_rows({{1}})};
  const auto r = fixmatch_losses(s, s, lb, confidence_batch(), 0.8, 0.25);
  EXPECT_NEAR(r.l1, std::log(2.0), 1e-12);
  EXPECT_NEAR(r.objective, std::log(2.0) + 0.25 * 0.5 * std::log1p(std::numbers::e), 1e-12);
  EXPECT_THROW(fixmatch_losses(s, s, std::nullopt, std::nullopt, 0.5, 1.0), DimensionError);
}

TEST(FixMatch, GradientMatchesFiniteDifference) {
  auto rng = make_rng(3, Stream::kInit);
  Stack student{make_dense(2, 3, Activation::kRelu, rng), make_dense(3, 2, Activation::kIdentity, rng)};
  const auto teacher = student;
  const LabelledBatch lb{testing::random_tensor(3, 2, rng), Tensor2::from_rows({{0}, {1}, {1}})};
  UnlabelledBatch ub{testing::random_tensor(4, 2, rng), testing::random_tensor(4, 2, rng)};
  const double tau = 0.5;
  const auto r = fixmatch_losses(student, teacher, lb, ub, tau, 0.7);
  const double eps = 1e-6;
  for (std::size_t k = 0; k < r.grads.size(); ++k) {
    for (std::size_t j = 0; j < r.grads.entries()[k].value.size(); ++j) {
      auto bump = [&](double d) {
        auto p = to_params(student);
        p.entries()[k].value.values()[j] += d;
        Stack s = student;
        assign_params(s, p);
        return fixmatch_losses(s, teacher, lb, ub, tau, 0.7).objective;
      };
      const double fd = (bump(eps) - bump(-eps)) / (2 * eps);
      EXPECT_NEAR(r.grads.entries()[k].value.values()[j], fd, 1e-6);
    }
  }
}

// --------------------------------------------------------------------------
// Consistency term

ClientModel identity_encoder_model() {
  auto rng = make_rng(0, Stream::kInit);
  auto m = build_model(make_spec(2, {2}, 2, Task::kClassification), rng);
  auto enc = m.encoder_params();
  enc.entries()[0].value = Tensor2::from_rows({{1, 0}, {0, 1}});
  enc.entries()[1].value = Tensor2(1, 2);
  m.set_encoder_params(enc);
  return m;
}

TEST(Consistency, HandExample) {
  const auto m = identity_encoder_model();
  EXPECT_DOUBLE_EQ(consistency_loss(m, Tensor2::from_rows({{1, 0}}), Tensor2::from_rows({{0, 1}})), 2.0);
  EXPECT_DOUBLE_EQ(consistency_loss(m, Tensor2::from_rows({{1, 0}, {0.5, 0.5}}),
                                    Tensor2::from_rows({{0, 1}, {0.5, 0.5}})),
                   1.0);
}

TEST(Consistency, GradientMatchesLoss) {
  auto rng = make_rng(5, Stream::kInit);
  auto m = build_model(make_spec(3, {4, 2}, 2, Task::kClassification), rng);
  // Nonzero biases keep pre-activations off the ReLU kink when a row switches
  // off every unit of the previous layer.
  auto enc = m.encoder_params();
  for (std::size_t k = 1; k < enc.size(); k += 2) enc.entries()[k].value = testing::random_tensor(1, enc.entries()[k].value.cols(), rng, 0.05, 0.2);
  m.set_encoder_params(enc);
  const auto weak = testing::random_tensor(5, 3, rng);
  const auto strong = testing::random_tensor(5, 3, rng);
  const auto lg = consistency_loss_and_grad(m, weak, strong);
  EXPECT_NEAR(lg.loss, consistency_loss(m, weak, strong), 1e-12);
  const double eps = 1e-6;
  for (std::size_t k = 0; k < lg.grads.size(); ++k) {
    for (std::size_t j = 0; j < lg.grads.entries()[k].value.size(); ++j) {
      auto bump = [&](double d) {
        auto p = to_params(m.encoder());
        p.entries()[k].value.values()[j] += d;
        ClientModel c = m;
        assign_params(c.encoder(), p);
        return consistency_loss(c, weak, strong);
      };
      EXPECT_NEAR(lg.grads.entries()[k].value.values()[j], (bump(eps) - bump(-eps)) / (2 * eps), 1e-6);
    }
  }
}

// --------------------------------------------------------------------------
// Pretext task and client construction

TEST(Pretext, LabelsMatchRotations) {
  const ImageMeta meta{4, 1};
  auto rng = make_rng(1, Stream::kAugment);
  const auto x = testing::random_tensor(20, 16, rng, 0, 1);
  const auto b = rotation_pretext_batch(x, meta, 4, 42);
  std::vector<int> seen(4, 0);
  for (std::size_t r = 0; r < 20; ++r) {
    const int q = static_cast<int>(b.labels(r, 0));
    ++seen[static_cast<std::size_t>(q)];
    const auto expected = rotate_image(x.row(r), meta, q);
    EXPECT_TRUE(std::equal(expected.begin(), expected.end(), b.x.row(r).begin()));
  }
  for (int c : seen) EXPECT_GT(c, 0);
  EXPECT_EQ(rotation_pretext_batch(x, meta, 4, 42).x, b.x);
  EXPECT_THROW(rotation_pretext_batch(x, meta, 3, 0), ConfigError);
  EXPECT_THROW(rotation_pretext_batch(x, ImageMeta{3, 1}, 4, 0), DimensionError);
}

TEST(Clients, PretextHeadOnlyForUnlabelled) {
  const auto cfg = small_config();
  const auto c = digits_clients({1, 0.5, 0}, 10, cfg);
  EXPECT_FALSE(c[0].model.has_pretext());
  EXPECT_FALSE(c[1].model.has_pretext());
  ASSERT_TRUE(c[2].model.has_pretext());
  EXPECT_EQ(c[2].model.pretext_stack().back().out_dim(), cfg.pretext_classes);
  // Shared architecture for the task model.
  require_compatible(model_params(c[0].model), model_params(c[2].model), "test");
}

TEST(Clients, UnlabelledTabularRejected) {
  auto data = testing::tabular_clients(1, 40, 0);
  auto train = assign_statuses(data.train, {{0.0, std::nullopt}}, 0);
  EXPECT_THROW(make_fusion_client(0, train[0], data.val[0], make_spec(6, {4}, 3, Task::kClassification),
                                  small_config(), 0),
               ConfigError);
}

TEST(Config, Validation) {
  auto cfg = small_config();
  cfg.pretext_classes = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.confidence_threshold = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.rounds_step1 = cfg.rounds_step2 = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Messages, FusionNeverSharesLatents) {
  const auto cfg = small_config();
  const auto res = run_fusion(digits_clients({1, 0.5, 0}, 11, cfg), FusionMode::kFedFusionStar, cfg, {});
  bool status = false;
  for (const auto& m : res.trace.messages()) {
    EXPECT_NE(m.kind, MessageKind::kLatentSummary);
    EXPECT_NE(m.kind, MessageKind::kMetric);
    status |= m.kind == MessageKind::kStatus;
    for (const auto& n : m.names) EXPECT_EQ(n.find("pretext"), std::string::npos) << n;
  }
  EXPECT_TRUE(status);
}

TEST(Fusion, DeterministicAcrossRuns) {
  const auto cfg = small_config();
  const auto a = run_fusion(digits_clients({1, 0.5, 0}, 12, cfg), FusionMode::kFedFusionStar, cfg, {3, {}});
  const auto b = run_fusion(digits_clients({1, 0.5, 0}, 12, cfg), FusionMode::kFedFusionStar, cfg, {3, {}});
  expect_same_values(a.global_model, b.global_model);
  EXPECT_EQ(a.test_metric, b.test_metric);
}

}  // namespace
}  // namespace fedsim
