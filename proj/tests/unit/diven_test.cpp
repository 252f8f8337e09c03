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

#include <algorithm>
#include <numeric>

#include "fedsim/clustering.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/simagg.hpp"
#include "support/fixtures.hpp"

namespace fedsim {
namespace {

using testing::full_batch_config;
using testing::sim_clients;
using testing::snapshots_of;
using testing::tabular_clients;

// Entry-by-entry bitwise equality, ignoring names.
void expect_same_values(const ParamSet& a, const ParamSet& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a.entries()[k].value, b.entries()[k].value) << a.entries()[k].name;
  }
}

void expect_same_models(const std::vector<ClientModel>& a, const std::vector<ClientModel>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) expect_same_values(model_params(a[i]), model_params(b[i]));
}

struct Labelled {
  Tensor2 x, y;
};
Labelled labelled(const SimClient& c) {
  const auto rows = c.train.labelled_rows();
  return {select_rows(c.train.x, rows), c.train.targets(rows)};
}

ClusterAssignment singletons(std::size_t n, std::size_t features) {
  ClusterAssignment a;
  std::vector<std::size_t> all(features);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    a.clusters.push_back({i});
    a.overlaps.push_back(all);
  }
  return a;
}

TEST(DivEn, ZeroLambdaReducesToSingle) {
  const auto data = tabular_clients(4, 240, 1);
  auto cfg = full_batch_config();
  cfg.lambda = 0.0;
  cfg.guard_enabled = false;
  cfg.batch_size = 8;  // the shuffle streams must line up too
  const RunContext ctx{5, {.dump_params = true}};
  const auto diven = run_diven(sim_clients(data, 1), cfg, ctx);
  const auto single = run_baseline(sim_clients(data, 1), BaselineKind::kSingle, cfg, ctx);
  expect_same_models(diven.models, single.models);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto a = snapshots_of(diven.trace, "local", "local", i);
    const auto b = snapshots_of(single.trace, "local", "local", i);
    ASSERT_EQ(a.size(), cfg.rounds - 1);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t r = 0; r < a.size(); ++r) expect_same_values(a[r], b[r]);
  }
}

TEST(DivEn, AnchorAtCurrentHeadAddsNoPullOnFirstStep) {
  const auto data = tabular_clients(1, 80, 2);
  auto a = sim_clients(data, 2).front();
  auto b = a;
  auto cfg = full_batch_config();
  cfg.lambda = 5.0;
  auto rng_a = make_rng(0, Stream::kShuffle);
  auto rng_b = make_rng(0, Stream::kShuffle);
  diven_local_step(a, a.model.classifier_params(), cfg, 1, rng_a);
  diven_local_step(b, std::nullopt, cfg, 1, rng_b);
  expect_same_values(model_params(a.model), model_params(b.model));
}

// Round 2 with one full-batch epoch: θ ← θ − η(∇CE + 2λ(θ_C − anchor)), computed
// by hand from the round-1 dumps.
TEST(DivEn, SecondRoundMatchesScriptedStep) {
  const auto data = tabular_clients(3, 180, 3);
  const auto clients = sim_clients(data, 3);
  auto cfg = full_batch_config(3);
  cfg.epochs_low = 1;
  cfg.lambda = 0.3;
  cfg.guard_enabled = false;
  const auto res = run_diven(clients, cfg, {7, {.dump_params = true}});
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const auto after1 = snapshots_of(res.trace, "local", "server", i).at(0);
    const auto anchor = snapshots_of(res.trace, "local", "anchor", i).at(0);
    const auto after2 = snapshots_of(res.trace, "local", "local", i).at(1);
    ClientModel m = clients[i].model;
    set_model_params(m, after1);
    const auto d = labelled(clients[i]);
    auto lg = loss_and_grad(m.layers, d.x, d.y, default_loss(Task::kClassification));
    const std::size_t depth = m.encoder_depth();
    const auto pg = l2_pull_grad(m.classifier_params(), anchor, cfg.lambda);
    for (std::size_t k = 0; k < pg.size(); ++k) {
      auto dst = lg.grads.entries()[2 * depth + k].value.values();
      auto src = pg.entries()[k].value.values();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    assign_params(m.layers, sgd_step(to_params(m.layers), lg.grads, cfg.lr));
    EXPECT_LE(max_abs_diff(model_params(m), after2), 1e-14) << "client " << i;
  }
}

TEST(DivEn, AnchorsRecomputeFromDumps) {
  const auto data = tabular_clients(4, 240, 4);
  const auto clients = sim_clients(data, 4);
  auto cfg = full_batch_config(4);
  cfg.similarity_temperature = 0.5;
  const auto res = run_diven(clients, cfg, {11, {.dump_params = true, .dump_similarity = true}});
  ASSERT_EQ(res.trace.similarity().size(), cfg.rounds - 1);
  for (std::size_t r = 0; r + 1 < cfg.rounds; ++r) {
    std::vector<std::vector<double>> latents;
    std::vector<ParamSet> heads;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      ClientModel m = clients[i].model;
      set_model_params(m, snapshots_of(res.trace, "local", "local", i).at(r));
      latents.push_back(mean_latent(m, clients[i].train.x));
      heads.push_back(m.classifier_params());
    }
    const auto w = softmax_weights(cosine_matrix(latents).s, cfg.similarity_temperature);
    EXPECT_EQ(w.alpha, res.trace.similarity()[r].alpha);
    const auto global = per_client_global_classifiers(heads, w);
    for (std::size_t i = 0; i < clients.size(); ++i) {
      expect_same_values(global[i], snapshots_of(res.trace, "local", "anchor", i).at(r));
    }
  }
}

TEST(DivEn, SingleClientReducesToSingle) {
  // With one client the anchor is its own head, so a one-step round sees no pull.
  const auto data = tabular_clients(1, 80, 5);
  auto cfg = full_batch_config(5);
  cfg.epochs_low = 1;
  cfg.lambda = 1.0;
  cfg.guard_enabled = false;
  const auto diven = run_diven(sim_clients(data, 5), cfg, {0, {}});
  const auto single = run_baseline(sim_clients(data, 5), BaselineKind::kSingle, cfg, {0, {}});
  expect_same_models(diven.models, single.models);
}

TEST(DivEn, IdenticalClientsStayIdentical) {
  auto data = tabular_clients(1, 80, 6);
  data.train.push_back(data.train[0]);
  data.val.push_back(data.val[0]);
  auto cfg = full_batch_config(5);
  cfg.lambda = 0.5;
  const auto res = run_diven(sim_clients(data, 6, /*shared_init=*/true), cfg, {0, {}});
  expect_same_values(model_params(res.models[0]), model_params(res.models[1]));
}

TEST(DivEn, RoundRecordsAndEpochSchedule) {
  const auto data = tabular_clients(3, 120, 7);
  auto cfg = full_batch_config(4);
  const auto res = run_diven(sim_clients(data, 7), cfg, {0, {}});
  std::size_t local = 0, guard = 0;
  for (const auto& r : res.trace.rounds()) {
    local += r.phase == "local" ? 1 : 0;
    guard += r.phase == "guard" ? 1 : 0;
    if (r.phase == "local") {
      EXPECT_GE(r.round, 1u);
      EXPECT_LE(r.round, cfg.rounds - 1);
    }
  }
  EXPECT_EQ(local, 3 * (cfg.rounds - 1));
  EXPECT_EQ(guard, 3u);
  EXPECT_EQ(res.guard.size(), 3u);
  EXPECT_EQ(cfg.epochs_for_round(1), cfg.epochs_init);
  EXPECT_EQ(cfg.epochs_for_round(2), cfg.epochs_low);
}

TEST(DivEn, ConfigValidation) {
  DivEnConfig cfg;
  cfg.rounds = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.epochs_init = 1;
  cfg.epochs_low = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.similarity_temperature = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.participation_fraction = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.variant = DivEnVariant::kDivenC;
  EXPECT_THROW(run_diven(sim_clients(tabular_clients(1, 40, 0), 0), cfg, {}), ConfigError);
}

TEST(DivEn, PartialParticipation) {
  const auto data = tabular_clients(4, 240, 8);
  auto cfg = full_batch_config(5);
  cfg.participation_fraction = 0.5;
  const auto res = run_diven(sim_clients(data, 8), cfg, {3, {.dump_similarity = true}});
  for (std::size_t r = 1; r < cfg.rounds; ++r) {
    std::size_t n = 0;
    for (const auto& rec : res.trace.rounds()) n += rec.phase == "local" && rec.round == r && rec.participated;
    EXPECT_EQ(n, 2u) << "round " << r;
  }
  for (const auto& s : res.trace.similarity()) EXPECT_EQ(s.clients.size(), 2u);
}

TEST(DivEnMix, AdoptsAnchorAsHead) {
  const auto data = tabular_clients(3, 120, 9);
  auto cfg = full_batch_config(3);
  cfg.variant = DivEnVariant::kDivenMix;
  cfg.guard_enabled = false;
  const auto res = run_diven(sim_clients(data, 9), cfg, {0, {.dump_params = true}});
  for (std::size_t i = 0; i < 3; ++i) {
    const auto anchor = snapshots_of(res.trace, "local", "anchor", i).back();
    expect_same_values(res.models[i].classifier_params(), anchor);
  }
}

// --------------------------------------------------------------------------
// Guard

struct GuardSetup {
  SimClient client;
  ParamSet good;
  double good_acc;
};

GuardSetup trained_client(std::uint64_t seed) {
  const auto data = tabular_clients(1, 150, seed);
  auto c = sim_clients(data, seed).front();
  auto cfg = full_batch_config();
  auto rng = make_rng(seed, Stream::kShuffle);
  const auto step = diven_local_step(c, std::nullopt, cfg, 60, rng);
  return {c, model_params(c.model), step.val_metric};
}

TEST(Guard, NoOpAboveThreshold) {
  auto s = trained_client(10);
  const auto before = model_params(s.client.model);
  auto rng = make_rng(0, Stream::kShuffle);
  const auto out = negative_transfer_guard(s.client, s.good_acc - 1.0, s.good, full_batch_config(), rng);
  EXPECT_FALSE(out.triggered);
  EXPECT_FALSE(out.reverted);
  EXPECT_EQ(out.final_acc, out.pre_guard_acc);
  expect_same_values(model_params(s.client.model), before);
}

TEST(Guard, RevertsPoisonedModel) {
  auto s = trained_client(11);
  ASSERT_GT(s.good_acc, 60.0);
  // Poison the head: every logit bias points at one class.
  auto head = s.client.model.classifier_params();
  for (auto& e : head) {
    for (auto& v : e.value.values()) v = 0.0;
  }
  head.entries().back().value(0, 0) = 50.0;
  s.client.model.set_classifier_params(head);
  auto rng = make_rng(0, Stream::kShuffle);
  const auto out = negative_transfer_guard(s.client, s.good_acc, s.good, full_batch_config(), rng);
  EXPECT_TRUE(out.triggered);
  EXPECT_TRUE(out.reverted);
  EXPECT_LT(out.pre_guard_acc, s.good_acc);
  EXPECT_GE(out.final_acc, out.pre_guard_acc);
  EXPECT_EQ(out.final_acc, validation_metric(s.client));
}

TEST(Guard, KeepsFinalWhenRetrainIsWorse) {
  auto s = trained_client(12);
  // A threshold no model can reach, with a useless threshold snapshot.
  auto useless = s.good;
  for (auto& e : useless) {
    for (auto& v : e.value.values()) v = 0.0;
  }
  const auto before = model_params(s.client.model);
  auto cfg = full_batch_config();
  cfg.lr = 1e-9;
  auto rng = make_rng(0, Stream::kShuffle);
  const auto out = negative_transfer_guard(s.client, 101.0, useless, cfg, rng);
  EXPECT_TRUE(out.triggered);
  EXPECT_FALSE(out.reverted);
  expect_same_values(model_params(s.client.model), before);
}

TEST(Guard, DisabledLeavesNoRecords) {
  const auto data = tabular_clients(2, 80, 13);
  auto cfg = full_batch_config(3);
  cfg.guard_enabled = false;
  const auto res = run_diven(sim_clients(data, 13), cfg, {});
  EXPECT_TRUE(res.guard.empty());
  for (const auto& r : res.trace.rounds()) EXPECT_NE(r.phase, "guard");
}

// --------------------------------------------------------------------------
// Clustered variant

TEST(DivEnC, SingletonClustersReduceToDiven) {
  const auto data = tabular_clients(3, 180, 14);
  auto cfg = full_batch_config(4);
  cfg.batch_size = 16;
  const auto clients = sim_clients(data, 14);
  const auto a = run_diven(clients, cfg, {2, {}});
  const auto b = run_diven_c(clients, cfg, singletons(3, 6), {2, {}});
  expect_same_models(a.models, b.models);
  ASSERT_EQ(a.guard.size(), b.guard.size());
  for (std::size_t i = 0; i < a.guard.size(); ++i) EXPECT_EQ(a.guard[i].final_acc, b.guard[i].final_acc);
}

TEST(DivEnC, OneClusterWithoutPullIsFedAvg) {
  const auto data = tabular_clients(3, 180, 15);
  auto cfg = full_batch_config(4);
  cfg.lambda = 0.0;
  cfg.guard_enabled = false;
  const auto clients = sim_clients(data, 15, /*shared_init=*/true);
  ClusterAssignment one;
  one.clusters = {{0, 1, 2}};
  one.overlaps = {{0, 1, 2, 3, 4, 5}};
  const auto c = run_diven_c(clients, cfg, one, {});
  const auto f = run_baseline(clients, BaselineKind::kFedAvg, cfg, {});
  expect_same_models(c.models, f.models);
}

TEST(DivEnC, TwoClustersAverageBySize) {
  auto data = tabular_clients(4, 200, 16);
  // Unequal sizes so that size weighting differs from a plain mean.
  data.train[1] = subset_rows(data.train[1], {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto clients = sim_clients(data, 16, /*shared_init=*/true);
  ClusterAssignment two;
  two.clusters = {{0, 1}, {2, 3}};
  two.overlaps = {{0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5}};
  auto cfg = full_batch_config(3);
  const auto res = run_diven_c(clients, cfg, two, {0, {.dump_params = true}});
  for (const auto& group : two.clusters) {
    std::vector<ParamSet> locals;
    std::vector<std::size_t> sizes;
    for (auto i : group) {
      locals.push_back(snapshots_of(res.trace, "local", "local", i).at(0));
      sizes.push_back(clients[i].train.labelled_rows().size());
    }
    const auto expected = weighted_param_avg(locals, size_weights(sizes));
    for (auto i : group) expect_same_values(snapshots_of(res.trace, "local", "server", i).at(0), expected);
  }
}

TEST(DivEnC, UncoveredClientRejected) {
  const auto data = tabular_clients(3, 90, 17);
  ClusterAssignment partial;
  partial.clusters = {{0, 1}};
  partial.overlaps = {{0, 1, 2, 3, 4, 5}};
  EXPECT_ANY_THROW(run_diven_c(sim_clients(data, 17), full_batch_config(), partial, {}));
}

TEST(DivEnC, ClusteredClientsShareRepresentativeInit) {
  const auto data = tabular_clients(4, 200, 18);
  ClusterAssignment two;
  two.clusters = {{0, 2}, {1, 3}};
  two.overlaps = {{0, 2, 4}, {1, 3}};
  const auto cc = make_clustered_clients(data.train, data.val, two, testing::tiny_model_options(), 18);
  ASSERT_EQ(cc.representatives.size(), 2u);
  expect_same_values(model_params(cc.clients[0].model), model_params(cc.clients[2].model));
  expect_same_values(model_params(cc.clients[1].model), model_params(cc.clients[3].model));
  EXPECT_EQ(cc.clients[0].train.x.cols(), 3u);
  EXPECT_EQ(cc.clients[3].train.x.cols(), 2u);
  EXPECT_EQ(cc.clients[3].train.features.indices, (std::vector<std::size_t>{1, 3}));
}

// --------------------------------------------------------------------------
// Baselines

TEST(Baselines, SingleEqualsOneLongRun) {
  const auto data = tabular_clients(1, 90, 19);
  auto cfg = full_batch_config(5);
  cfg.epochs_init = cfg.epochs_low = 3;
  const auto clients = sim_clients(data, 19);
  const auto res = run_baseline(clients, BaselineKind::kSingle, cfg, {});
  auto model = clients[0].model;
  const auto d = labelled(clients[0]);
  TrainOptions opt;
  opt.epochs = 3 * (cfg.rounds - 1);
  opt.lr = cfg.lr;
  auto rng = make_rng(0, Stream::kShuffle);
  train_supervised(model.layers, d.x, d.y, opt, rng);
  expect_same_values(model_params(res.models[0]), model_params(model));
}

TEST(Baselines, ClassAggWithOneClientIsSingle) {
  const auto data = tabular_clients(1, 90, 20);
  const auto cfg = full_batch_config(4);
  const auto a = run_baseline(sim_clients(data, 20), BaselineKind::kClassAgg, cfg, {});
  const auto b = run_baseline(sim_clients(data, 20), BaselineKind::kSingle, cfg, {});
  expect_same_models(a.models, b.models);
}

TEST(Baselines, ClassAggSharesOnlyTheHead) {
  const auto data = tabular_clients(3, 120, 21);
  const auto res = run_baseline(sim_clients(data, 21), BaselineKind::kClassAgg, full_batch_config(3), {});
  for (std::size_t i = 1; i < 3; ++i) {
    expect_same_values(res.models[0].classifier_params(), res.models[i].classifier_params());
    EXPECT_NE(res.models[0].encoder_params().entries()[0].value, res.models[i].encoder_params().entries()[0].value);
  }
}

TEST(Baselines, FedAvgIsOrderInvariant) {
  const auto data = tabular_clients(3, 150, 22);
  const auto cfg = full_batch_config(4);
  auto clients = sim_clients(data, 22, /*shared_init=*/true);
  const auto a = run_baseline(clients, BaselineKind::kFedAvg, cfg, {0, {.dump_params = true}});
  std::reverse(clients.begin(), clients.end());
  const auto b = run_baseline(clients, BaselineKind::kFedAvg, cfg, {0, {.dump_params = true}});
  const auto sa = snapshots_of(a.trace, "local", "server", kServer);
  const auto sb = snapshots_of(b.trace, "local", "server", kServer);
  ASSERT_EQ(sa.size(), cfg.rounds - 1);
  for (std::size_t r = 0; r < sa.size(); ++r) EXPECT_LE(max_abs_diff(sa[r], sb[r]), 1e-12);
  for (std::size_t i = 0; i < 3; ++i) expect_same_values(model_params(a.models[i]), model_params(a.models[0]));
}

TEST(Baselines, FedAvgNeedsOneArchitecture) {
  auto data = tabular_clients(2, 80, 23);
  auto clients = sim_clients(data, 23);
  auto opts = testing::tiny_model_options();
  opts.menu = {{5}};
  clients[1] = make_sim_client(1, data.train[1], data.val[1], opts, 23);
  EXPECT_THROW(run_baseline(clients, BaselineKind::kFedAvg, full_batch_config(), {}), CompatibilityError);
}

// --------------------------------------------------------------------------
// Messages

TEST(Messages, DivEnSharesHeadsAndLatentsOnly) {
  const auto data = tabular_clients(3, 120, 24);
  const auto res = run_diven(sim_clients(data, 24), full_batch_config(3), {});
  bool saw_latent = false;
  for (const auto& m : res.trace.messages()) {
    if (m.kind == MessageKind::kLatentSummary) saw_latent = true;
    for (const auto& name : m.names) EXPECT_EQ(name.rfind("classifier.", 0), 0u) << name;
  }
  EXPECT_TRUE(saw_latent);
}

TEST(Messages, SingleSendsNothing) {
  const auto data = tabular_clients(2, 80, 25);
  const auto res = run_baseline(sim_clients(data, 25), BaselineKind::kSingle, full_batch_config(3), {});
  EXPECT_TRUE(res.trace.messages().empty());
}

}  // namespace
}  // namespace fedsim
