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

#include "fedsim/diven.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

enum class Mode { kSingle, kClassAgg, kFedAvg, kDiven, kDivenMix, kDivenC };

ParamSet concat(const ParamSet& a, const ParamSet& b) {
  ParamSet out = a;
  for (const auto& e : b) out.add(e.name, e.value);
  return out;
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

struct Labelled {
  Tensor2 x;
  Tensor2 y;
};

Labelled labelled_data(const ClientDataset& d) {
  const auto rows = d.labelled_rows();
  if (rows.empty()) throw DataError("client " + std::to_string(d.client_id) + " has no labelled training rows");
  return {select_rows(d.x, rows), d.targets(rows)};
}

std::vector<std::size_t> choose_participants(std::size_t n, double fraction, std::uint64_t seed,
                                             std::size_t round) {
  auto all = iota_rows(n);
  if (fraction >= 1.0) return all;
  const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
  auto rng = make_rng(seed, Stream::kParticipation, {round});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(m);
  std::sort(all.begin(), all.end());
  return all;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool uses_pull(Mode m) { return m == Mode::kDiven || m == Mode::kDivenMix || m == Mode::kDivenC; }

struct Similarity {
  std::vector<ParamSet> global;  // θ_CG per participant
  SimilarityRecord record;
};

Similarity similarity_share(const std::vector<std::size_t>& parts, const std::vector<std::vector<double>>& latents,
                            const std::vector<ParamSet>& classifiers, double temperature, std::size_t round) {
  const auto cos = cosine_matrix(latents);
  const auto w = softmax_weights(cos.s, temperature);
  Similarity out;
  out.global = per_client_global_classifiers(classifiers, w);
  out.record.round = round;
  out.record.clients = parts;
  out.record.s = w.s;
  out.record.alpha = w.alpha;
  for (auto d : cos.degenerate) out.record.degenerate.push_back(parts[d]);
  return out;
}

ProtocolResult run_engine(std::vector<SimClient> clients, const DivEnConfig& cfg, Mode mode,
                          const ClusterAssignment* assignment, const RunContext& ctx) {
  cfg.validate();
  const std::size_t n = clients.size();
  if (n == 0) throw ConfigError("protocol run needs at least one client");
  for (std::size_t i = 1; i < n; ++i) {
    require_compatible(clients[0].model.classifier_params(), clients[i].model.classifier_params(),
                       "classifier heads of clients 0 and " + std::to_string(i));
  }
  if (mode == Mode::kFedAvg) {
    for (std::size_t i = 1; i < n; ++i) {
      require_compatible(model_params(clients[0].model), model_params(clients[i].model),
                         "fedavg needs identical architectures; client " + std::to_string(i));
    }
  }
  std::vector<std::size_t> cluster_of;
  if (mode == Mode::kDivenC) {
    cluster_of = assignment->cluster_of(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (cluster_of[i] >= assignment->clusters.size()) {
        throw ConfigError("cluster assignment does not cover client " + std::to_string(i));
      }
    }
  }

  ProtocolResult res{{}, RunTrace(ctx.trace), {}, {}};
  RunTrace& trace = res.trace;
  std::vector<std::size_t> sizes(n);
  for (std::size_t i = 0; i < n; ++i) sizes[i] = clients[i].train.labelled_rows().size();

  const bool pull = uses_pull(mode);
  const bool guard = pull && cfg.guard_enabled;
  std::vector<std::optional<ParamSet>> anchors(n);
  std::vector<std::optional<double>> threshold_acc(n);
  std::vector<ParamSet> threshold_params(n);

  for (std::size_t r = 1; r <= cfg.rounds - 1; ++r) {
    const auto parts = choose_participants(n, cfg.participation_fraction, ctx.seed, r);
    std::vector<RoundRecord> records(n);
    for (std::size_t i = 0; i < n; ++i) {
      records[i].phase = "local";
      records[i].round = r;
      records[i].client = i;
      records[i].participated = false;
    }
    std::vector<ClientReport> reports;
    for (auto i : parts) {
      auto& c = clients[i];
      const auto t0 = std::chrono::steady_clock::now();
      auto rng = make_rng(ctx.seed, Stream::kShuffle, {i, r});
      LocalStepResult step;
      try {
        step = diven_local_step(c, pull ? anchors[i] : std::nullopt, cfg, cfg.epochs_for_round(r), rng);
      } catch (const std::exception& e) {
        throw std::runtime_error("round " + std::to_string(r) + ", client " + std::to_string(i) + ": " + e.what());
      }
      if (guard && !threshold_acc[i]) {
        threshold_acc[i] = step.val_metric;
        threshold_params[i] = model_params(c.model);
      }
      auto& rec = records[i];
      rec.participated = true;
      rec.train_loss = step.train_loss;
      rec.val_metric = step.val_metric;
      trace.add_snapshot("local", r, i, "local", model_params(c.model));

      ClientReport rep;
      rep.client = i;
      rep.n_samples = sizes[i];
      rep.metric = step.val_metric;
      switch (mode) {
        case Mode::kSingle: break;
        case Mode::kClassAgg: rep.params = c.model.classifier_params(); break;
        case Mode::kFedAvg:
        case Mode::kDivenC: rep.params = model_params(c.model); break;
        case Mode::kDiven:
        case Mode::kDivenMix:
          rep.params = c.model.classifier_params();
          rep.latent = mean_latent(c.model, c.train.x);
          break;
      }
      if (mode != Mode::kSingle) trace.upload("local", r, rep);
      reports.push_back(std::move(rep));
      trace.add_timing("local", r, i, seconds_since(t0));
    }

    // Server side: consumes only the reports.
    auto size_of = [&](const ClientReport& rep) { return rep.n_samples; };
    if (mode == Mode::kClassAgg) {
      std::vector<ParamSet> heads;
      for (const auto& rep : reports) heads.push_back(rep.params);
      const std::vector<double> w(heads.size(), 1.0 / static_cast<double>(heads.size()));
      const ParamSet avg = weighted_param_avg(heads, w);
      trace.add_snapshot("local", r, kServer, "server", avg);
      for (std::size_t i = 0; i < n; ++i) {
        trace.download("local", r, i, avg);
        clients[i].model.set_classifier_params(avg);
      }
    } else if (mode == Mode::kFedAvg) {
      std::vector<ParamSet> all;
      std::vector<std::size_t> ns;
      for (const auto& rep : reports) {
        all.push_back(rep.params);
        ns.push_back(size_of(rep));
      }
      const ParamSet avg = weighted_param_avg(all, size_weights(ns));
      trace.add_snapshot("local", r, kServer, "server", avg);
      for (std::size_t i = 0; i < n; ++i) {
        trace.download("local", r, i, avg);
        set_model_params(clients[i].model, avg);
      }
    } else if (mode == Mode::kDivenC) {
      for (std::size_t k = 0; k < assignment->clusters.size(); ++k) {
        std::vector<ParamSet> member_params;
        std::vector<std::size_t> ns;
        for (std::size_t p = 0; p < parts.size(); ++p) {
          if (cluster_of[parts[p]] != k) continue;
          member_params.push_back(reports[p].params);
          ns.push_back(size_of(reports[p]));
        }
        if (member_params.empty()) continue;
        const ParamSet avg = weighted_param_avg(member_params, size_weights(ns));
        for (auto i : assignment->clusters[k]) {
          trace.download("local", r, i, avg);
          set_model_params(clients[i].model, avg);
        }
      }
    }

    if (pull) {
      std::vector<std::vector<double>> latents;
      std::vector<ParamSet> heads;
      for (std::size_t p = 0; p < parts.size(); ++p) {
        if (mode == Mode::kDivenC) {
          // Members compute their summary with the cluster encoder they just received.
          ClientReport rep;
          rep.client = parts[p];
          rep.n_samples = sizes[parts[p]];
          rep.params = clients[parts[p]].model.classifier_params();
          rep.latent = mean_latent(clients[parts[p]].model, clients[parts[p]].train.x);
          trace.upload("share", r, rep);
          latents.push_back(std::move(rep.latent));
          heads.push_back(std::move(rep.params));
        } else {
          latents.push_back(reports[p].latent);
          heads.push_back(reports[p].params);
        }
      }
      auto sim = similarity_share(parts, latents, heads, cfg.similarity_temperature, r);
      for (auto d : sim.record.degenerate) records[d].events.push_back("zero_latent");
      for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto i = parts[p];
        trace.download("share", r, i, sim.global[p]);
        trace.add_snapshot("local", r, i, "anchor", sim.global[p]);
        if (mode == Mode::kDivenMix) clients[i].model.set_classifier_params(sim.global[p]);
        anchors[i] = std::move(sim.global[p]);
      }
      trace.add_similarity(std::move(sim.record));
    }

    for (std::size_t i = 0; i < n; ++i) {
      records[i].encoder_norm = clients[i].model.encoder_params().norm();
      records[i].classifier_norm = clients[i].model.classifier_params().norm();
      if (mode != Mode::kSingle) trace.add_snapshot("local", r, i, "server", model_params(clients[i].model));
      trace.add_round(std::move(records[i]));
    }
  }

  if (guard) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!threshold_acc[i]) continue;
      auto rng = make_rng(ctx.seed, Stream::kShuffle, {i, cfg.rounds, 1});
      auto outcome = negative_transfer_guard(clients[i], *threshold_acc[i], threshold_params[i], cfg, rng);
      outcome.client = i;
      RoundRecord rec;
      rec.phase = "guard";
      rec.round = cfg.rounds;
      rec.client = i;
      rec.train_loss = training_loss(clients[i]);
      rec.val_metric = outcome.final_acc;
      rec.encoder_norm = clients[i].model.encoder_params().norm();
      rec.classifier_norm = clients[i].model.classifier_params().norm();
      if (outcome.triggered) rec.events.push_back(outcome.reverted ? "guard_reverted" : "guard_kept_final");
      trace.add_round(std::move(rec));
      res.guard.push_back(outcome);
    }
  }

  for (auto& c : clients) {
    res.final_val.push_back(validation_metric(c));
    res.models.push_back(std::move(c.model));
  }
  return res;
}

}  // namespace

void DivEnConfig::validate() const {
  if (rounds < 2) throw ConfigError("diven.rounds must be at least 2");
  if (epochs_low < 1) throw ConfigError("diven.epochs_low must be at least 1");
  if (epochs_init < epochs_low) throw ConfigError("diven.epochs_init must be >= diven.epochs_low");
  if (!(lambda >= 0.0)) throw ConfigError("diven.pull_lambda must be nonnegative");
  if (!(similarity_temperature > 0.0)) throw ConfigError("diven.similarity_temperature must be positive");
  if (!(lr > 0.0)) throw ConfigError("diven.lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("diven.momentum must be in [0, 1)");
  if (!(participation_fraction > 0.0 && participation_fraction <= 1.0)) {
    throw ConfigError("diven.participation_fraction must be in (0, 1]");
  }
}

ParamSet model_params(const ClientModel& model) { return concat(model.encoder_params(), model.classifier_params()); }

void set_model_params(ClientModel& model, const ParamSet& params) {
  model.set_encoder_params(select_prefix(params, kEncoderPrefix));
  model.set_classifier_params(select_prefix(params, kClassifierPrefix));
}

double validation_metric(const SimClient& client) {
  const ClientDataset& d = client.val.n() > 0 ? client.val : client.train;
  const auto rows = d.labelled_rows();
  if (rows.empty()) throw DataError("client " + std::to_string(client.id) + ": no labelled rows to evaluate");
  return evaluate_metric(client.model, select_rows(d.x, rows), d.targets(rows));
}

double training_loss(const SimClient& client) {
  const auto data = labelled_data(client.train);
  return loss_on_logits(infer(client.model.layers, data.x), data.y, default_loss(client.train.task)).loss;
}

LocalStepResult diven_local_step(SimClient& client, const std::optional<ParamSet>& anchor,
                                 const DivEnConfig& cfg, std::size_t epochs, Rng& rng) {
  const auto data = labelled_data(client.train);
  TrainOptions opt;
  opt.epochs = epochs;
  opt.lr = cfg.lr;
  opt.momentum = cfg.momentum;
  opt.batch_size = cfg.batch_size;
  opt.loss = default_loss(client.train.task);
  std::optional<PullTerm> pull;
  if (anchor && cfg.lambda > 0.0) {
    pull = PullTerm{strip_prefix(*anchor, kClassifierPrefix), cfg.lambda, client.model.encoder_depth()};
  }
  LocalStepResult out;
  out.stats = train_supervised(client.model.layers, data.x, data.y, opt, rng, pull);
  out.train_loss = loss_on_logits(infer(client.model.layers, data.x), data.y, opt.loss).loss;
  out.val_metric = validation_metric(client);
  return out;
}

GuardOutcome negative_transfer_guard(SimClient& client, double threshold_acc, const ParamSet& threshold_params,
                                     const DivEnConfig& cfg, Rng& rng) {
  const Task task = client.train.task;
  GuardOutcome out;
  out.client = client.id;
  out.threshold_acc = threshold_acc;
  out.pre_guard_acc = validation_metric(client);
  out.final_acc = out.pre_guard_acc;
  out.retrained_acc = out.pre_guard_acc;
  if (!metric_better(threshold_acc, out.pre_guard_acc, task)) return out;

  out.triggered = true;
  const ParamSet current = model_params(client.model);
  set_model_params(client.model, threshold_params);
  const auto data = labelled_data(client.train);
  TrainOptions opt;
  opt.epochs = cfg.epochs_low;
  opt.lr = cfg.lr;
  opt.momentum = cfg.momentum;
  opt.batch_size = cfg.batch_size;
  opt.loss = default_loss(task);
  train_supervised(client.model.layers, data.x, data.y, opt, rng);
  out.retrained_acc = validation_metric(client);
  if (metric_better(out.retrained_acc, out.pre_guard_acc, task)) {
    out.reverted = true;
    out.final_acc = out.retrained_acc;
  } else {
    set_model_params(client.model, current);
  }
  return out;
}

ProtocolResult run_diven(std::vector<SimClient> clients, const DivEnConfig& cfg, const RunContext& ctx) {
  if (cfg.variant == DivEnVariant::kDivenC) {
    throw ConfigError("run_diven: use run_diven_c for the clustered variant");
  }
  return run_engine(std::move(clients), cfg, cfg.variant == DivEnVariant::kDivenMix ? Mode::kDivenMix : Mode::kDiven,
                    nullptr, ctx);
}

ProtocolResult run_diven_c(std::vector<SimClient> clients, const DivEnConfig& cfg, const ClusterAssignment& assignment,
                           const RunContext& ctx) {
  return run_engine(std::move(clients), cfg, Mode::kDivenC, &assignment, ctx);
}

ProtocolResult run_baseline(std::vector<SimClient> clients, BaselineKind kind, const DivEnConfig& cfg,
                            const RunContext& ctx) {
  const Mode mode = kind == BaselineKind::kSingle ? Mode::kSingle
                    : kind == BaselineKind::kClassAgg ? Mode::kClassAgg
                                                      : Mode::kFedAvg;
  return run_engine(std::move(clients), cfg, mode, nullptr, ctx);
}

SimClient make_sim_client(std::size_t id, ClientDataset train, ClientDataset val, const ModelOptions& options,
                          std::uint64_t seed) {
  train.client_id = id;
  val.client_id = id;
  SearchOptions so;
  so.epochs = options.search_epochs;
  so.train.lr = options.lr;
  so.train.loss = default_loss(train.task);
  so.classifier_hidden = options.classifier_hidden;
  so.use_default_classifier = options.default_classifier;
  so.latent_activation = options.latent_activation;
  const std::size_t budget = options.search_budget == 0 ? options.menu.size() : options.search_budget;
  const auto found = search_encoder(train, options.menu, budget, seed, so);
  auto rng = make_rng(seed, Stream::kInit, {options.shared_init ? 0 : id});
  SimClient c;
  c.id = id;
  c.model = build_model(found.spec, rng);
  c.train = std::move(train);
  c.val = std::move(val);
  return c;
}

ClusteredClients make_clustered_clients(std::vector<ClientDataset> train, std::vector<ClientDataset> val,
                                        const ClusterAssignment& assignment, const ModelOptions& options,
                                        std::uint64_t seed) {
  const std::size_t n = train.size();
  if (val.size() != n) throw DimensionError("make_clustered_clients: train/val count mismatch");
  const auto cluster_of = assignment.cluster_of(n);
  ClusteredClients out;
  out.clients.resize(n);
  for (std::size_t k = 0; k < assignment.clusters.size(); ++k) {
    const auto& members = assignment.clusters[k];
    const auto& overlap = assignment.overlaps[k];
    auto pick = make_rng(seed, Stream::kRepresentative, {k});
    std::uniform_int_distribution<std::size_t> dist(0, members.size() - 1);
    const std::size_t rep = members[members.size() == 1 ? 0 : dist(pick)];
    out.representatives.push_back(rep);
    SimClient leader = make_sim_client(rep, project_features(train[rep], overlap), project_features(val[rep], overlap),
                                       options, seed);
    for (auto i : members) {
      if (i == rep) continue;
      SimClient c;
      c.id = i;
      c.model = leader.model;
      c.train = project_features(train[i], overlap);
      c.val = project_features(val[i], overlap);
      c.train.client_id = i;
      c.val.client_id = i;
      out.clients[i] = std::move(c);
    }
    out.clients[rep] = std::move(leader);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (cluster_of[i] >= assignment.clusters.size()) {
      throw ConfigError("cluster assignment does not cover client " + std::to_string(i));
    }
  }
  return out;
}

}  // namespace fedsim
