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
#include <optional>
#include <vector>

#include "fedsim/clustering.hpp"
#include "fedsim/data.hpp"
#include "fedsim/local_training.hpp"
#include "fedsim/model.hpp"
#include "fedsim/simagg.hpp"
#include "fedsim/trace.hpp"

namespace fedsim {

enum class DivEnVariant { kDiven, kDivenMix, kDivenC };
enum class BaselineKind { kSingle, kClassAgg, kFedAvg };

struct DivEnConfig {
  std::size_t rounds = 6;  // R; communication rounds run 1..R−1
  std::size_t epochs_init = 30;
  std::size_t epochs_low = 5;
  double lambda = 0.01;
  double similarity_temperature = 1.0;
  DivEnVariant variant = DivEnVariant::kDiven;
  bool guard_enabled = true;
  double lr = 0.05;
  double momentum = 0.0;
  std::size_t batch_size = 0;  // 0 = full batch
  double participation_fraction = 1.0;

  void validate() const;
  std::size_t epochs_for_round(std::size_t round) const { return round == 1 ? epochs_init : epochs_low; }
};

/// A simulated participant: its private splits and its model.
struct SimClient {
  std::size_t id = 0;
  ClientDataset train;
  ClientDataset val;  // guard / validation split; may be empty
  ClientModel model;
};

struct RunContext {
  std::uint64_t seed = 0;
  TraceOptions trace;
};

struct GuardOutcome {
  std::size_t client = 0;
  bool triggered = false;  // final accuracy fell below the round-1 threshold
  bool reverted = false;   // the retrained round-1 model was kept
  double threshold_acc = 0.0;
  double pre_guard_acc = 0.0;
  double retrained_acc = 0.0;
  double final_acc = 0.0;
};

struct ProtocolResult {
  std::vector<ClientModel> models;
  RunTrace trace;
  std::vector<GuardOutcome> guard;
  std::vector<double> final_val;  // validation metric of the returned models
};

// Encoder followed by classifier entries, with their block prefixes.
ParamSet model_params(const ClientModel& model);
void set_model_params(ClientModel& model, const ParamSet& params);

// Validation metric on client.val, or on the labelled training rows when the
// validation split is empty.
double validation_metric(const SimClient& client);
// Task loss of the current model on the labelled training rows.
double training_loss(const SimClient& client);

struct LocalStepResult {
  TrainStats stats;
  double train_loss = 0.0;
  double val_metric = 0.0;
};

/// Local epochs on the labelled training rows. With an anchor (classifier
/// block, prefixed names) the loss gains λ Σ‖θ_C − anchor‖²; no anchor means no
/// pull term.
LocalStepResult diven_local_step(SimClient& client, const std::optional<ParamSet>& anchor,
                                 const DivEnConfig& cfg, std::size_t epochs, Rng& rng);

/// Reverts to the round-1 snapshot if the final accuracy is below threshold,
/// retrains for E_low epochs and keeps the better of the two models.
GuardOutcome negative_transfer_guard(SimClient& client, double threshold_acc,
                                     const ParamSet& threshold_params, const DivEnConfig& cfg,
                                     Rng& rng);

ProtocolResult run_diven(std::vector<SimClient> clients, const DivEnConfig& cfg, const RunContext& ctx);
ProtocolResult run_diven_c(std::vector<SimClient> clients, const DivEnConfig& cfg,
                           const ClusterAssignment& assignment, const RunContext& ctx);
ProtocolResult run_baseline(std::vector<SimClient> clients, BaselineKind kind, const DivEnConfig& cfg,
                            const RunContext& ctx);

// ---------------------------------------------------------------------------
// Client construction

struct ModelOptions {
  std::vector<std::vector<std::size_t>> menu = {{8}};
  std::size_t search_budget = 0;  // 0 = whole menu
  std::size_t search_epochs = 30;
  std::vector<std::size_t> classifier_hidden;  // empty: one hidden layer of 2ℓ
  bool default_classifier = true;
  Activation latent_activation = Activation::kRelu;
  bool shared_init = false;  // every client starts from client 0's initial weights
  double lr = 0.05;
};

/// Selects an encoder from the menu on `train` and initialises the model.
SimClient make_sim_client(std::size_t id, ClientDataset train, ClientDataset val,
                          const ModelOptions& options, std::uint64_t seed);

struct ClusteredClients {
  std::vector<SimClient> clients;
  std::vector<std::size_t> representatives;  // one per cluster
};

/// Projects every member onto its cluster's overlap O_k, runs the encoder
/// search on a seeded representative, and copies the representative's initial
/// model to the other members.
ClusteredClients make_clustered_clients(std::vector<ClientDataset> train, std::vector<ClientDataset> val,
                                        const ClusterAssignment& assignment, const ModelOptions& options,
                                        std::uint64_t seed);

}  // namespace fedsim
