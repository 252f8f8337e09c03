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
#include <span>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/diven.hpp"
#include "fedsim/model.hpp"
#include "fedsim/trace.hpp"

namespace fedsim {

enum class FusionMode {
  kFedFusion,         // pretext step, then fine-tuning without pseudo-labels
  kFedFusionStar,     // pretext step, then fine-tuning with pseudo-labels
  kSupervisedFedAvg,  // no pretext step; labelled clients only, same total rounds
};

struct FusionConfig {
  std::size_t rounds_step1 = 10;
  std::size_t rounds_step2 = 10;
  std::size_t local_epochs = 1;
  std::size_t pretext_classes = 4;  // v
  double pretext_weight = 1.0;      // λ_pre, scales the reported pretext loss
  double confidence_threshold = 0.9;
  double partial_weight = 1.0;      // α_mix
  double consistency_weight = 0.0;  // 0 disables the weak/strong latent consistency term
  double lr = 0.05;
  double momentum = 0.0;
  std::size_t batch_size = 0;  // 0 = full batch
  bool freeze_unlabelled_encoder = true;
  bool include_frozen_in_average = true;
  AugmentOptions augment;

  void validate() const;
};

struct FusionClient {
  std::size_t id = 0;
  ClientDataset train;  // status and labelled mask live here
  ClientDataset test;   // labelled evaluation split
  ClientModel model;    // encoder + task head M; status-3 clients also carry P
};

/// Rotates every image by a seeded multiple of 90° drawn from the first v
/// rotations; labels are the rotation indices.
struct PretextBatch {
  Tensor2 x;
  Tensor2 labels;  // column of rotation indices
};
PretextBatch rotation_pretext_batch(const Tensor2& images, const ImageMeta& meta, std::size_t v, std::uint64_t seed);

struct LabelledBatch {
  Tensor2 x;  // weak view Φ(x)
  Tensor2 y;  // class indices
};
struct UnlabelledBatch {
  Tensor2 weak;    // Φ(u)
  Tensor2 strong;  // Ψ(u)
};

struct FixMatchResult {
  double l1 = 0.0;
  double l2 = 0.0;
  double mask_rate = 0.0;
  std::size_t confident = 0;
  double objective = 0.0;  // l1 + l2_weight · l2
  ParamSet grads;          // of the objective with respect to the student
};

/// L1 = mean CE on the labelled weak view. L2 = (1/B) Σ 1(max q_b ≥ τ) CE(argmax q_b, student(Ψ(u_b)))
/// with q_b = softmax(teacher(Φ(u_b))) treated as a constant.
FixMatchResult fixmatch_losses(std::span<const DenseLayer> student, std::span<const DenseLayer> teacher,
                               const std::optional<LabelledBatch>& labelled,
                               const std::optional<UnlabelledBatch>& unlabelled, double confidence_threshold,
                               double l2_weight);

// (1/n) Σ ‖E(Φu) − E(Ψu)‖² over latent rows.
double consistency_loss(const ClientModel& model, const Tensor2& weak, const Tensor2& strong);
// Loss and encoder-block gradients (unprefixed layer names, encoder layers only).
LossAndGrad consistency_loss_and_grad(const ClientModel& model, const Tensor2& weak, const Tensor2& strong);

struct FusionState {
  std::vector<FusionClient> clients;
  RunTrace trace;
  std::uint64_t seed = 0;
};

/// One Step-1 round: clients receive `global_encoder`, train their E+M (task
/// loss) or E+P (rotation loss), and return encoders only. Returns the
/// size-weighted encoder average.
ParamSet fusion_step1_round(FusionState& state, const ParamSet& global_encoder, const FusionConfig& cfg,
                            std::size_t round);

/// One Step-2 round: clients receive W = (θ_e, θ_m) and train by status.
/// Without pseudo-labels, fully unlabelled clients sit the round out and
/// partially labelled ones use L1 only. Returns the size-weighted average of W.
ParamSet fusion_step2_round(FusionState& state, const ParamSet& global_model, const FusionConfig& cfg,
                            std::size_t round, bool pseudo_labels);

struct FusionResult {
  ParamSet global_model;  // final W
  std::vector<ClientModel> models;
  std::vector<double> test_metric;  // per client, final W on the client's test split
  RunTrace trace;
};

FusionResult run_fusion(std::vector<FusionClient> clients, FusionMode mode, const FusionConfig& cfg,
                        const RunContext& ctx);

/// Builds a client for a fixed architecture. All clients share the server's
/// initial encoder; heads are initialised per client. Fully unlabelled clients
/// get a v-way pretext head (image data only).
FusionClient make_fusion_client(std::size_t id, ClientDataset train, ClientDataset test, const ModelSpec& spec,
                                const FusionConfig& cfg, std::uint64_t seed);

}  // namespace fedsim
