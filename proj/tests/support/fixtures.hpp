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


// Small fixtures shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/diven.hpp"
#include "fedsim/fusion.hpp"
#include "fedsim/model.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/param_set.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim::testing {

inline Tensor2 random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor2 t(rows, cols);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Random ParamSet with the entry layout of a small classifier head.
inline ParamSet random_head(Rng& rng, std::size_t in = 3, std::size_t hidden = 4, std::size_t out = 2) {
  ParamSet p;
  p.add("classifier.0.weight", random_tensor(in, hidden, rng));
  p.add("classifier.0.bias", random_tensor(1, hidden, rng));
  p.add("classifier.1.weight", random_tensor(hidden, out, rng));
  p.add("classifier.1.bias", random_tensor(1, out, rng));
  return p;
}

inline ClientDataset labelled_client(std::size_t id, Tensor2 x, std::vector<double> y, std::size_t classes) {
  ClientDataset d;
  d.client_id = id;
  d.features = FeatureSubset::all(x.cols());
  d.x = std::move(x);
  d.y = std::move(y);
  d.labelled.assign(d.y.size(), 1);
  d.num_classes = classes;
  return d;
}

// Tabular clients sharing every feature, split train/val with a fixed seed.
struct TabularClients {
  std::vector<ClientDataset> train;
  std::vector<ClientDataset> val;
};

inline TabularClients tabular_clients(std::size_t n_clients, std::size_t samples, std::uint64_t seed,
                                      std::size_t features = 6, std::size_t classes = 3) {
  TabularSpec spec;
  spec.n_clusters = classes;
  spec.n_features = features;
  spec.n_samples = samples;
  spec.latent_dim = 3;
  spec.separation = 3.0;
  spec.seed = seed;
  const Dataset full = synth_tabular(spec);
  PartitionOptions po;
  po.n_clients = n_clients;
  po.max_features = features;
  po.core_size = features;
  po.seed = seed;
  TabularClients out;
  for (auto& c : partition_features(full, po)) {
    auto split = split_holdout(c, 0.25, seed + 17 * c.client_id + 1);
    out.train.push_back(std::move(split.train));
    out.val.push_back(std::move(split.holdout));
  }
  return out;
}

inline ModelOptions tiny_model_options(bool shared_init = false) {
  ModelOptions o;
  o.menu = {{4}};
  o.search_epochs = 2;
  o.shared_init = shared_init;
  o.lr = 0.1;
  return o;
}

inline std::vector<SimClient> sim_clients(const TabularClients& data, std::uint64_t seed,
                                          bool shared_init = false) {
  std::vector<SimClient> out;
  const auto opts = tiny_model_options(shared_init);
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    out.push_back(make_sim_client(i, data.train[i], data.val[i], opts, seed));
  }
  return out;
}

// Full-batch configuration used by the bitwise reduction tests.
inline DivEnConfig full_batch_config(std::size_t rounds = 4) {
  DivEnConfig cfg;
  cfg.rounds = rounds;
  cfg.epochs_init = 3;
  cfg.epochs_low = 2;
  cfg.lr = 0.1;
  cfg.batch_size = 0;
  return cfg;
}

// Per-(round, client) snapshots of one phase/stage, in trace order.
inline std::vector<ParamSet> snapshots_of(const RunTrace& trace, std::string_view phase, std::string_view stage,
                                          std::size_t client) {
  std::vector<ParamSet> out;
  for (const auto* s : trace.find_snapshots(phase, stage)) {
    if (s->client == client) out.push_back(s->params);
  }
  return out;
}

// Digits clients for the fusion tests: one per domain with the given labelled fractions.
inline std::vector<FusionClient> digits_clients(const std::vector<double>& labelled_fraction, std::uint64_t seed,
                                                const FusionConfig& cfg, std::size_t samples = 60,
                                                std::vector<std::size_t> encoder = {16, 8}) {
  DigitsSpec ds;
  ds.domains = labelled_fraction.size();
  ds.side = 8;
  ds.samples_per_domain = samples;
  ds.classes = 4;
  ds.seed = seed;
  const auto domains = synth_digits(ds);
  std::vector<ClientDataset> train;
  std::vector<ClientDataset> test;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    PartitionOptions po;
    po.n_clients = 1;
    po.core_size = 1;
    po.seed = seed + d;
    auto c = partition_features(domains[d], po).front();
    c.client_id = d;
    auto split = split_holdout(c, 0.25, seed + 31 * d);
    train.push_back(std::move(split.train));
    test.push_back(std::move(split.holdout));
  }
  std::vector<StatusPlan> plan;
  for (double f : labelled_fraction) plan.push_back({f, std::nullopt});
  train = assign_statuses(std::move(train), plan, seed);
  const ModelSpec spec = make_spec(train[0].x.cols(), std::move(encoder), ds.classes, Task::kClassification);
  std::vector<FusionClient> out;
  for (std::size_t i = 0; i < train.size(); ++i) {
    out.push_back(make_fusion_client(i, train[i], test[i], spec, cfg, seed));
  }
  return out;
}

// Ten clients in two planted groups of five: identical subsets within a group,
// Jaccard 0.2 across groups (|A∩B| = 2, |A∪B| = 10). Client order is shuffled
// by `seed`; `group_of` receives the planted label of each client.
inline std::vector<FeatureSubset> planted_two_groups(std::uint64_t seed, std::vector<int>* group_of = nullptr) {
  const auto a = FeatureSubset::from_indices({0, 1, 2, 3, 4, 5}, 16);
  const auto b = FeatureSubset::from_indices({4, 5, 6, 7, 8, 9}, 16);
  std::vector<int> labels{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  auto rng = make_rng(seed, Stream::kPartition, {4242});
  std::shuffle(labels.begin(), labels.end(), rng);
  std::vector<FeatureSubset> out;
  for (int g : labels) out.push_back(g == 0 ? a : b);
  if (group_of) *group_of = labels;
  return out;
}

}  // namespace fedsim::testing
