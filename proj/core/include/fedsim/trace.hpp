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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/param_set.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

/// One record per (phase, round, client).
struct RoundRecord {
  std::string phase;  // "local", "step1", "step2", "guard"
  std::size_t round = 0;
  std::size_t client = 0;
  bool participated = true;
  double train_loss = 0.0;
  std::optional<double> val_metric;
  std::optional<double> mask_rate;
  double encoder_norm = 0.0;
  double classifier_norm = 0.0;
  std::vector<std::string> events;
};

struct SimilarityRecord {
  std::size_t round = 0;
  std::vector<std::size_t> clients;  // participating clients, row order
  Tensor2 s;
  Tensor2 alpha;
  std::vector<std::size_t> degenerate;
};

struct ParamSnapshot {
  std::string phase;
  std::size_t round = 0;
  std::size_t client = 0;  // kServer for server-side aggregates
  std::string stage;       // "local" (after client update) or "server" (after aggregation)
  ParamSet params;
};

inline constexpr std::size_t kServer = static_cast<std::size_t>(-1);

// What may cross the client boundary. There is deliberately no kind for data rows.
enum class MessageKind { kParams, kLatentSummary, kSampleCount, kStatus, kMetric };
const char* to_string(MessageKind kind);

struct Message {
  std::string phase;
  std::size_t round = 0;
  std::size_t client = 0;
  bool upload = true;  // client → server
  MessageKind kind = MessageKind::kParams;
  std::vector<std::string> names;  // parameter entry names for kParams
  std::size_t scalars = 0;
};

/// Everything a client hands to the server after a local update.
struct ClientReport {
  std::size_t client = 0;
  std::size_t n_samples = 0;
  std::optional<ClientStatus> status;
  ParamSet params;
  std::vector<double> latent;  // pooled latent summary, empty when not shared
  std::optional<double> metric;
};

struct TraceOptions {
  bool dump_params = false;
  bool dump_similarity = false;
  bool log_messages = true;
};

/// Per-run record of rounds, exchanged messages and optional dumps. Wall
/// times live in `timings` and are written to a separate file so that the
/// trace itself is reproducible byte for byte.
class RunTrace {
 public:
  explicit RunTrace(TraceOptions options = {}) : options_(options) {}

  const TraceOptions& options() const { return options_; }

  void add_round(RoundRecord record) { rounds_.push_back(std::move(record)); }
  void add_similarity(SimilarityRecord record);
  void add_snapshot(std::string phase, std::size_t round, std::size_t client, std::string stage,
                    const ParamSet& params);
  void add_flag(std::string flag) { flags_.push_back(std::move(flag)); }
  void add_timing(std::string phase, std::size_t round, std::size_t client, double seconds);

  // Logs every field of `report` as an upload message.
  void upload(const std::string& phase, std::size_t round, const ClientReport& report);
  void download(const std::string& phase, std::size_t round, std::size_t client, const ParamSet& params);

  const std::vector<RoundRecord>& rounds() const { return rounds_; }
  std::vector<RoundRecord>& rounds() { return rounds_; }
  const std::vector<SimilarityRecord>& similarity() const { return similarity_; }
  const std::vector<ParamSnapshot>& snapshots() const { return snapshots_; }
  const std::vector<Message>& messages() const { return messages_; }
  const std::vector<std::string>& flags() const { return flags_; }

  // Snapshots filtered by phase/stage, in insertion order.
  std::vector<const ParamSnapshot*> find_snapshots(std::string_view phase, std::string_view stage) const;

  struct Timing {
    std::string phase;
    std::size_t round;
    std::size_t client;
    double seconds;
  };
  const std::vector<Timing>& timings() const { return timings_; }

 private:
  TraceOptions options_;
  std::vector<RoundRecord> rounds_;
  std::vector<SimilarityRecord> similarity_;
  std::vector<ParamSnapshot> snapshots_;
  std::vector<Message> messages_;
  std::vector<std::string> flags_;
  std::vector<Timing> timings_;
};

/// Size-weighted mean of train_loss over participating clients for each round
/// of `phase`, in round order.
std::vector<double> round_losses(const RunTrace& trace, std::string_view phase,
                                 const std::vector<std::size_t>& client_sizes);

// JSON Lines: a header line, then one line per record, tagged by "type".
void write_trace_jsonl(const std::filesystem::path& path, const RunTrace& trace,
                       const std::string& header_json);
void write_timings_jsonl(const std::filesystem::path& path, const RunTrace& trace);

}  // namespace fedsim
