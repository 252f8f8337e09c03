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

#include "fedsim/trace.hpp"

#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

using nlohmann::json;

json tensor_json(const Tensor2& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
  return rows;
}

json client_json(std::size_t client) { return client == kServer ? json("server") : json(client); }

}  // namespace

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::kParams: return "params";
    case MessageKind::kLatentSummary: return "latent_summary";
    case MessageKind::kSampleCount: return "sample_count";
    case MessageKind::kStatus: return "status";
    case MessageKind::kMetric: return "metric";
  }
  return "?";
}

void RunTrace::add_similarity(SimilarityRecord record) {
  if (options_.dump_similarity) similarity_.push_back(std::move(record));
}

void RunTrace::add_snapshot(std::string phase, std::size_t round, std::size_t client, std::string stage,
                            const ParamSet& params) {
  if (!options_.dump_params) return;
  snapshots_.push_back({std::move(phase), round, client, std::move(stage), params});
}

void RunTrace::add_timing(std::string phase, std::size_t round, std::size_t client, double seconds) {
  timings_.push_back({std::move(phase), round, client, seconds});
}

void RunTrace::upload(const std::string& phase, std::size_t round, const ClientReport& report) {
  if (!options_.log_messages) return;
  auto push = [&](MessageKind kind, std::size_t scalars, std::vector<std::string> names = {}) {
    messages_.push_back({phase, round, report.client, true, kind, std::move(names), scalars});
  };
  push(MessageKind::kSampleCount, 1);
  if (report.status) push(MessageKind::kStatus, 1);
  if (!report.params.empty()) {
    std::vector<std::string> names;
    for (const auto& e : report.params) names.push_back(e.name);
    push(MessageKind::kParams, report.params.scalar_count(), std::move(names));
  }
  if (!report.latent.empty()) push(MessageKind::kLatentSummary, report.latent.size());
  if (report.metric) push(MessageKind::kMetric, 1);
}

void RunTrace::download(const std::string& phase, std::size_t round, std::size_t client, const ParamSet& params) {
  if (!options_.log_messages) return;
  std::vector<std::string> names;
  for (const auto& e : params) names.push_back(e.name);
  messages_.push_back({phase, round, client, false, MessageKind::kParams, std::move(names), params.scalar_count()});
}

std::vector<const ParamSnapshot*> RunTrace::find_snapshots(std::string_view phase, std::string_view stage) const {
  std::vector<const ParamSnapshot*> out;
  for (const auto& s : snapshots_) {
    if (s.phase == phase && s.stage == stage) out.push_back(&s);
  }
  return out;
}

std::vector<double> round_losses(const RunTrace& trace, std::string_view phase,
                                 const std::vector<std::size_t>& client_sizes) {
  std::map<std::size_t, std::pair<double, double>> acc;  // round → (weighted sum, weight)
  for (const auto& r : trace.rounds()) {
    if (r.phase != phase || !r.participated) continue;
    if (r.client >= client_sizes.size()) throw DimensionError("round_losses: client id out of range");
    const double w = static_cast<double>(client_sizes[r.client]);
    acc[r.round].first += w * r.train_loss;
    acc[r.round].second += w;
  }
  std::vector<double> out;
  for (const auto& [round, sums] : acc) out.push_back(sums.second > 0.0 ? sums.first / sums.second : 0.0);
  return out;
}

void write_trace_jsonl(const std::filesystem::path& path, const RunTrace& trace, const std::string& header_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace file " + path.string());
  out << header_json << '\n';
  for (const auto& r : trace.rounds()) {
    json j = {{"type", "round"}, {"phase", r.phase}, {"round", r.round}, {"client", r.client},
              {"participated", r.participated}, {"train_loss", r.train_loss},
              {"encoder_norm", r.encoder_norm}, {"classifier_norm", r.classifier_norm}};
    j["val_metric"] = r.val_metric ? json(*r.val_metric) : json(nullptr);
    j["mask_rate"] = r.mask_rate ? json(*r.mask_rate) : json(nullptr);
    j["events"] = r.events;
    out << j.dump() << '\n';
  }
  for (const auto& s : trace.similarity()) {
    json j = {{"type", "similarity"}, {"round", s.round}, {"clients", s.clients},
              {"s", tensor_json(s.s)}, {"alpha", tensor_json(s.alpha)}, {"degenerate", s.degenerate}};
    out << j.dump() << '\n';
  }
  for (const auto& s : trace.snapshots()) {
    json entries = json::array();
    for (const auto& e : s.params) {
      entries.push_back({{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()},
                         {"values", std::vector<double>(e.value.values().begin(), e.value.values().end())}});
    }
    json j = {{"type", "params"}, {"phase", s.phase}, {"round", s.round}, {"client", client_json(s.client)},
              {"stage", s.stage}, {"entries", entries}};
    out << j.dump() << '\n';
  }
  for (const auto& m : trace.messages()) {
    json j = {{"type", "message"}, {"phase", m.phase}, {"round", m.round}, {"client", m.client},
              {"direction", m.upload ? "up" : "down"}, {"kind", to_string(m.kind)}, {"scalars", m.scalars}};
    if (!m.names.empty()) j["names"] = m.names;
    out << j.dump() << '\n';
  }
  for (const auto& f : trace.flags()) out << json({{"type", "flag"}, {"message", f}}).dump() << '\n';
}

void write_timings_jsonl(const std::filesystem::path& path, const RunTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write timing file " + path.string());
  for (const auto& t : trace.timings()) {
    out << json({{"phase", t.phase}, {"round", t.round}, {"client", client_json(t.client)}, {"seconds", t.seconds}}).dump()
        << '\n';
  }
}

}  // namespace fedsim
