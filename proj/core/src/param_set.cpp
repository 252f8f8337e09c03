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

#include "fedsim/param_set.hpp"

#include <cmath>

#include "fedsim/errors.hpp"

namespace fedsim {

void ParamSet::add(std::string name, Tensor2 value) {
  if (find(name) != nullptr) {
    throw CompatibilityError("duplicate parameter name '" + name + "'");
  }
  entries_.push_back({std::move(name), std::move(value)});
}

const Tensor2* ParamSet::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

Tensor2& ParamSet::at(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw CompatibilityError("no parameter named '" + std::string(name) + "'");
}

const Tensor2& ParamSet::at(std::string_view name) const {
  const Tensor2* t = find(name);
  if (t == nullptr) throw CompatibilityError("no parameter named '" + std::string(name) + "'");
  return *t;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

double ParamSet::squared_norm() const {
  double acc = 0.0;
  for (const auto& e : entries_) {
    for (double v : e.value.values()) acc += v * v;
  }
  return acc;
}

double ParamSet::norm() const { return std::sqrt(squared_norm()); }

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(scalar_count());
  for (const auto& e : entries_) out.insert(out.end(), e.value.values().begin(), e.value.values().end());
  return out;
}

bool compatible(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entries()[i];
    const auto& eb = b.entries()[i];
    if (ea.name != eb.name || !ea.value.same_shape(eb.value)) return false;
  }
  return true;
}

void require_compatible(const ParamSet& a, const ParamSet& b, std::string_view context) {
  if (compatible(a, b)) return;
  std::string msg = std::string(context) + ": incompatible parameter sets;";
  const std::size_t n = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= a.size()) {
      msg += " extra '" + b.entries()[i].name + "'";
    } else if (i >= b.size()) {
      msg += " missing '" + a.entries()[i].name + "'";
    } else {
      const auto& ea = a.entries()[i];
      const auto& eb = b.entries()[i];
      if (ea.name != eb.name) {
        msg += " '" + ea.name + "' vs '" + eb.name + "'";
      } else if (!ea.value.same_shape(eb.value)) {
        msg += " '" + ea.name + "' " + ea.value.shape_string() + " vs " + eb.value.shape_string();
      }
    }
  }
  throw CompatibilityError(msg);
}

ParamSet zeros_like(const ParamSet& p) {
  ParamSet out;
  for (const auto& e : p) out.add(e.name, Tensor2(e.value.rows(), e.value.cols()));
  return out;
}

void axpy(ParamSet& y, double a, const ParamSet& x) {
  require_compatible(y, x, "axpy");
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto dst = y.entries()[i].value.values();
    auto src = x.entries()[i].value.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += a * src[k];
  }
}

ParamSet scaled(const ParamSet& p, double a) {
  ParamSet out = p;
  for (auto& e : out) {
    for (double& v : e.value.values()) v *= a;
  }
  return out;
}

bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
  if (!compatible(a, b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bitwise_equal(a.entries()[i].value, b.entries()[i].value)) return false;
  }
  return true;
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  require_compatible(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto va = a.entries()[i].value.values();
    auto vb = b.entries()[i].value.values();
    for (std::size_t k = 0; k < va.size(); ++k) worst = std::max(worst, std::abs(va[k] - vb[k]));
  }
  return worst;
}

ParamSet select_prefix(const ParamSet& p, std::string_view prefix) {
  ParamSet out;
  for (const auto& e : p) {
    if (std::string_view(e.name).starts_with(prefix)) out.add(e.name, e.value);
  }
  return out;
}

ParamSet with_prefix(const ParamSet& p, std::string_view prefix) {
  ParamSet out;
  for (const auto& e : p) out.add(std::string(prefix) + e.name, e.value);
  return out;
}

ParamSet strip_prefix(const ParamSet& p, std::string_view prefix) {
  ParamSet out;
  for (const auto& e : p) {
    if (!std::string_view(e.name).starts_with(prefix)) {
      throw CompatibilityError("entry '" + e.name + "' lacks prefix '" + std::string(prefix) + "'");
    }
    out.add(e.name.substr(prefix.size()), e.value);
  }
  return out;
}

}  // namespace fedsim
