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
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim {

struct ParamEntry {
  std::string name;
  Tensor2 value;

  bool operator==(const ParamEntry&) const = default;
};

/// Ordered, named collection of parameter tensors. This is the unit of every
/// exchange and aggregation. Names are unique; order is significant.
class ParamSet {
 public:
  ParamSet() = default;

  void add(std::string name, Tensor2 value);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  const Tensor2* find(std::string_view name) const;
  Tensor2& at(std::string_view name);
  const Tensor2& at(std::string_view name) const;

  std::size_t scalar_count() const;
  double squared_norm() const;
  double norm() const;
  std::vector<double> flatten() const;

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<ParamEntry> entries_;
};

// Same names, same order, same shapes.
bool compatible(const ParamSet& a, const ParamSet& b);
// Throws CompatibilityError listing the entries that differ.
void require_compatible(const ParamSet& a, const ParamSet& b, std::string_view context);

ParamSet zeros_like(const ParamSet& p);
// y += a * x, entrywise.
void axpy(ParamSet& y, double a, const ParamSet& x);
ParamSet scaled(const ParamSet& p, double a);
bool bitwise_equal(const ParamSet& a, const ParamSet& b);
// Largest absolute entrywise difference; requires compatibility.
double max_abs_diff(const ParamSet& a, const ParamSet& b);

// Entries whose name starts with `prefix`, in order.
ParamSet select_prefix(const ParamSet& p, std::string_view prefix);
// Prepends / removes `prefix` on every entry name.
ParamSet with_prefix(const ParamSet& p, std::string_view prefix);
ParamSet strip_prefix(const ParamSet& p, std::string_view prefix);

}  // namespace fedsim
