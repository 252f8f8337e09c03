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

#include "fedsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fedsim/errors.hpp"

namespace fedsim {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

Tensor2 Tensor2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor2::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor2(r, c, std::move(data));
}

Tensor2 Tensor2::row_vector(std::span<const double> values) {
  return Tensor2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Tensor2 Tensor2::column(std::span<const double> values) {
  return Tensor2(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Tensor2 Tensor2::identity(std::size_t n) {
  Tensor2 t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

bool Tensor2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor2::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " · " + b.shape_string());
  }
  Tensor2 out(a.rows(), b.cols());
  const std::size_t k_dim = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Tensor2 matmul_transpose_a(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_transpose_a: " + a.shape_string() + "ᵀ · " + b.shape_string());
  }
  Tensor2 out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto a_row = a.row(k);
    auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

Tensor2 matmul_transpose_b(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_transpose_b: " + a.shape_string() + " · " + b.shape_string() + "ᵀ");
  }
  Tensor2 out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Tensor2 select_rows(const Tensor2& t, std::span<const std::size_t> rows) {
  Tensor2 out(rows.size(), t.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.rows()) throw DimensionError("select_rows: row index out of range");
    auto src = t.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Tensor2 select_cols(const Tensor2& t, std::span<const std::size_t> cols) {
  Tensor2 out(t.rows(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] >= t.cols()) throw DimensionError("select_cols: column index out of range");
  }
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = t(i, cols[j]);
  }
  return out;
}

std::vector<double> column_means(const Tensor2& t) {
  std::vector<double> means(t.cols(), 0.0);
  if (t.rows() == 0) return means;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto r = t.row(i);
    for (std::size_t j = 0; j < t.cols(); ++j) means[j] += r[j];
  }
  for (auto& m : means) m /= static_cast<double>(t.rows());
  return means;
}

bool bitwise_equal(const Tensor2& a, const Tensor2& b) {
  if (!a.same_shape(b)) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace fedsim
