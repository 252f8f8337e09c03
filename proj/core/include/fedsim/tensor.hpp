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
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedsim {

/// Dense row-major matrix of doubles. Vectors are stored as 1×n tensors.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor2 row_vector(std::span<const double> values);
  static Tensor2 column(std::span<const double> values);
  static Tensor2 identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const Tensor2& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;
  std::string shape_string() const;

  bool operator==(const Tensor2& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a (m×k) · b (k×n)
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
// aᵀ (k×m)ᵀ · b (k×n) -> m×n
Tensor2 matmul_transpose_a(const Tensor2& a, const Tensor2& b);
// a (m×k) · bᵀ (n×k)ᵀ -> m×n
Tensor2 matmul_transpose_b(const Tensor2& a, const Tensor2& b);

Tensor2 select_rows(const Tensor2& t, std::span<const std::size_t> rows);
Tensor2 select_cols(const Tensor2& t, std::span<const std::size_t> cols);
std::vector<double> column_means(const Tensor2& t);

// Bitwise equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
bool bitwise_equal(const Tensor2& a, const Tensor2& b);

}  // namespace fedsim
