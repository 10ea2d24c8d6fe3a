// Copyright 2026 The Diptych Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace diptych {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  // Throws ShapeError unless data.size() == rows * cols.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

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
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix transpose(const Matrix& m);

// a * b. Throws ShapeError when a.cols() != b.rows() and NumericError on a
// non-finite result.
Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T and a^T * b, evaluated through the same gemm kernel.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// out += a * b (out must already have the right shape).
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);

// Row softmax of scale * m with per-row max subtraction.
Matrix softmax_rows(const Matrix& m, double scale = 1.0);

double dot(std::span<const double> u, std::span<const double> v);
double cosine_similarity(std::span<const double> u, std::span<const double> v);

// Portable generator: xoshiro256** seeded by four splitmix64 draws from the
// 64-bit seed. Uniforms take the top 53 bits; normals use Box-Muller on
// (1 - u1, u2) and hand out both values of each pair in order.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  double uniform();                           // [0, 1)
  double uniform(double lo, double hi);       // [lo, hi)
  std::uint64_t below(std::uint64_t bound);   // [0, bound), Lemire rejection
  double normal();

  // Independent stream for sub-task `index`; does not advance this generator.
  SeededRng child(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::vector<double> gaussian(SeededRng& rng, std::size_t n);

std::uint64_t splitmix64(std::uint64_t x);
// Order-sensitive combination of seed components.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);
// FNV-1a, used to fold string identifiers into seeds.
std::uint64_t hash_string(std::string_view s);

using ScalarFn = std::function<double(std::span<const double>)>;
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

// max_i |analytic_i - central_i| / (|analytic_i| + 1e-8).
double finite_difference_check(const ScalarFn& f, const GradientFn& grad,
                               std::span<const double> x, double eps);

}  // namespace diptych
