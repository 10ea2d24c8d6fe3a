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

#include "diptych/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "diptych/error.hpp"
#include "diptych/kernels.hpp"

namespace diptych {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Matrix::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

namespace {

void require_product(std::size_t inner_a, std::size_t inner_b, const char* what) {
  if (inner_a != inner_b) {
    throw ShapeError(std::string(what) + ": inner dimensions " + std::to_string(inner_a) +
                     " and " + std::to_string(inner_b) + " differ");
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_product(a.cols(), b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  kernels::active().gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
  if (!c.all_finite()) throw NumericError("matmul produced a non-finite value");
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require_product(a.cols(), b.cols(), "matmul_nt");
  const Matrix bt = transpose(b);
  Matrix c(a.rows(), b.rows());
  kernels::active().gemm(a.data(), bt.data(), c.data(), a.rows(), a.cols(), bt.cols(), false);
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require_product(a.rows(), b.rows(), "matmul_tn");
  const Matrix at = transpose(a);
  Matrix c(a.cols(), b.cols());
  kernels::active().gemm(at.data(), b.data(), c.data(), at.rows(), at.cols(), b.cols(), false);
  return c;
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require_product(a.cols(), b.rows(), "matmul_acc");
  if (out.rows() != a.rows() || out.cols() != b.cols()) throw ShapeError("matmul_acc: output shape");
  kernels::active().gemm(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols(), true);
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require_product(a.rows(), b.rows(), "matmul_tn_acc");
  if (out.rows() != a.cols() || out.cols() != b.cols()) throw ShapeError("matmul_tn_acc: output shape");
  const Matrix at = transpose(a);
  kernels::active().gemm(at.data(), b.data(), out.data(), at.rows(), at.cols(), b.cols(), true);
}

Matrix softmax_rows(const Matrix& m, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw NumericError("softmax scale must be positive");
  if (!m.all_finite()) throw NumericError("softmax input is not finite");
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(scale * (in[c] - mx));
      sum += o[c];
    }
    const double inv = 1.0 / sum;
    for (double& v : o) v *= inv;
  }
  return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("dot: length mismatch");
  return kernels::active().dot(u.data(), v.data(), u.size());
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) throw DegenerateInputError("cosine_similarity: zero-norm vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& word : s_) {
    word = splitmix64(x);
    x += 0x9E3779B97F4A7C15ULL;
  }
}

std::uint64_t SeededRng::next_u64() {
  const auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t SeededRng::below(std::uint64_t bound) {
  if (bound == 0) throw InputError("SeededRng::below: zero bound");
  // Lemire's nearly-divisionless method.
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next_u64()) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

SeededRng SeededRng::child(std::uint64_t index) const { return SeededRng(mix_seed({seed_, index})); }

std::vector<double> gaussian(SeededRng& rng, std::size_t n) {
  if (n == 0) throw InputError("gaussian: n must be positive");
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

double finite_difference_check(const ScalarFn& f, const GradientFn& grad,
                               std::span<const double> x, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw InputError("finite_difference_check: eps out of (0, 1e-2]");
  const std::vector<double> analytic = grad(x);
  if (analytic.size() != x.size()) throw ShapeError("finite_difference_check: gradient length");
  std::vector<double> probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double fp = f(probe);
    probe[i] = saved - eps;
    const double fm = f(probe);
    probe[i] = saved;
    const double central = (fp - fm) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - central) / (std::abs(analytic[i]) + 1e-8));
  }
  return worst;
}

}  // namespace diptych
