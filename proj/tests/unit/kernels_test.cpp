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

#include "diptych/kernels.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <vector>

#include "diptych/numerics.hpp"

namespace diptych {
namespace {

std::vector<double> random_vector(SeededRng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Naive triple loop with plain multiply and add; differs from the fma kernels
// only by rounding.
std::vector<double> naive_gemm(const std::vector<double>& a, const std::vector<double>& b,
                               std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<long double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<double>(acc);
    }
  return c;
}

TEST(KernelsTest, ScalarGemmMatchesNaiveOracle) {
  SeededRng rng(7);
  const auto& scalar = kernels::scalar_kernels();
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.below(13), k = 1 + rng.below(17), n = 1 + rng.below(21);
    const auto a = random_vector(rng, m * k);
    const auto b = random_vector(rng, k * n);
    std::vector<double> c(m * n);
    scalar.gemm(a.data(), b.data(), c.data(), m, k, n, false);
    const auto expect = naive_gemm(a, b, m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_NEAR(c[i], expect[i], 1e-12 * (1.0 + std::abs(expect[i])));
    }
  }
}

TEST(KernelsTest, Avx2IsBitwiseEquivalentToScalar) {
  const kernels::KernelTable* simd = kernels::avx2_kernels();
  if (simd == nullptr) GTEST_SKIP() << "AVX2+FMA not available";
  const auto& scalar = kernels::scalar_kernels();
  SeededRng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(19), k = 1 + rng.below(70), n = 1 + rng.below(40);
    const bool accumulate = trial % 2 == 1;
    const auto a = random_vector(rng, m * k);
    const auto b = random_vector(rng, k * n);
    const auto c0 = random_vector(rng, m * n);
    auto c_scalar = c0;
    auto c_simd = c0;
    scalar.gemm(a.data(), b.data(), c_scalar.data(), m, k, n, accumulate);
    simd->gemm(a.data(), b.data(), c_simd.data(), m, k, n, accumulate);
    ASSERT_TRUE(bitwise_equal(c_scalar, c_simd)) << m << "x" << k << "x" << n;

    const auto x = random_vector(rng, k);
    auto y_scalar = random_vector(rng, k);
    auto y_simd = y_scalar;
    scalar.axpy(0.37, x.data(), y_scalar.data(), k);
    simd->axpy(0.37, x.data(), y_simd.data(), k);
    ASSERT_TRUE(bitwise_equal(y_scalar, y_simd));

    const double d_scalar = scalar.dot(x.data(), y_scalar.data(), k);
    const double d_simd = simd->dot(x.data(), y_scalar.data(), k);
    ASSERT_EQ(std::memcmp(&d_scalar, &d_simd, sizeof(double)), 0);
  }
}

TEST(KernelsTest, SelectSwitchesActiveTable) {
  ASSERT_TRUE(kernels::select("scalar"));
  EXPECT_STREQ(kernels::active().name, "scalar");
  if (kernels::avx2_kernels() != nullptr) {
    ASSERT_TRUE(kernels::select("avx2"));
    EXPECT_STREQ(kernels::active().name, "avx2");
  } else {
    EXPECT_FALSE(kernels::select("avx2"));
  }
  EXPECT_FALSE(kernels::select("sse9"));
}

TEST(KernelsTest, ReportsThroughput) {
  SeededRng rng(3);
  const std::size_t m = 176, k = 64, n = 64;
  const auto a = random_vector(rng, m * k);
  const auto b = random_vector(rng, k * n);
  std::vector<double> c(m * n);
  for (const kernels::KernelTable* t : {&kernels::scalar_kernels(), kernels::avx2_kernels()}) {
    if (t == nullptr) continue;
    const int reps = 200;
    const auto start = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) t->gemm(a.data(), b.data(), c.data(), m, k, n, false);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[ kernels ] %-6s gemm %zux%zux%zu: %.2f GMAC/s\n", t->name, m, k, n,
                reps * static_cast<double>(m * k * n) / secs * 1e-9);
  }
}

}  // namespace
}  // namespace diptych
