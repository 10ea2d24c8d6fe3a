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

// AVX2+FMA variants. This translation unit is the only one compiled with
// -mavx2 -mfma; nothing here may be called unless cpu_has_avx2_fma().

#include <cmath>

#include "diptych/kernels.hpp"

#if defined(DIPTYCH_HAVE_AVX2)
#include <immintrin.h>

namespace diptych::kernels {
namespace {

// Scalar fma tail shared by all edge cases; same order as the reference.
inline void gemm_cell(const double* arow, const double* b, double* cptr,
                      std::size_t k, std::size_t n, bool accumulate) {
  double acc = accumulate ? *cptr : 0.0;
  for (std::size_t p = 0; p < k; ++p) acc = std::fma(arow[p], b[p * n], acc);
  *cptr = acc;
}

// 4 rows x 8 columns register tile.
inline void tile_4x8(const double* a, const double* b, double* c, std::size_t k,
                     std::size_t n, bool accumulate) {
  __m256d c00, c01, c10, c11, c20, c21, c30, c31;
  if (accumulate) {
    c00 = _mm256_loadu_pd(c);
    c01 = _mm256_loadu_pd(c + 4);
    c10 = _mm256_loadu_pd(c + n);
    c11 = _mm256_loadu_pd(c + n + 4);
    c20 = _mm256_loadu_pd(c + 2 * n);
    c21 = _mm256_loadu_pd(c + 2 * n + 4);
    c30 = _mm256_loadu_pd(c + 3 * n);
    c31 = _mm256_loadu_pd(c + 3 * n + 4);
  } else {
    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_pd();
  }
  const double* a0 = a;
  const double* a1 = a + k;
  const double* a2 = a + 2 * k;
  const double* a3 = a + 3 * k;
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * n);
    const __m256d b1 = _mm256_loadu_pd(b + p * n + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + n, c10);
  _mm256_storeu_pd(c + n + 4, c11);
  _mm256_storeu_pd(c + 2 * n, c20);
  _mm256_storeu_pd(c + 2 * n + 4, c21);
  _mm256_storeu_pd(c + 3 * n, c30);
  _mm256_storeu_pd(c + 3 * n + 4, c31);
}

// 1 row x 8 columns, for the row remainder.
inline void tile_1x8(const double* a, const double* b, double* c, std::size_t k,
                     std::size_t n, bool accumulate) {
  __m256d c0 = accumulate ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
  __m256d c1 = accumulate ? _mm256_loadu_pd(c + 4) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + 4), c1);
  }
  _mm256_storeu_pd(c, c0);
  _mm256_storeu_pd(c + 4, c1);
}

// 1 row x 4 columns, for the column remainder.
inline void tile_1x4(const double* a, const double* b, double* c, std::size_t k,
                     std::size_t n, bool accumulate) {
  __m256d c0 = accumulate ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * n), c0);
  }
  _mm256_storeu_pd(c, c0);
}

void gemm_avx2(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const std::size_t n8 = n - n % 8;
  const std::size_t m4 = m - m % 4;
  for (std::size_t i = 0; i < m4; i += 4) {
    for (std::size_t j = 0; j < n8; j += 8) {
      tile_4x8(a + i * k, b + j, c + i * n + j, k, n, accumulate);
    }
  }
  for (std::size_t i = m4; i < m; ++i) {
    for (std::size_t j = 0; j < n8; j += 8) {
      tile_1x8(a + i * k, b + j, c + i * n + j, k, n, accumulate);
    }
  }
  if (n8 == n) return;
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t j = n8;
    if (n - j >= 4) {
      tile_1x4(a + i * k, b + j, c + i * n + j, k, n, accumulate);
      j += 4;
    }
    for (; j < n; ++j) gemm_cell(a + i * k, b + j, c + i * n + j, k, n, accumulate);
  }
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d s = _mm256_setzero_pd();
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4) {
    s = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, s);
  double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (std::size_t i = body; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{"avx2", gemm_avx2, axpy_avx2, dot_avx2};
  return cpu_has_avx2_fma() ? &table : nullptr;
}

}  // namespace diptych::kernels

#else

namespace diptych::kernels {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace diptych::kernels

#endif
