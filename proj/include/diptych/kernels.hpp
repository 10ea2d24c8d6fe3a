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

// Low-level double-precision kernels with a scalar reference implementation
// and SIMD variants chosen at runtime.
//
// Every variant evaluates the same expression DAG in the same order, so all
// variants are bitwise interchangeable:
//   gemm:  c[i][j] = fma(a[i][k-1], b[k-1][j], ... fma(a[i][0], b[0][j], c0))
//          with c0 = c[i][j] when accumulating, +0.0 otherwise.
//   axpy:  y[i] = fma(alpha, x[i], y[i]).
//   dot:   four striped partial sums s_l = fma chain over i ≡ l (mod 4) for
//          the first 4*floor(n/4) elements, combined as (s0 + s1) + (s2 + s3),
//          followed by a sequential fma tail.
#pragma once

#include <cstddef>
#include <string_view>

namespace diptych::kernels {

struct KernelTable {
  const char* name;
  // c (m x n) = [c +] a (m x k) * b (k x n), all row-major and dense.
  void (*gemm)(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
};

const KernelTable& scalar_kernels();

// Null when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels();

// The table used by the numerics layer. Chosen once at first use: AVX2 when
// available, unless the environment variable DIPTYCH_KERNELS=scalar is set.
const KernelTable& active();

// Overrides the active table ("scalar" or "avx2"); returns false if the
// requested variant is not available. Intended for tests and benchmarks.
bool select(std::string_view name);

bool cpu_has_avx2_fma();

}  // namespace diptych::kernels
