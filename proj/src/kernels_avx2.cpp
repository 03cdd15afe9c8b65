// AVX2 variants. Compiled with -mavx2 only; callers reach these through the
// runtime-dispatched table. Plain mul+add (no FMA) so every lane matches the
// scalar reference bit for bit.

#include "splatweaver/kernels.hpp"

#if defined(__AVX2__) && !defined(SPLATWEAVER_REAL32)

#include <immintrin.h>

namespace splat::kernels {

namespace {

void a_add(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i),
                                          _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) z[i] = x[i] + y[i];
}

void a_sub(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(z + i, _mm256_sub_pd(_mm256_loadu_pd(x + i),
                                          _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) z[i] = x[i] - y[i];
}

void a_mul(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i),
                                          _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) z[i] = x[i] * y[i];
}

void a_div(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(z + i, _mm256_div_pd(_mm256_loadu_pd(x + i),
                                          _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) z[i] = x[i] / y[i];
}

void a_relu(const real* x, real* z, int64_t n) {
  const __m256d zero = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(z + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) z[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void a_sqdiff(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(z + i, _mm256_mul_pd(d, d));
  }
  for (; i < n; ++i) {
    real d = x[i] - y[i];
    z[i] = d * d;
  }
}

void a_axpy(real a, const real* x, real* y, int64_t n) {
  const __m256d av = _mm256_set1_pd(a);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void a_mul_acc(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(z + i), prod));
  }
  for (; i < n; ++i) z[i] += x[i] * y[i];
}

void a_scale_shift(const real* x, real a, real b, real* z, int64_t n) {
  const __m256d av = _mm256_set1_pd(a);
  const __m256d bv = _mm256_set1_pd(b);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(x + i), av);
    _mm256_storeu_pd(z + i, _mm256_add_pd(prod, bv));
  }
  for (; i < n; ++i) z[i] = x[i] * a + b;
}

}  // namespace

const Table* avx2_table_impl() {
  static const Table t{a_add, a_sub, a_mul, a_div, a_relu,
                       a_sqdiff, a_axpy, a_mul_acc, a_scale_shift};
  return &t;
}

}  // namespace splat::kernels

#else

namespace splat::kernels {
const Table* avx2_table_impl() { return nullptr; }
}  // namespace splat::kernels

#endif
