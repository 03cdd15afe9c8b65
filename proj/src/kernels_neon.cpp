// NEON variants for aarch64 builds. Same lane-exactness contract as the AVX2
// table: plain mul+add, no fused ops.

#include "splatweaver/kernels.hpp"

#if defined(__aarch64__) && !defined(SPLATWEAVER_REAL32)

#include <arm_neon.h>

namespace splat::kernels {

namespace {

void n_add(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(z + i, vaddq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) z[i] = x[i] + y[i];
}

void n_sub(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(z + i, vsubq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) z[i] = x[i] - y[i];
}

void n_mul(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(z + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) z[i] = x[i] * y[i];
}

void n_div(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(z + i, vdivq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) z[i] = x[i] / y[i];
}

void n_relu(const real* x, real* z, int64_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(z + i, vmaxq_f64(vld1q_f64(x + i), zero));
  for (; i < n; ++i) z[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void n_sqdiff(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t d = vsubq_f64(vld1q_f64(x + i), vld1q_f64(y + i));
    vst1q_f64(z + i, vmulq_f64(d, d));
  }
  for (; i < n; ++i) {
    real d = x[i] - y[i];
    z[i] = d * d;
  }
}

void n_axpy(real a, const real* x, real* y, int64_t n) {
  const float64x2_t av = vdupq_n_f64(a);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t prod = vmulq_f64(av, vld1q_f64(x + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void n_mul_acc(const real* x, const real* y, real* z, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t prod = vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i));
    vst1q_f64(z + i, vaddq_f64(vld1q_f64(z + i), prod));
  }
  for (; i < n; ++i) z[i] += x[i] * y[i];
}

void n_scale_shift(const real* x, real a, real b, real* z, int64_t n) {
  const float64x2_t av = vdupq_n_f64(a);
  const float64x2_t bv = vdupq_n_f64(b);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t prod = vmulq_f64(vld1q_f64(x + i), av);
    vst1q_f64(z + i, vaddq_f64(prod, bv));
  }
  for (; i < n; ++i) z[i] = x[i] * a + b;
}

}  // namespace

const Table* neon_table_impl() {
  static const Table t{n_add, n_sub, n_mul, n_div, n_relu,
                       n_sqdiff, n_axpy, n_mul_acc, n_scale_shift};
  return &t;
}

}  // namespace splat::kernels

#else

namespace splat::kernels {
const Table* neon_table_impl() { return nullptr; }
}  // namespace splat::kernels

#endif
