#include "splatweaver/kernels.hpp"

namespace splat::kernels {

namespace {

void s_add(const real* x, const real* y, real* z, int64_t n) {
  for (int64_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

void s_sub(const real* x, const real* y, real* z, int64_t n) {
  for (int64_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
}

void s_mul(const real* x, const real* y, real* z, int64_t n) {
  for (int64_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

void s_div(const real* x, const real* y, real* z, int64_t n) {
  for (int64_t i = 0; i < n; ++i) z[i] = x[i] / y[i];
}

void s_relu(const real* x, real* z, int64_t n) {
  for (int64_t i = 0; i < n; ++i) z[i] = x[i] > real(0) ? x[i] : real(0);
}

void s_sqdiff(const real* x, const real* y, real* z, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    real d = x[i] - y[i];
    z[i] = d * d;
  }
}

void s_axpy(real a, const real* x, real* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_mul_acc(const real* x, const real* y, real* z, int64_t n) {
  for (int64_t i = 0; i < n; ++i) z[i] += x[i] * y[i];
}

void s_scale_shift(const real* x, real a, real b, real* z, int64_t n) {
  for (int64_t i = 0; i < n; ++i) z[i] = x[i] * a + b;
}

}  // namespace

const Table& scalar_table() {
  static const Table t{s_add, s_sub, s_mul, s_div, s_relu,
                       s_sqdiff, s_axpy, s_mul_acc, s_scale_shift};
  return t;
}

void matmul_acc(const real* a, const real* b, real* c, int m, int k, int n) {
  const Table& kt = table();
  for (int i = 0; i < m; ++i) {
    const real* arow = a + int64_t(i) * k;
    real* crow = c + int64_t(i) * n;
    for (int p = 0; p < k; ++p) {
      kt.axpy(arow[p], b + int64_t(p) * n, crow, n);
    }
  }
}

}  // namespace splat::kernels
