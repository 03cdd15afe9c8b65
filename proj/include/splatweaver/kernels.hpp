#pragma once

#include <cstdint>
#include <string>

#include "splatweaver/common.hpp"

// Data-parallel inner loops behind the tensor ops. Each kernel exists as a
// scalar reference and, where the per-element operation sequence is
// lane-independent, as a SIMD variant selected at runtime. Lane independence
// means the SIMD variants produce bit-identical results to the scalar
// references (no reassociation, no FMA contraction), so kernel selection never
// affects determinism. Reductions and transcendentals stay scalar.

namespace splat::kernels {

enum class Isa { scalar, avx2, neon };

// Active instruction set. Resolution: SPLATWEAVER_SIMD env var
// ("scalar"/"avx2"/"auto"), else the best set the CPU supports.
Isa active_isa();
void force_isa(Isa isa);  // for tests; pass active-detected value to restore
std::string isa_name(Isa isa);
bool cpu_has_avx2();

struct Table {
  // z[i] = x[i] (+,-,*,/) y[i]
  void (*add)(const real* x, const real* y, real* z, int64_t n);
  void (*sub)(const real* x, const real* y, real* z, int64_t n);
  void (*mul)(const real* x, const real* y, real* z, int64_t n);
  void (*div)(const real* x, const real* y, real* z, int64_t n);
  // z[i] = max(x[i], 0)
  void (*relu)(const real* x, real* z, int64_t n);
  // z[i] = (x[i] - y[i])^2
  void (*sqdiff)(const real* x, const real* y, real* z, int64_t n);
  // y[i] += a * x[i]
  void (*axpy)(real a, const real* x, real* y, int64_t n);
  // z[i] += x[i] * y[i]
  void (*mul_acc)(const real* x, const real* y, real* z, int64_t n);
  // z[i] = x[i] * a + b
  void (*scale_shift)(const real* x, real a, real b, real* z, int64_t n);
};

const Table& table();          // dispatched for active_isa()
const Table& scalar_table();   // always the scalar references
const Table* simd_table(Isa isa);  // nullptr if isa not built/supported

// Matrix product c[m,n] += a[m,k] * b[k,n], row-major, c zero-initialized by
// the caller. The k loop is outermost per row so every c element accumulates
// in the same order on every path.
void matmul_acc(const real* a, const real* b, real* c, int m, int k, int n);

}  // namespace splat::kernels
