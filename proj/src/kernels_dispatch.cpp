#include <atomic>
#include <cstdlib>
#include <cstring>

#include "splatweaver/kernels.hpp"

namespace splat::kernels {

const Table* avx2_table_impl();
const Table* neon_table_impl();

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

namespace {

Isa detect_isa() {
  if (const char* env = std::getenv("SPLATWEAVER_SIMD")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0 && avx2_table_impl() && cpu_has_avx2())
      return Isa::avx2;
    if (std::strcmp(env, "neon") == 0 && neon_table_impl()) return Isa::neon;
    // "auto" or unrecognized falls through to detection
  }
  if (avx2_table_impl() && cpu_has_avx2()) return Isa::avx2;
  if (neon_table_impl()) return Isa::neon;
  return Isa::scalar;
}

std::atomic<int> g_forced{-1};

}  // namespace

Isa active_isa() {
  int f = g_forced.load(std::memory_order_relaxed);
  if (f >= 0) return Isa(f);
  static const Isa detected = detect_isa();
  return detected;
}

void force_isa(Isa isa) { g_forced.store(int(isa), std::memory_order_relaxed); }

std::string isa_name(Isa isa) {
  switch (isa) {
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
    default: return "scalar";
  }
}

const Table* simd_table(Isa isa) {
  switch (isa) {
    case Isa::avx2: return cpu_has_avx2() ? avx2_table_impl() : nullptr;
    case Isa::neon: return neon_table_impl();
    default: return &scalar_table();
  }
}

const Table& table() {
  const Table* t = simd_table(active_isa());
  return t ? *t : scalar_table();
}

}  // namespace splat::kernels
