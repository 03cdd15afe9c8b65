#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace splat {

// Scalar type for all tensor math. Double by default; gradient checks at the
// tolerances used in the test suite are only meaningful in double precision.
#ifdef SPLATWEAVER_REAL32
using real = float;
#else
using real = double;
#endif

constexpr real kPi = real(3.14159265358979323846);

// Shape mismatch between operands of a tensor op.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated precondition or internal invariant.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed user input (files, configs, CLI arguments).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

std::string strformat(const char* fmt, ...);

// ---------------------------------------------------------------------------
// Threading

// Number of worker threads used by parallel kernels. Resolution order:
// explicit set_thread_count(), then the SPLATWEAVER_THREADS environment
// variable, then hardware concurrency. A count of 1 runs everything inline.
int thread_count();
void set_thread_count(int n);  // 0 restores automatic resolution

// Runs body(begin, end) over contiguous chunks of [0, n). Chunks are disjoint,
// so results are independent of the thread count as long as the body only
// writes to its own range.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// mt19937_64 with explicit transforms instead of std:: distributions, which
// are implementation-defined. Same seed, same sequence, on every platform.

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // [0, 1)
  double uniform() {
    return double(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * double(kPi) * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Standard Gumbel(0, 1).
  double gumbel() {
    double u = 1.0 - uniform();  // (0, 1]
    return -std::log(-std::log(u) + 1e-300);
  }

  // Integer in [0, n).
  int uniform_int(int n) {
    int v = int(uniform() * double(n));
    return v >= n ? n - 1 : v;
  }

  uint64_t next_u64() { return eng_(); }

  // Derives an independent stream seed, e.g. mix(seed, step).
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace splat
