#include "splatweaver/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

namespace splat {

std::string strformat(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list args2;
  va_copy(args2, args);
  int n = std::vsnprintf(nullptr, 0, fmt, args);
  va_end(args);
  std::string out(size_t(n > 0 ? n : 0), '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args2);
  va_end(args2);
  return out;
}

namespace {

std::atomic<int> g_thread_override{0};

int resolve_threads() {
  if (const char* env = std::getenv("SPLATWEAVER_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? int(hw) : 1;
}

}  // namespace

int thread_count() {
  int n = g_thread_override.load(std::memory_order_relaxed);
  return n >= 1 ? n : resolve_threads();
}

void set_thread_count(int n) {
  g_thread_override.store(n, std::memory_order_relaxed);
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  int threads = thread_count();
  if (threads <= 1 || n == 1) {
    body(0, n);
    return;
  }
  int64_t chunks = std::min<int64_t>(threads, n);
  int64_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(size_t(chunks - 1));
  for (int64_t c = 1; c < chunks; ++c) {
    int64_t b = c * per;
    int64_t e = std::min(n, b + per);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  body(0, std::min(per, n));
  for (auto& t : pool) t.join();
}

}  // namespace splat
