#include "cpcert/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cpcert {

namespace {
std::atomic<int> override_cap{0};

int env_cap() {
  const char* raw = std::getenv("CP_CERTIFY_THREADS");
  if (raw == nullptr) return 0;
  try {
    return std::max(0, std::stoi(raw));
  } catch (...) {
    return 0;
  }
}
}  // namespace

int thread_cap() {
#ifdef _OPENMP
  int cap = omp_get_max_threads();
#else
  int cap = 1;
#endif
  if (const int o = override_cap.load(); o > 0) return o;
  if (const int e = env_cap(); e > 0) cap = std::min(cap, e);
  return std::max(cap, 1);
}

void set_thread_cap(int threads) { override_cap.store(std::max(threads, 0)); }

}  // namespace cpcert
