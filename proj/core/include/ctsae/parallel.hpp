#pragma once

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ctsae {

// Worker threads for per-op loops. Every output element is produced by
// exactly one thread with a fixed inner summation order, so results are
// bit-identical for any thread count.
inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_max_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

/// Applies the CTSAE_THREADS cap if the env var is set.
inline void apply_thread_env() {
  if (const char* v = std::getenv("CTSAE_THREADS")) {
    int n = std::atoi(v);
    if (n > 0) set_max_threads(n);
  }
}

}  // namespace ctsae
