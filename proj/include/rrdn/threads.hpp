#pragma once

#include <Eigen/Core>

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rrdn {

/// Applies the RRDN_THREADS cap (if set) to the compute backends and returns
/// the thread count in effect.
inline int configure_threads() {
  int threads = 1;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("RRDN_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0 && cap < threads) threads = cap;
  }
#ifdef _OPENMP
  omp_set_num_threads(threads);
#endif
  Eigen::setNbThreads(threads);
  return threads;
}

}  // namespace rrdn
