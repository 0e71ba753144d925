#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cnfik {

/// Serial runs every index on the calling thread in order; Parallel may use
/// OpenMP worker threads in any order. Kernels written against parallelFor
/// must produce slot-indexed results and reduce them serially afterwards, so
/// both policies give bit-identical output.
enum class ExecPolicy { Serial, Parallel };

template <typename Fn>
void parallelFor(ExecPolicy policy, long n, Fn&& fn) {
  if (policy == ExecPolicy::Parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) fn(i);
    return;
#endif
  }
  for (long i = 0; i < n; ++i) fn(i);
}

inline int maxThreads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void setThreadCount(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace cnfik
