#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lvnet {

// Parallel map over independent output slices. Every index writes a
// disjoint region and reductions stay inside one index, so results are
// bit-identical for any thread count.
template <typename F>
void parallel_for(int64_t n, F&& f) {
#ifdef _OPENMP
  if (n > 1) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) f(i);
    return;
  }
#endif
  for (int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace lvnet
