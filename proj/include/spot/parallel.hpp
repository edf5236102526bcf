#pragma once

#include <exception>

namespace spot {

/// Runs body(i) for i in [0, n) across OpenMP threads. Exceptions cannot
/// cross the parallel region, so they are caught per iteration and the one
/// from the lowest index is rethrown afterwards.
template <class Body>
void parallel_for(long n, Body&& body) {
  std::exception_ptr first;
  long first_index = n;
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(spot_parallel_for)
      if (i < first_index) {
        first_index = i;
        first = std::current_exception();
      }
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace spot
