#pragma once

#include <cstddef>
#include <functional>

namespace wslc {

// Process-wide worker count used by batch-parallel loops. Results never depend
// on it: every parallel loop writes disjoint slots and reduces in index order.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n). Blocks until all iterations finish; rethrows the
// first exception by index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace wslc
