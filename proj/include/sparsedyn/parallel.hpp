#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace sparsedyn {

// Global worker-thread count. 0 means "use the OpenMP default".
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n). Iterations must be independent; each
// iteration writes only locations owned by its index, so results are
// bit-identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Sum with a thread-count-independent reduction order: fixed-size blocks
// are summed independently, then block partials are combined in index
// order. Bit-identical for any thread count.
double deterministic_sum(std::span<const double> values);

} // namespace sparsedyn
