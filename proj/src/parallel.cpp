#include "sparsedyn/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <atomic>

namespace sparsedyn {

namespace {
std::atomic<int> g_threads{0};
}

void set_num_threads(int n) {
    if (n < 0) n = 0;
    g_threads.store(n);
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

int num_threads() { return g_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
#ifdef _OPENMP
    // inside an existing team, run inline: nested regions only add sync cost
    if (n > 1 && !omp_in_parallel()) {
        const long long ln = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < ln; ++i) fn(static_cast<std::size_t>(i));
        return;
    }
#endif
    for (std::size_t i = 0; i < n; ++i) fn(i);
}

double deterministic_sum(std::span<const double> values) {
    constexpr std::size_t kBlock = 4096;
    const std::size_t n = values.size();
    if (n <= kBlock) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(n_blocks, 0.0);
    parallel_for(n_blocks, [&](std::size_t b) {
        const std::size_t lo = b * kBlock;
        const std::size_t hi = lo + kBlock < n ? lo + kBlock : n;
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += values[i];
        partial[b] = s;
    });
    double total = 0.0;
    for (double v : partial) total += v;
    return total;
}

} // namespace sparsedyn
