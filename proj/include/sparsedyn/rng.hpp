#pragma once

#include <cstdint>

namespace sparsedyn {

// Counter-based 64-bit generator: output i of stream (seed) is a SplitMix64
// finalizer applied to seed + i * golden. Stateless per (seed, counter), so
// any draw is addressable and streams fork cheaply; uses only integer ops
// and IEEE adds/multiplies, so sequences are bit-exact across platforms.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    static std::uint64_t mix(std::uint64_t seed, std::uint64_t counter);

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit();

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi);

    // Approximate standard normal: sum of 12 uniforms minus 6 (support
    // [-6, 6]). Chosen over Box-Muller so draws avoid libm transcendentals
    // and stay bit-exact everywhere.
    double next_gauss();

    // i in [0, n).
    std::uint64_t next_below(std::uint64_t n);

    // Independent stream derived from this seed and a stream id.
    CounterRng fork(std::uint64_t stream) const {
        return CounterRng(mix(seed_, 0x5f356495813f9b65ULL ^ stream));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

} // namespace sparsedyn
