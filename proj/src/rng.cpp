#include "sparsedyn/rng.hpp"

namespace sparsedyn {

std::uint64_t CounterRng::mix(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t z = seed + counter * 0x9e3779b97f4a7c15ULL + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t CounterRng::next_u64() { return mix(seed_, counter_++); }

double CounterRng::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
}

double CounterRng::next_gauss() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += next_unit();
    return s - 6.0;
}

std::uint64_t CounterRng::next_below(std::uint64_t n) {
    // Multiply-shift range reduction; bias is negligible for n << 2^64 and
    // keeps the draw a single counter increment.
    if (n == 0) return 0;
    unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
}

} // namespace sparsedyn
