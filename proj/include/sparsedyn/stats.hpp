#pragma once

#include <span>
#include <vector>

#include "sparsedyn/tensor.hpp"
#include "sparsedyn/var.hpp"

namespace sparsedyn::stats {

// Two disjoint series-index groups.
struct GroupSpec {
    std::vector<std::size_t> g, h;
    void validate(std::size_t n_series) const;
};

struct RankSumResult {
    double u = 0.0;      // Mann-Whitney U of a over b, midranks on ties
    double p = 1.0;      // one-sided, H1: a stochastically greater than b
    bool exact = false;  // full enumeration (tie-free, |a|+|b| <= 20)
};

// force_normal skips the exact path; used to validate the approximation.
RankSumResult rank_sum_test(std::span<const double> a, std::span<const double> b,
                            bool force_normal = false);

struct SwapTestResult {
    std::vector<double> delta_intra; // ordered pairs within G and within H
    std::vector<double> delta_inter; // ordered pairs across the groups
    double u_statistic = 0.0;
    double p_value = 1.0;
};

// Coefficient-swap test: prediction-error differentials Delta_sr for ordered
// pairs, one-sided rank-sum of inter against intra.
SwapTestResult swap_test(const std::vector<var::LatentSeries>& latents,
                         const std::vector<var::VarCoefficients>& coeffs,
                         const GroupSpec& groups);

// Pairwise squared distances between influence vectors (unordered pairs),
// inter vs intra, one-sided.
double influence_distance_test(const std::vector<Tensor>& influence, const GroupSpec& groups);

struct BonferroniItem {
    double p;
    bool reject;
};

// reject iff p < alpha / m.
std::vector<BonferroniItem> bonferroni(const std::vector<double>& p_values, double alpha);

} // namespace sparsedyn::stats
