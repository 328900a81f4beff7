#include "sparsedyn/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "sparsedyn/error.hpp"
#include "sparsedyn/parallel.hpp"

namespace sparsedyn::stats {

void GroupSpec::validate(std::size_t n_series) const {
    if (g.size() < 2 || h.size() < 2) {
        throw ArgumentError("group spec: both groups need at least 2 series");
    }
    std::set<std::size_t> seen;
    for (std::size_t i : g) {
        if (i >= n_series) throw ArgumentError("group spec: index out of range");
        if (!seen.insert(i).second) throw ArgumentError("group spec: duplicate index");
    }
    for (std::size_t i : h) {
        if (i >= n_series) throw ArgumentError("group spec: index out of range");
        if (!seen.insert(i).second) throw ArgumentError("group spec: groups must be disjoint");
    }
}

namespace {

// Upper tail mass P(U >= u_obs) of the exact rank-sum distribution via the
// recurrence count(m,n,u) = count(m-1,n,u-n) + count(m,n-1,u). Tie-free
// integer U only.
double exact_tail_geq(std::size_t m, std::size_t n, double u_obs) {
    const std::size_t umax = m * n;
    std::vector<std::vector<std::vector<double>>> memo(
        m + 1, std::vector<std::vector<double>>(n + 1));
    for (std::size_t i = 0; i <= m; ++i)
        for (std::size_t j = 0; j <= n; ++j) memo[i][j].assign(i * j + 1, -1.0);
    std::function<double(std::size_t, std::size_t, long long)> count =
        [&](std::size_t mm, std::size_t nn, long long u) -> double {
        if (u < 0) return 0.0;
        if (mm == 0 || nn == 0) return u == 0 ? 1.0 : 0.0;
        if (u > static_cast<long long>(mm * nn)) return 0.0;
        double& slot = memo[mm][nn][static_cast<std::size_t>(u)];
        if (slot >= 0.0) return slot;
        slot = count(mm - 1, nn, u - static_cast<long long>(nn)) + count(mm, nn - 1, u);
        return slot;
    };
    double total = 0.0, tail = 0.0;
    for (std::size_t u = 0; u <= umax; ++u) {
        const double c = count(m, n, static_cast<long long>(u));
        total += c;
        if (static_cast<double>(u) >= u_obs - 1e-12) tail += c;
    }
    return tail / total;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

} // namespace

RankSumResult rank_sum_test(std::span<const double> a, std::span<const double> b,
                            bool force_normal) {
    if (a.empty() || b.empty()) throw ArgumentError("rank_sum_test: empty sample");
    const std::size_t m = a.size(), n = b.size();
    // U with midrank tie handling
    double u = 0.0;
    for (double x : a)
        for (double y : b) {
            if (x > y)
                u += 1.0;
            else if (x == y)
                u += 0.5;
        }
    // tie structure of the pooled sample
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::sort(pooled.begin(), pooled.end());
    bool ties = false;
    double tie_term = 0.0;
    for (std::size_t i = 0; i < pooled.size();) {
        std::size_t j = i;
        while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
        const double t = static_cast<double>(j - i);
        if (t > 1.0) {
            ties = true;
            tie_term += t * t * t - t;
        }
        i = j;
    }

    RankSumResult res;
    res.u = u;
    if (!force_normal && !ties && m + n <= 20) {
        res.exact = true;
        res.p = exact_tail_geq(m, n, u);
        return res;
    }
    const double nn = static_cast<double>(m + n);
    const double mu = 0.5 * static_cast<double>(m) * static_cast<double>(n);
    double var = (static_cast<double>(m) * static_cast<double>(n) / 12.0) *
                 ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if (var <= 0.0) {
        // every observation tied: no evidence either way
        res.p = 0.5;
        return res;
    }
    const double z = (u - mu - 0.5) / std::sqrt(var);
    res.p = normal_sf(z);
    return res;
}

SwapTestResult swap_test(const std::vector<var::LatentSeries>& latents,
                         const std::vector<var::VarCoefficients>& coeffs,
                         const GroupSpec& groups) {
    if (latents.size() != coeffs.size()) {
        throw DimensionError("swap_test: latents and coefficients must align");
    }
    groups.validate(latents.size());
    std::vector<std::size_t> used(groups.g.begin(), groups.g.end());
    used.insert(used.end(), groups.h.begin(), groups.h.end());
    const std::size_t k0 = latents[used[0]].k();
    const std::size_t p0 = coeffs[used[0]].p;
    for (std::size_t i : used) {
        if (latents[i].k() != k0 || coeffs[i].k != k0) {
            throw DimensionError("swap_test: latent dimension mismatch across series");
        }
        if (coeffs[i].p != p0) throw DimensionError("swap_test: lag order mismatch");
    }

    // own-coefficient errors once per series
    std::vector<double> e_self(latents.size(), 0.0);
    parallel_for(used.size(), [&](std::size_t i) {
        const std::size_t s = used[i];
        e_self[s] = var::swap_error(latents[s], coeffs[s]);
    });

    auto ordered_pairs = [](const std::vector<std::size_t>& idx) {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t s : idx)
            for (std::size_t r : idx)
                if (s != r) out.emplace_back(s, r);
        return out;
    };
    std::vector<std::pair<std::size_t, std::size_t>> intra = ordered_pairs(groups.g);
    {
        auto hh = ordered_pairs(groups.h);
        intra.insert(intra.end(), hh.begin(), hh.end());
    }
    std::vector<std::pair<std::size_t, std::size_t>> inter;
    for (std::size_t s : groups.g)
        for (std::size_t r : groups.h) {
            inter.emplace_back(s, r);
            inter.emplace_back(r, s);
        }

    SwapTestResult res;
    res.delta_intra.resize(intra.size());
    res.delta_inter.resize(inter.size());
    parallel_for(intra.size(), [&](std::size_t i) {
        const auto [s, r] = intra[i];
        res.delta_intra[i] = var::swap_error(latents[s], coeffs[r]) - e_self[s];
    });
    parallel_for(inter.size(), [&](std::size_t i) {
        const auto [s, r] = inter[i];
        res.delta_inter[i] = var::swap_error(latents[s], coeffs[r]) - e_self[s];
    });

    RankSumResult rs = rank_sum_test(res.delta_inter, res.delta_intra);
    res.u_statistic = rs.u;
    res.p_value = rs.p;
    return res;
}

double influence_distance_test(const std::vector<Tensor>& influence, const GroupSpec& groups) {
    groups.validate(influence.size());
    const std::size_t k = influence[groups.g[0]].numel();
    for (std::size_t i : groups.g)
        if (influence[i].numel() != k) throw DimensionError("influence test: length mismatch");
    for (std::size_t i : groups.h)
        if (influence[i].numel() != k) throw DimensionError("influence test: length mismatch");

    auto dist = [&](std::size_t s, std::size_t r) {
        double acc = 0.0;
        auto a = influence[s].data(), b = influence[r].data();
        for (std::size_t i = 0; i < k; ++i) {
            const double d = a[i] - b[i];
            acc += d * d;
        }
        return acc;
    };
    std::vector<double> intra, inter;
    auto within = [&](const std::vector<std::size_t>& idx) {
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = i + 1; j < idx.size(); ++j)
                intra.push_back(dist(idx[i], idx[j]));
    };
    within(groups.g);
    within(groups.h);
    for (std::size_t s : groups.g)
        for (std::size_t r : groups.h) inter.push_back(dist(s, r));
    return rank_sum_test(inter, intra).p;
}

std::vector<BonferroniItem> bonferroni(const std::vector<double>& p_values, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("bonferroni: alpha must be in (0,1)");
    std::vector<BonferroniItem> out;
    const double cut = alpha / static_cast<double>(p_values.size());
    for (double p : p_values) out.push_back({p, p < cut});
    return out;
}

} // namespace sparsedyn::stats
