#include "sparsedyn/lars.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sparsedyn/error.hpp"
#include "sparsedyn/ops.hpp"
#include "sparsedyn/tape.hpp"

namespace sparsedyn::lars {

namespace {

constexpr double kMinPivot = 1e-10;

// [m,m] gram plus its new border row -> [m+1,m+1]; keeps the tape wired to
// both inputs.
Tensor grow_gram(const Tensor& g, const Tensor& row) {
    const std::size_t m = row.numel() - 1;
    if (g.numel() != m * m) throw DimensionError("grow_gram: size mismatch");
    Tensor out({m + 1, m + 1});
    auto od = out.mutable_data();
    auto gd = g.data();
    auto rd = row.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) od[i * (m + 1) + j] = gd[i * m + j];
    for (std::size_t i = 0; i < m; ++i) {
        od[m * (m + 1) + i] = rd[i];
        od[i * (m + 1) + m] = rd[i];
    }
    od[m * (m + 1) + m] = rd[m];
    Tape* tape = common_tape({&g, &row});
    const std::int64_t ng = g.node(), nr = row.node();
    if (!tape) return out;
    return tape->record(std::move(out), {ng, nr}, [ng, nr, m](Tape& t, const Tensor& up) {
        auto ud = up.data();
        if (ng >= 0) {
            Tensor gg({m, m});
            auto ggd = gg.mutable_data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) ggd[i * m + j] = ud[i * (m + 1) + j];
            t.accumulate(ng, std::move(gg));
        }
        if (nr >= 0) {
            Tensor gr({m + 1});
            auto grd = gr.mutable_data();
            for (std::size_t i = 0; i < m; ++i)
                grd[i] = ud[m * (m + 1) + i] + ud[i * (m + 1) + m];
            grd[m] = ud[m * (m + 1) + m];
            t.accumulate(nr, gr);
        }
    });
}

// drop row/column q of an [m,m] gram
Tensor shrink_gram(const Tensor& g, std::size_t m, std::size_t q) {
    std::vector<std::size_t> keep;
    keep.reserve((m - 1) * (m - 1));
    for (std::size_t i = 0; i < m; ++i) {
        if (i == q) continue;
        for (std::size_t j = 0; j < m; ++j) {
            if (j == q) continue;
            keep.push_back(i * m + j);
        }
    }
    return reshape(gather(g, keep), {m - 1, m - 1});
}

std::size_t argmax_abs(std::span<const double> v) {
    std::size_t best = 0;
    double bv = -1.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double a = std::fabs(v[i]);
        if (a > bv) { // strict: lowest index wins ties
            bv = a;
            best = i;
        }
    }
    return best;
}

std::string active_str(const std::vector<std::size_t>& active) {
    std::ostringstream os;
    os << '{';
    for (std::size_t i = 0; i < active.size(); ++i) {
        if (i) os << ',';
        os << active[i];
    }
    os << '}';
    return os.str();
}

// Lower Cholesky factor of the active Gram matrix, maintained across
// enter/leave events. Rebuilt from scratch when a pivot degrades.
class ActiveFactor {
public:
    std::size_t size() const { return m_; }
    const std::vector<double>& data() const { return l_; }

    double min_diag() const {
        double d = l_.empty() ? 0.0 : l_[0];
        for (std::size_t i = 0; i < m_; ++i) d = std::min(d, l_[i * m_ + i]);
        return d;
    }

    bool rebuild(const std::vector<double>& gram, std::size_t m) {
        l_ = gram;
        m_ = m;
        return cholesky_factor(l_, m_, kMinPivot);
    }

    // new_row holds the gram entries against the existing active set plus
    // the diagonal corner, length m_+1.
    bool insert_last(std::span<const double> new_row) {
        const std::size_t m = m_;
        std::vector<double> l(m);
        // forward substitution L l = g
        for (std::size_t i = 0; i < m; ++i) {
            double s = new_row[i];
            for (std::size_t k = 0; k < i; ++k) s -= l_[i * m + k] * l[k];
            l[i] = s / l_[i * m + i];
        }
        double d = new_row[m];
        for (std::size_t k = 0; k < m; ++k) d -= l[k] * l[k];
        if (!(d > kMinPivot * kMinPivot)) return false;
        std::vector<double> grown((m + 1) * (m + 1), 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j <= i; ++j) grown[i * (m + 1) + j] = l_[i * m + j];
        for (std::size_t k = 0; k < m; ++k) grown[m * (m + 1) + k] = l[k];
        grown[m * (m + 1) + m] = std::sqrt(d);
        l_ = std::move(grown);
        ++m_;
        return true;
    }

    // Deletes row/column q; the trailing block absorbs the removed column
    // through a rank-1 update.
    bool remove(std::size_t q) {
        const std::size_t m = m_;
        const std::size_t k = m - 1;
        std::vector<double> nl(k * k, 0.0);
        for (std::size_t i = 0; i < q; ++i)
            for (std::size_t j = 0; j <= i; ++j) nl[i * k + j] = l_[i * m + j];
        const std::size_t tail = m - q - 1;
        std::vector<double> v(tail);
        for (std::size_t i = 0; i < tail; ++i) v[i] = l_[(q + 1 + i) * m + q];
        // copy trailing block and the columns left of q
        for (std::size_t i = 0; i < tail; ++i) {
            for (std::size_t j = 0; j < q; ++j) nl[(q + i) * k + j] = l_[(q + 1 + i) * m + j];
            for (std::size_t j = 0; j <= i; ++j)
                nl[(q + i) * k + (q + j)] = l_[(q + 1 + i) * m + (q + 1 + j)];
        }
        // rank-1 add: T T^T = S S^T + v v^T on the trailing block
        for (std::size_t kk = 0; kk < tail; ++kk) {
            double* diag = &nl[(q + kk) * k + (q + kk)];
            const double r = std::hypot(*diag, v[kk]);
            if (!(r > kMinPivot)) return false;
            const double c = r / *diag;
            const double s = v[kk] / *diag;
            *diag = r;
            for (std::size_t i = kk + 1; i < tail; ++i) {
                double& lij = nl[(q + i) * k + (q + kk)];
                lij = (lij + s * v[i]) / c;
                v[i] = c * v[i] - s * lij;
            }
        }
        l_ = std::move(nl);
        m_ = k;
        return true;
    }

private:
    std::size_t m_ = 0;
    std::vector<double> l_;
};

} // namespace

DesignOperator make_dense_operator(const Tensor& x) {
    if (x.ndim() != 2) throw DimensionError("dense design: X must be [n,m], got " + x.shape_str());
    const Tensor sx = x.detached();
    const std::size_t n = sx.dim(0), m = sx.dim(1);
    DesignOperator op;
    op.n_samples = n;
    op.n_features = m;
    op.apply = [sx, n, m](const Tensor& beta) {
        if (beta.numel() != m) throw DimensionError("dense apply: beta length mismatch");
        Tensor u({n});
        auto ud = u.mutable_data();
        auto xd = sx.data();
        auto bd = beta.data();
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += xd[i * m + j] * bd[j];
            ud[i] = acc;
        }
        if (!beta.on_tape()) return u;
        const std::int64_t nb = beta.node();
        return beta.tape()->record(std::move(u), {nb},
                                   [nb, sx, n, m](Tape& t, const Tensor& up) {
                                       Tensor g({m});
                                       auto gd = g.mutable_data();
                                       auto xd = sx.data();
                                       auto ud = up.data();
                                       for (std::size_t j = 0; j < m; ++j) {
                                           double acc = 0.0;
                                           for (std::size_t i = 0; i < n; ++i)
                                               acc += xd[i * m + j] * ud[i];
                                           gd[j] = acc;
                                       }
                                       t.accumulate(nb, std::move(g));
                                   });
    };
    op.apply_transpose = [sx, n, m](const Tensor& r) {
        if (r.numel() != n) throw DimensionError("dense apply_transpose: r length mismatch");
        Tensor c({m});
        auto cd = c.mutable_data();
        auto xd = sx.data();
        auto rd = r.data();
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += xd[i * m + j] * rd[i];
            cd[j] = acc;
        }
        if (!r.on_tape()) return c;
        const std::int64_t nr = r.node();
        return r.tape()->record(std::move(c), {nr},
                                [nr, sx, n, m](Tape& t, const Tensor& up) {
                                    Tensor g({n});
                                    auto gd = g.mutable_data();
                                    auto xd = sx.data();
                                    auto ud = up.data();
                                    for (std::size_t i = 0; i < n; ++i) {
                                        double acc = 0.0;
                                        for (std::size_t j = 0; j < m; ++j)
                                            acc += xd[i * m + j] * ud[j];
                                        gd[i] = acc;
                                    }
                                    t.accumulate(nr, std::move(g));
                                });
    };
    op.column = [sx, n, m](std::size_t j) {
        if (j >= m) throw DimensionError("dense column: index out of range");
        Tensor col({n});
        auto cd = col.mutable_data();
        auto xd = sx.data();
        for (std::size_t i = 0; i < n; ++i) cd[i] = xd[i * m + j];
        return col;
    };
    op.apply_cols = [sx, n, m](const std::vector<std::size_t>& active, const Tensor& w) {
        if (w.numel() != active.size()) throw DimensionError("dense apply_cols: size mismatch");
        Tensor u({n});
        auto ud = u.mutable_data();
        auto xd = sx.data();
        auto wd = w.data();
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t a = 0; a < active.size(); ++a)
                acc += xd[i * m + active[a]] * wd[a];
            ud[i] = acc;
        }
        if (!w.on_tape()) return u;
        const std::int64_t nw = w.node();
        return w.tape()->record(std::move(u), {nw},
                                [nw, sx, n, m, active](Tape& t, const Tensor& up) {
                                    Tensor g({active.size()});
                                    auto gd = g.mutable_data();
                                    auto xd = sx.data();
                                    auto ud = up.data();
                                    for (std::size_t a = 0; a < active.size(); ++a) {
                                        double acc = 0.0;
                                        for (std::size_t i = 0; i < n; ++i)
                                            acc += xd[i * m + active[a]] * ud[i];
                                        gd[a] = acc;
                                    }
                                    t.accumulate(nw, std::move(g));
                                });
    };
    op.gram = [sx, n, m](const std::vector<std::size_t>& active) {
        Tensor g({active.size(), active.size()});
        auto gd = g.mutable_data();
        auto xd = sx.data();
        for (std::size_t a = 0; a < active.size(); ++a) {
            for (std::size_t b = 0; b <= a; ++b) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    acc += xd[i * m + active[a]] * xd[i * m + active[b]];
                gd[a * active.size() + b] = acc;
                gd[b * active.size() + a] = acc;
            }
        }
        return g;
    };
    op.gram_row = [sx, n, m](const std::vector<std::size_t>& active, std::size_t j) {
        Tensor g({active.size() + 1});
        auto gd = g.mutable_data();
        auto xd = sx.data();
        for (std::size_t a = 0; a <= active.size(); ++a) {
            const std::size_t col = a < active.size() ? active[a] : j;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += xd[i * m + col] * xd[i * m + j];
            gd[a] = acc;
        }
        return g;
    };
    return op;
}

GammaStep step_size_gamma(const Tensor& num, const Tensor& den, double eps_gamma) {
    if (num.numel() != den.numel()) throw DimensionError("step_size_gamma: size mismatch");
    if (num.numel() == 0) throw ArgumentError("step_size_gamma: no candidates");
    Tensor ratios = div_stab(num, den, eps_gamma);
    auto rd = ratios.data();
    GammaStep out;
    double best = 0.0;
    for (std::size_t i = 0; i < rd.size(); ++i) {
        if (!std::isfinite(rd[i]) || rd[i] <= 0.0) continue;
        if (!out.found || rd[i] < best) {
            out.found = true;
            best = rd[i];
            out.index = i;
        }
    }
    if (out.found) out.gamma = gather(ratios, {out.index});
    return out;
}

double lambda_max(const DesignOperator& design, const Tensor& y) {
    Tensor c = design.apply_transpose(y.detached());
    double m = 0.0;
    for (double v : c.data()) m = std::max(m, std::fabs(v));
    return m / static_cast<double>(design.n_samples);
}

std::vector<double> LassoSolution::beta_dense() const {
    std::vector<double> out(n_features, 0.0);
    for (std::size_t i = 0; i < active.size(); ++i) out[active[i]] = beta_values.at(i);
    return out;
}

LassoSolution lasso_path(const DesignOperator& design, const Tensor& y, double lambda_target,
                         const SolverConfig& cfg) {
    if (!(lambda_target >= 0.0)) throw ArgumentError("lasso_path: lambda_target must be >= 0");
    if (!(cfg.eps_gamma > 0.0)) throw ArgumentError("lasso_path: eps_gamma must be > 0");
    const std::size_t n = design.n_samples, m = design.n_features;
    if (y.numel() != n) {
        throw DimensionError("lasso_path: y length " + std::to_string(y.numel()) +
                             " != n_samples " + std::to_string(n));
    }
    const std::size_t max_steps = cfg.max_steps ? cfg.max_steps : 4 * m;
    const double inv_n = 1.0 / static_cast<double>(n);

    LassoSolution sol;
    sol.n_features = m;
    sol.lambda_target = lambda_target;

    Tensor c0 = scale(design.apply_transpose(y), inv_n);
    const std::size_t j0 = argmax_abs(c0.data());
    const double lam_max_v = std::fabs(c0.at(j0));
    sol.knots.push_back(
        {lam_max_v, LassoKnot::Event::Enter, j0, std::vector<double>(m, 0.0)});
    if (lam_max_v <= lambda_target) {
        sol.beta_values = Tensor({0});
        sol.converged = true;
        return sol;
    }

    std::vector<std::size_t> active{j0};
    std::vector<double> signs{c0.at(j0) >= 0.0 ? 1.0 : -1.0};
    Tensor lam = abs_frozen(gather(c0, {j0})); // [1]
    Tensor beta = Tensor::zeros({1});
    // correlations evolve linearly along each segment: c <- c - gamma * v
    Tensor c = c0;
    // the active Gram grows and shrinks with the events; never recomputed
    // from scratch unless its factor degrades
    Tensor gram_t = design.gram(active);
    const Tensor one = Tensor::scalar(1.0);
    ActiveFactor factor;
    bool need_rebuild = true;
    long long just_left = -1;
    bool converged = false;

    for (std::size_t step = 0; step < max_steps; ++step) {
        const std::size_t a = active.size();
        if (need_rebuild || factor.size() != a || factor.min_diag() < kMinPivot) {
            std::vector<double> gv(gram_t.data().begin(), gram_t.data().end());
            if (!factor.rebuild(gv, a)) {
                throw SolverError("lasso_path: singular active Gram matrix, active set " +
                                  active_str(active));
            }
            need_rebuild = false;
        }

        std::vector<double> rhs(a);
        for (std::size_t i = 0; i < a; ++i) rhs[i] = signs[i] * static_cast<double>(n);
        Tensor w = solve_spd_prefactored(gram_t, factor.data(), rhs); // d beta / d(-lambda)
        Tensor u = design.apply_cols(active, w);
        Tensor v = scale(design.apply_transpose(u), inv_n);

        std::vector<std::size_t> inact;
        inact.reserve(m - a);
        {
            std::vector<char> is_active(m, 0);
            for (std::size_t f : active) is_active[f] = 1;
            for (std::size_t f = 0; f < m; ++f) {
                // a feature that just left sits exactly on the boundary; let it
                // cool off one event so the path cannot ping-pong
                if (!is_active[f] && static_cast<long long>(f) != just_left) inact.push_back(f);
            }
        }
        const bool room_to_enter = !inact.empty() && a < std::min(n, m);
        std::vector<Tensor> num_parts, den_parts;
        std::size_t n_in = 0;
        if (room_to_enter) {
            Tensor c_in = gather(c, inact);
            Tensor v_in = gather(v, inact);
            num_parts.push_back(scalar_minus_vec(lam, c_in));
            den_parts.push_back(scalar_minus_vec(one, v_in));
            num_parts.push_back(scalar_plus_vec(lam, c_in));
            den_parts.push_back(scalar_plus_vec(one, v_in));
            n_in = inact.size();
        }
        num_parts.push_back(neg(beta));
        den_parts.push_back(w);
        Tensor nums = concat1d(num_parts);
        Tensor dens = concat1d(den_parts);

        GammaStep gs = step_size_gamma(nums, dens, cfg.eps_gamma);
        const double gamma_target = lam.at(0) - lambda_target;
        if (!gs.found || gs.gamma.at(0) >= gamma_target) {
            Tensor gamma_fin = add_scalar(lam, -lambda_target);
            beta = add_scaled(beta, w, gamma_fin);
            converged = true;
            break;
        }

        beta = add_scaled(beta, w, gs.gamma);
        lam = sub(lam, gs.gamma);
        c = add_scaled(c, v, scale(gs.gamma, -1.0));
        just_left = -1;

        const std::size_t idx = gs.index;
        if (idx < 2 * n_in) {
            const std::size_t j = inact[idx % n_in];
            const double s = idx < n_in ? 1.0 : -1.0;
            Tensor row = design.gram_row(active, j);
            if (!factor.insert_last(
                    std::vector<double>(row.data().begin(), row.data().end()))) {
                need_rebuild = true;
            }
            gram_t = grow_gram(gram_t, row);
            active.push_back(j);
            signs.push_back(s);
            beta = concat1d({beta, Tensor::zeros({1})});
            std::vector<double> snap(m, 0.0);
            for (std::size_t i = 0; i < active.size(); ++i) snap[active[i]] = beta.at(i);
            sol.knots.push_back({lam.at(0), LassoKnot::Event::Enter, j, std::move(snap)});
        } else {
            const std::size_t q = idx - 2 * n_in;
            const std::size_t feat = active[q];
            gram_t = shrink_gram(gram_t, active.size(), q);
            active.erase(active.begin() + static_cast<std::ptrdiff_t>(q));
            signs.erase(signs.begin() + static_cast<std::ptrdiff_t>(q));
            if (!factor.remove(q)) need_rebuild = true;
            std::vector<std::size_t> keep;
            keep.reserve(active.size());
            for (std::size_t i = 0; i <= active.size(); ++i)
                if (i != q) keep.push_back(i);
            beta = gather(beta, keep);
            just_left = static_cast<long long>(feat);
            std::vector<double> snap(m, 0.0);
            for (std::size_t i = 0; i < active.size(); ++i) snap[active[i]] = beta.at(i);
            sol.knots.push_back({lam.at(0), LassoKnot::Event::Leave, feat, std::move(snap)});
        }
    }

    // A coefficient can land exactly on zero when the target coincides with a
    // leave knot; keep the sparse invariant by dropping it.
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < active.size(); ++i)
        if (beta.at(i) != 0.0) keep.push_back(i);
    if (keep.size() != active.size()) {
        std::vector<std::size_t> new_active;
        for (std::size_t i : keep) new_active.push_back(active[i]);
        beta = gather(beta, keep);
        active = std::move(new_active);
    }

    sol.active = std::move(active);
    sol.beta_values = std::move(beta);
    sol.converged = converged;
    return sol;
}

bool kkt_check(const DesignOperator& design, const Tensor& y, const std::vector<double>& beta,
               double lambda, double tol) {
    if (beta.size() != design.n_features) throw DimensionError("kkt_check: beta length mismatch");
    for (double b : beta)
        if (!std::isfinite(b)) throw ArgumentError("kkt_check: beta must be finite");
    const double inv_n = 1.0 / static_cast<double>(design.n_samples);
    Tensor beta_t({design.n_features}, std::vector<double>(beta.begin(), beta.end()));
    Tensor fit = design.apply(beta_t);
    Tensor yv = y.detached();
    Tensor r({design.n_samples});
    {
        auto rd = r.mutable_data();
        auto yd = yv.data();
        auto fd = fit.data();
        for (std::size_t i = 0; i < rd.size(); ++i) rd[i] = yd[i] - fd[i];
    }
    Tensor c = design.apply_transpose(r);
    for (std::size_t j = 0; j < design.n_features; ++j) {
        const double cj = c.at(j) * inv_n;
        if (beta[j] != 0.0) {
            const double s = beta[j] > 0.0 ? 1.0 : -1.0;
            if (std::fabs(cj - lambda * s) > tol) return false;
        } else if (std::fabs(cj) > lambda + tol) {
            return false;
        }
    }
    return true;
}

std::vector<double> solve_dense_oracle(const Tensor& x, const Tensor& y, double lambda,
                                       double tol) {
    if (x.ndim() != 2) throw DimensionError("oracle: X must be [n,m]");
    if (!x.all_finite() || !y.all_finite()) {
        throw ArgumentError("oracle: non-finite input");
    }
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (y.numel() != n) throw DimensionError("oracle: y length mismatch");
    const double inv_n = 1.0 / static_cast<double>(n);
    auto xd = x.data();
    std::vector<double> beta(m, 0.0);
    std::vector<double> r(y.data().begin(), y.data().end());
    std::vector<double> col_sq(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += xd[i * m + j] * xd[i * m + j];
        col_sq[j] = acc * inv_n;
    }
    constexpr std::size_t kMaxSweeps = 200000;
    for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double max_delta = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (col_sq[j] == 0.0) continue;
            double rho = 0.0;
            for (std::size_t i = 0; i < n; ++i) rho += xd[i * m + j] * r[i];
            rho = rho * inv_n + col_sq[j] * beta[j];
            const double nb = soft_threshold(rho, lambda) / col_sq[j];
            const double delta = nb - beta[j];
            if (delta != 0.0) {
                for (std::size_t i = 0; i < n; ++i) r[i] -= xd[i * m + j] * delta;
                beta[j] = nb;
                max_delta = std::max(max_delta, std::fabs(delta));
            }
        }
        if (max_delta <= tol) break;
    }
    return beta;
}

} // namespace sparsedyn::lars
