#include "sparsedyn/var.hpp"

#include <algorithm>
#include <cmath>

#include "sparsedyn/error.hpp"
#include "sparsedyn/kernels.hpp"
#include "sparsedyn/ops.hpp"
#include "sparsedyn/parallel.hpp"
#include "sparsedyn/tape.hpp"

namespace sparsedyn::var {

double latent_scale(const Tensor& z) {
    const std::size_t n = z.numel();
    double mean = 0.0;
    for (double v : z.data()) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : z.data()) {
        const double d = v - mean;
        var += d * d;
    }
    return std::sqrt(var / static_cast<double>(n));
}

std::size_t VarCoefficients::nnz() const {
    std::size_t n = 0;
    for (const auto& lag : lags) n += lag.size();
    return n;
}

Tensor VarCoefficients::dense() const {
    Tensor out = Tensor::zeros({p, k, k});
    auto od = out.mutable_data();
    for (std::size_t lag = 0; lag < p; ++lag)
        for (const Entry& e : lags[lag]) od[(lag * k + e.row) * k + e.col] = e.value;
    return out;
}

VarCoefficients VarCoefficients::from_dense(const Tensor& a, double sigma_z,
                                            std::string series_id) {
    if (a.ndim() != 3 || a.dim(1) != a.dim(2)) {
        throw DimensionError("VarCoefficients: dense block must be [p,K,K], got " +
                             a.shape_str());
    }
    VarCoefficients c;
    c.p = a.dim(0);
    c.k = a.dim(1);
    c.sigma_z = sigma_z;
    c.series_id = std::move(series_id);
    c.lags.resize(c.p);
    auto ad = a.data();
    for (std::size_t lag = 0; lag < c.p; ++lag)
        for (std::size_t r = 0; r < c.k; ++r)
            for (std::size_t col = 0; col < c.k; ++col) {
                const double v = ad[(lag * c.k + r) * c.k + col];
                if (v != 0.0) c.lags[lag].push_back({r, col, v});
            }
    return c;
}

lars::DesignOperator make_lagged_operator(const Tensor& zn, std::size_t p) {
    if (zn.ndim() != 2) throw DimensionError("lagged design: block must be [T,K]");
    const std::size_t t_len = zn.dim(0), k = zn.dim(1);
    if (t_len <= p + 1) throw ArgumentError("lagged design: need T > p + 1");
    const kernels::LaggedDims dims{t_len, k, p};
    const Tensor block = zn; // keeps the tape handle; kernels read values
    const std::int64_t nz = zn.node();

    lars::DesignOperator op;
    op.n_samples = dims.n();
    op.n_features = dims.features();

    op.apply_cols = [block, dims, nz](const std::vector<std::size_t>& active, const Tensor& w) {
        if (w.numel() != active.size()) throw DimensionError("lagged apply_cols: size mismatch");
        Tensor u({dims.n()});
        kernels::lagged_apply_cols(block.data(), dims, active, w.data(), u.mutable_data());
        Tape* t = common_tape({&block, &w});
        if (!t) return u;
        const std::int64_t nw = w.node();
        Tensor sw = w.detached();
        return t->record(std::move(u), {nz, nw},
                         [nz, nw, sw, block, dims, active](Tape& tp, const Tensor& up) {
                             Tensor gz = Tensor::zeros(block.shape());
                             Tensor gw = Tensor::zeros({active.size()});
                             kernels::lagged_apply_cols_backward(block.data(), dims, active,
                                                                 sw.data(), up.data(),
                                                                 gz.mutable_data(),
                                                                 gw.mutable_data());
                             tp.accumulate(nz, std::move(gz));
                             tp.accumulate(nw, std::move(gw));
                         });
    };

    op.apply = [op_cols = op.apply_cols, dims](const Tensor& beta) {
        if (beta.numel() != dims.features()) throw DimensionError("lagged apply: beta length");
        std::vector<std::size_t> all(dims.features());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return op_cols(all, beta);
    };

    op.apply_transpose = [block, dims, nz](const Tensor& r) {
        if (r.numel() != dims.n()) throw DimensionError("lagged apply_transpose: r length");
        Tensor c({dims.features()});
        kernels::lagged_corr(block.data(), dims, r.data(), c.mutable_data());
        Tape* t = common_tape({&block, &r});
        if (!t) return c;
        const std::int64_t nr = r.node();
        Tensor sr = r.detached();
        return t->record(std::move(c), {nz, nr},
                         [nz, nr, sr, block, dims](Tape& tp, const Tensor& up) {
                             Tensor gz = Tensor::zeros(block.shape());
                             Tensor gr = Tensor::zeros({dims.n()});
                             kernels::lagged_corr_backward(block.data(), dims, sr.data(),
                                                           up.data(), gz.mutable_data(),
                                                           gr.mutable_data());
                             tp.accumulate(nz, std::move(gz));
                             tp.accumulate(nr, std::move(gr));
                         });
    };

    op.column = [block, dims](std::size_t f) {
        if (f >= dims.features()) throw DimensionError("lagged column: index out of range");
        Tensor col({dims.n()});
        const std::size_t lag = f / dims.k + 1;
        const std::size_t l = f % dims.k;
        auto cd = col.mutable_data();
        auto zd = block.data();
        for (std::size_t t = dims.p; t < dims.t_len; ++t)
            cd[t - dims.p] = zd[(t - lag) * dims.k + l];
        return col;
    };

    op.gram_row = [block, dims, nz](const std::vector<std::size_t>& active, std::size_t j) {
        const std::size_t m = active.size();
        const std::size_t kj = j / dims.k + 1, lj = j % dims.k;
        Tensor g({m + 1});
        auto gd = g.mutable_data();
        auto zd = block.data();
        for (std::size_t a = 0; a <= m; ++a) {
            const std::size_t f = a < m ? active[a] : j;
            const std::size_t ka = f / dims.k + 1, la = f % dims.k;
            double acc = 0.0;
            for (std::size_t t = dims.p; t < dims.t_len; ++t)
                acc += zd[(t - ka) * dims.k + la] * zd[(t - kj) * dims.k + lj];
            gd[a] = acc;
        }
        if (!block.on_tape()) return g;
        return block.tape()->record(
            std::move(g), {nz}, [nz, block, dims, active, j](Tape& tp, const Tensor& up) {
                const std::size_t m = active.size();
                const std::size_t kj = j / dims.k + 1, lj = j % dims.k;
                Tensor gz = Tensor::zeros(block.shape());
                auto gd = gz.mutable_data();
                auto zd = block.data();
                auto ud = up.data();
                for (std::size_t a = 0; a <= m; ++a) {
                    const std::size_t f = a < m ? active[a] : j;
                    const std::size_t ka = f / dims.k + 1, la = f % dims.k;
                    for (std::size_t t = dims.p; t < dims.t_len; ++t) {
                        const double za = zd[(t - ka) * dims.k + la];
                        const double zj = zd[(t - kj) * dims.k + lj];
                        gd[(t - ka) * dims.k + la] += ud[a] * zj;
                        gd[(t - kj) * dims.k + lj] += ud[a] * za;
                    }
                }
                tp.accumulate(nz, std::move(gz));
            });
    };

    op.gram = [block, dims, nz](const std::vector<std::size_t>& active) {
        Tensor g({active.size(), active.size()});
        kernels::lagged_gram(block.data(), dims, active, g.mutable_data());
        if (!block.on_tape()) return g;
        return block.tape()->record(std::move(g), {nz},
                                    [nz, block, dims, active](Tape& tp, const Tensor& up) {
                                        Tensor gz = Tensor::zeros(block.shape());
                                        kernels::lagged_gram_backward(block.data(), dims, active,
                                                                      up.data(),
                                                                      gz.mutable_data());
                                        tp.accumulate(nz, std::move(gz));
                                    });
    };

    return op;
}

VarFit fit_rows(const Tensor& z2d, double sigma_z, std::size_t p, double lambda,
                const lars::SolverConfig& cfg, std::string series_id) {
    if (z2d.ndim() != 2) throw DimensionError("fit_rows: latent block must be [T,K]");
    const std::size_t t_len = z2d.dim(0), k = z2d.dim(1);
    if (t_len <= p + 1) throw ArgumentError("fit_rows: need T > p + 1");
    if (!(lambda >= 0.0)) throw ArgumentError("fit_rows: lambda must be >= 0");
    if (!(sigma_z > 1e-12)) {
        throw ArgumentError("fit_rows: constant latent series (sigma_z " +
                            std::to_string(sigma_z) + ")");
    }

    VarFit fit;
    fit.p = p;
    fit.z_norm = scale(z2d, 1.0 / sigma_z);
    lars::DesignOperator design = make_lagged_operator(fit.z_norm, p);

    // The penalty weights the normalized-parameterization coefficients, so
    // selection is invariant to the latent scale; in the solver's raw-target
    // units that means multiplying by sigma_z.
    const double lambda_solver = lambda * sigma_z;

    // target of row j: raw z[t,j] for t in [p,T)
    auto row_target = [&](std::size_t j) {
        std::vector<std::size_t> idx(t_len - p);
        for (std::size_t t = p; t < t_len; ++t) idx[t - p] = t * k + j;
        return gather(z2d, idx);
    };

    fit.rows.resize(k);
    if (z2d.on_tape()) {
        for (std::size_t j = 0; j < k; ++j)
            fit.rows[j] = lars::lasso_path(design, row_target(j), lambda_solver, cfg);
    } else {
        parallel_for(k, [&](std::size_t j) {
            fit.rows[j] = lars::lasso_path(design, row_target(j), lambda_solver, cfg);
        });
    }

    VarCoefficients coeffs;
    coeffs.k = k;
    coeffs.p = p;
    coeffs.sigma_z = sigma_z;
    coeffs.series_id = std::move(series_id);
    coeffs.lags.resize(p);
    for (std::size_t j = 0; j < k; ++j) {
        const auto& row = fit.rows[j];
        for (std::size_t i = 0; i < row.active.size(); ++i) {
            const std::size_t f = row.active[i];
            const std::size_t lag = f / k; // 0-based
            const std::size_t l = f % k;
            // raw-target coefficient -> normalized parameterization
            const double a = row.beta_values.at(i) / sigma_z;
            if (a != 0.0) coeffs.lags[lag].push_back({j, l, a});
        }
    }
    for (auto& lag : coeffs.lags) {
        std::sort(lag.begin(), lag.end(), [](const auto& a, const auto& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
    }
    fit.coeffs = std::move(coeffs);
    return fit;
}

VarCoefficients fit_var(const LatentSeries& z, std::size_t p, double lambda,
                        const lars::SolverConfig& cfg) {
    const std::size_t t_len = z.t_len(), k = z.k();
    Tensor z2d = reshape(z.z.detached(), {t_len, k});
    const double sigma = z.sigma_z > 0.0 ? z.sigma_z : latent_scale(z.z);
    if (!(sigma > 1e-12)) throw ArgumentError("fit_var: constant latent series");
    return fit_rows(z2d, sigma, p, lambda, cfg, z.series_id).coeffs;
}

Tensor forecast(const VarCoefficients& coeffs, std::span<const Tensor> history) {
    if (history.size() != coeffs.p) {
        throw DimensionError("forecast: history length " + std::to_string(history.size()) +
                             " != lag order " + std::to_string(coeffs.p));
    }
    for (const Tensor& f : history) {
        if (f.ndim() != 2 || f.numel() != coeffs.k) {
            throw DimensionError("forecast: frame shape " + f.shape_str() +
                                 " does not match K=" + std::to_string(coeffs.k));
        }
    }
    const std::size_t hp = history[0].dim(0);
    const std::size_t wp = history[0].dim(1);
    std::vector<double> acc(coeffs.k, 0.0);
    for (std::size_t lag = 0; lag < coeffs.p; ++lag) {
        auto zd = history[lag].data();
        for (const auto& e : coeffs.lags[lag])
            acc[e.row] += e.value * (zd[e.col] / coeffs.sigma_z);
    }
    Tensor out({hp, wp});
    auto od = out.mutable_data();
    for (std::size_t j = 0; j < coeffs.k; ++j) od[j] = coeffs.sigma_z * acc[j];
    return out;
}

namespace {

// Forecast of sample t directly from a [T,K] view; avoids building frames.
void forecast_row(const VarCoefficients& coeffs, std::span<const double> z2d, std::size_t k,
                  std::size_t t, std::span<double> out) {
    for (double& v : out) v = 0.0;
    for (std::size_t lag = 0; lag < coeffs.p; ++lag) {
        const double* frame = z2d.data() + (t - lag - 1) * k;
        for (const auto& e : coeffs.lags[lag])
            out[e.row] += e.value * (frame[e.col] / coeffs.sigma_z);
    }
    for (double& v : out) v *= coeffs.sigma_z;
}

} // namespace

double relative_prediction_error(const VarCoefficients& coeffs, const LatentSeries& z,
                                 std::size_t* skipped) {
    const std::size_t t_len = z.t_len(), k = z.k();
    if (k != coeffs.k) throw DimensionError("relative_prediction_error: K mismatch");
    if (t_len <= coeffs.p) throw ArgumentError("relative_prediction_error: need T > p");
    auto zd = z.z.data();
    std::vector<double> pred(k);
    double acc = 0.0;
    std::size_t used = 0, skip = 0;
    for (std::size_t t = coeffs.p; t < t_len; ++t) {
        forecast_row(coeffs, zd, k, t, pred);
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double zt = zd[t * k + j];
            const double d = zt - pred[j];
            num += d * d;
            den += zt * zt;
        }
        if (den == 0.0) {
            ++skip;
            continue;
        }
        acc += num / den;
        ++used;
    }
    if (skipped) *skipped = skip;
    return used ? acc / static_cast<double>(used) : 0.0;
}

double swap_error(const LatentSeries& z_s, const VarCoefficients& coeffs_r) {
    const std::size_t t_len = z_s.t_len(), k = z_s.k();
    if (k != coeffs_r.k) {
        throw DimensionError("swap_error: K mismatch (" + std::to_string(k) + " vs " +
                             std::to_string(coeffs_r.k) + ")");
    }
    if (t_len <= coeffs_r.p) throw ArgumentError("swap_error: need T > p");
    auto zd = z_s.z.data();
    std::vector<double> pred(k);
    double acc = 0.0;
    for (std::size_t t = coeffs_r.p; t < t_len; ++t) {
        forecast_row(coeffs_r, zd, k, t, pred);
        for (std::size_t j = 0; j < k; ++j) {
            const double d = zd[t * k + j] - pred[j];
            acc += d * d;
        }
    }
    return acc / (static_cast<double>(t_len - coeffs_r.p) * static_cast<double>(k));
}

} // namespace sparsedyn::var
