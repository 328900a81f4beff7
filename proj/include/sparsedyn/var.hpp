#pragma once

#include <span>
#include <string>
#include <vector>

#include "sparsedyn/lars.hpp"
#include "sparsedyn/tensor.hpp"

namespace sparsedyn::var {

// Latent frames of one series plus the scale used for fitting.
struct LatentSeries {
    Tensor z; // [T, H', W']
    std::string series_id;
    double sigma_z = 0.0;

    std::size_t t_len() const { return z.dim(0); }
    std::size_t k() const { return z.dim(1) * z.dim(2); }
};

// Standard deviation over all entries; the fitting scale.
double latent_scale(const Tensor& z);

// Lag matrices in the normalized parameterization of the forecast rule
// z_hat_t = sigma_z * sum_k A_k vec(z_{t-k} / sigma_z). Sparse: only nonzero
// entries are stored.
struct VarCoefficients {
    struct Entry {
        std::size_t row, col;
        double value;
    };
    std::size_t k = 0;
    std::size_t p = 0;
    double sigma_z = 1.0;
    std::string series_id;
    std::vector<std::vector<Entry>> lags; // size p, entries sorted (row, col)

    std::size_t nnz() const;
    Tensor dense() const; // [p,K,K]
    static VarCoefficients from_dense(const Tensor& a, double sigma_z, std::string series_id);
};

// DesignOperator over a [T,K] normalized block: sample t in [p,T), feature
// (k,l) -> zn[t-k,l]. The block is never materialized into an n x pK matrix.
// zn may be taped; gradients reach it through every product.
lars::DesignOperator make_lagged_operator(const Tensor& zn, std::size_t p);

// One row fit per output coordinate, all sharing lambda. rows[j].beta_values
// holds the raw-target coefficients (sigma_z times the normalized ones),
// taped when z2d is taped.
struct VarFit {
    VarCoefficients coeffs;
    std::vector<lars::LassoSolution> rows;
    Tensor z_norm; // [T,K], the block the design is bound to
    std::size_t p = 0;
};

// z2d is the [T,K] latent block. Taped input runs rows sequentially on the
// shared tape; plain input fans the independent rows out across threads.
VarFit fit_rows(const Tensor& z2d, double sigma_z, std::size_t p, double lambda,
                const lars::SolverConfig& cfg, std::string series_id = {});

VarCoefficients fit_var(const LatentSeries& z, std::size_t p, double lambda,
                        const lars::SolverConfig& cfg = {});

// history[0] = z_{t-1}, ..., history[p-1] = z_{t-p}; frames [H',W'].
Tensor forecast(const VarCoefficients& coeffs, std::span<const Tensor> history);

// Mean over t of ||z_t - z_hat_t||^2 / ||z_t||^2. Terms with ||z_t|| = 0 are
// skipped; their count is reported through skipped when given.
double relative_prediction_error(const VarCoefficients& coeffs, const LatentSeries& z,
                                 std::size_t* skipped = nullptr);

// E_sr: per-element squared forecast error of series z_s under coeffs_r.
double swap_error(const LatentSeries& z_s, const VarCoefficients& coeffs_r);

} // namespace sparsedyn::var
