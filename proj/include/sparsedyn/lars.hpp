#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sparsedyn/tensor.hpp"

namespace sparsedyn::lars {

// Implicit linear map for the regression design. apply/apply_transpose must
// be adjoint; column(j) must equal apply(e_j). Callbacks return taped
// tensors whenever their underlying data is taped, which is how gradients
// reach the encoder outputs feeding a lagged design.
struct DesignOperator {
    std::size_t n_samples = 0;
    std::size_t n_features = 0;
    std::function<Tensor(const Tensor& beta)> apply;           // X beta
    std::function<Tensor(const Tensor& r)> apply_transpose;    // X^T r
    std::function<Tensor(std::size_t j)> column;               // X e_j
    // Restricted products over an active subset; these carry the solver's
    // inner loops.
    std::function<Tensor(const std::vector<std::size_t>&, const Tensor& w)> apply_cols;
    std::function<Tensor(const std::vector<std::size_t>&)> gram; // raw X_A^T X_A
    // [<x_a, x_j> for a in active] + <x_j, x_j>; length active.size()+1.
    std::function<Tensor(const std::vector<std::size_t>&, std::size_t j)> gram_row;
};

// Dense-matrix design over a constant X [n,m]. Vector arguments may be
// taped; X itself is treated as data.
DesignOperator make_dense_operator(const Tensor& x);

struct SolverConfig {
    double eps_gamma = 1e-8; // sign-aware stabilizer in step-size denominators
    std::size_t max_steps = 0; // 0 -> 4 * n_features
    double tol = 1e-9;
};

struct LassoKnot {
    enum class Event { Enter, Leave };
    double lambda;
    Event event;
    std::size_t feature;
    std::vector<double> beta; // dense snapshot at the knot
};

struct LassoSolution {
    std::vector<std::size_t> active; // path order
    Tensor beta_values;              // [active.size()], taped when inputs were
    double lambda_target = 0.0;
    bool converged = true;
    std::size_t n_features = 0;
    std::vector<LassoKnot> knots; // lambda strictly decreasing

    std::vector<double> beta_dense() const;
};

// Homotopy in the penalty with the variable-removal modification, run from
// lambda_max down to lambda_target. Objective: (1/2n)||y - X beta||^2 +
// lambda * ||beta||_1. Between knots the coefficients are linear in lambda.
// All arithmetic is recorded on the tape of y / the design's data; the event
// sequence is treated as fixed in backward.
LassoSolution lasso_path(const DesignOperator& design, const Tensor& y, double lambda_target,
                         const SolverConfig& cfg = {});

// Stationarity certificate at (beta, lambda): active coordinates match
// lambda * sign within tol, inactive correlations stay below lambda + tol.
bool kkt_check(const DesignOperator& design, const Tensor& y,
               const std::vector<double>& beta, double lambda, double tol);

// ||X^T y||_inf / n.
double lambda_max(const DesignOperator& design, const Tensor& y);

// Smallest strictly positive stabilized ratio num_i / (den_i +
// eps * sign(den_i)) and its index. found=false signals that the path can
// run straight to its target.
struct GammaStep {
    Tensor gamma; // scalar-shaped [1]
    std::size_t index = 0;
    bool found = false;
};
GammaStep step_size_gamma(const Tensor& num, const Tensor& den, double eps_gamma);

// Cyclic coordinate descent on a materialized design, iterated until the
// largest coefficient change falls below tol. Kept free of any lasso_path
// machinery so the two sides can check each other.
std::vector<double> solve_dense_oracle(const Tensor& x, const Tensor& y, double lambda,
                                       double tol);

inline double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

} // namespace sparsedyn::lars
