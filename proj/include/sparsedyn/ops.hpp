#pragma once

#include <cstddef>
#include <vector>

#include "sparsedyn/tape.hpp"
#include "sparsedyn/tensor.hpp"

namespace sparsedyn {

// Differentiable tensor ops. Every op computes its value eagerly; when any
// operand carries a tape node the result is recorded so backward() reaches
// it. Mixing tensors from different tapes throws.

// -- elementwise / reductions ----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// |a| with the sign taken at forward time.
Tensor abs_frozen(const Tensor& a);

Tensor sum(const Tensor& a);            // -> scalar
Tensor dot(const Tensor& a, const Tensor& b); // -> scalar

// a + gamma * w, gamma a scalar tensor.
Tensor add_scaled(const Tensor& a, const Tensor& w, const Tensor& gamma);

// out_i = s - v_i and out_i = s + v_i, s a scalar tensor.
Tensor scalar_minus_vec(const Tensor& s, const Tensor& v);
Tensor scalar_plus_vec(const Tensor& s, const Tensor& v);

// out_i = num_i / (den_i + eps * sign(den_i)); sign frozen at forward time.
Tensor div_stab(const Tensor& num, const Tensor& den, double eps);

// -- shape ------------------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
Tensor gather(const Tensor& a, std::vector<std::size_t> flat_indices);
Tensor concat1d(const std::vector<Tensor>& parts);
// rows[i] must be 1-d of equal length; result is [rows, len].
Tensor stack_rows(const std::vector<Tensor>& rows);

// -- network ops --------------------------------------------------------------

// 3x3 convolution, zero padding 1, stride 1.
// input [C_in,H,W], kernel [C_out,C_in,3,3], bias [C_out] -> [C_out,H,W]
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// input [C_in,H,W], kernel [C_out,C_in], bias [C_out] -> [C_out,H,W]
Tensor conv1x1(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// Winner positions of a 2x2 max pool, as flat indices into the [C,H,W] input.
struct PoolIndices {
    std::vector<std::size_t> winner;
    std::size_t channels = 0, out_h = 0, out_w = 0;
    std::size_t in_numel = 0;
};

struct PoolResult {
    Tensor values; // [C,H/2,W/2]
    PoolIndices indices;
};

// Ties go to the lowest flat index, so pool/unpool round-trips are exact.
PoolResult maxpool2x2(const Tensor& input);

// Scatters pooled values to their winner positions; all other cells are 0.
Tensor max_unpool2x2(const Tensor& pooled, const PoolIndices& indices,
                     std::size_t out_h, std::size_t out_w);

// slope in (0,1); derivative at 0 is 1.
Tensor leaky_relu(const Tensor& x, double slope);

// Per-channel standardization by the input's own plane statistics with a
// stop-gradient on mean/variance, then learned affine gamma/beta [C].
Tensor frozen_stats_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// -- linear algebra -----------------------------------------------------------

// Prefactored SPD solve: w = G^-1 rhs. chol is the lower Cholesky factor of
// G's values (row-major m x m). rhs receives no gradient (used for frozen
// sign vectors); G does.
Tensor solve_spd_prefactored(const Tensor& g, const std::vector<double>& chol,
                             const std::vector<double>& rhs);

// In-place dense Cholesky; returns false if a pivot falls below min_pivot.
bool cholesky_factor(std::vector<double>& a, std::size_t m, double min_pivot);
// Solves L L^T x = b given the factor from cholesky_factor.
void cholesky_solve(const std::vector<double>& chol, std::size_t m,
                    std::span<const double> b, std::span<double> x);

} // namespace sparsedyn
