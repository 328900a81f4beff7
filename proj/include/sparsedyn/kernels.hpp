#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sparsedyn::kernels {

// Flop-heavy inner loops shared by the tensor ops and the lagged-design
// solver path. Each parallel kernel distributes an outer loop over
// independent output elements; the per-element arithmetic order matches the
// serial reference exactly, so parallel and reference results are
// bit-identical for any thread count.

// -- 3x3 convolution, zero padding 1, stride 1 --------------------------
// in [C_in,H,W], w [C_out,C_in,3,3], b [C_out], out [C_out,H,W]

void conv3x3_forward(std::span<const double> in, std::span<const double> w,
                     std::span<const double> b, std::span<double> out,
                     std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t wd);

// g [C_out,H,W] -> gin [C_in,H,W]
void conv3x3_backward_input(std::span<const double> g, std::span<const double> w,
                            std::span<double> gin, std::size_t c_in, std::size_t c_out,
                            std::size_t h, std::size_t wd);

// g, in -> gw [C_out,C_in,3,3]
void conv3x3_backward_weight(std::span<const double> g, std::span<const double> in,
                             std::span<double> gw, std::size_t c_in, std::size_t c_out,
                             std::size_t h, std::size_t wd);

// g -> gb [C_out]
void conv3x3_backward_bias(std::span<const double> g, std::span<double> gb,
                           std::size_t c_out, std::size_t h, std::size_t wd);

// -- 1x1 convolution ------------------------------------------------------
// in [C_in,H,W], w [C_out,C_in], b [C_out], out [C_out,H,W]

void conv1x1_forward(std::span<const double> in, std::span<const double> w,
                     std::span<const double> b, std::span<double> out,
                     std::size_t c_in, std::size_t c_out, std::size_t hw);

void conv1x1_backward_input(std::span<const double> g, std::span<const double> w,
                            std::span<double> gin, std::size_t c_in, std::size_t c_out,
                            std::size_t hw);

void conv1x1_backward_weight(std::span<const double> g, std::span<const double> in,
                             std::span<double> gw, std::size_t c_in, std::size_t c_out,
                             std::size_t hw);

// -- Lagged autoregressive design ----------------------------------------
// zn is a [T,K] block; regression samples are t in [p,T), n = T-p of them.
// Feature (k,l), k in 1..p, l in 0..K-1, has linear index (k-1)*K + l and
// sample value zn[t-k,l]. Products never materialize the n x pK matrix.

struct LaggedDims {
    std::size_t t_len; // T
    std::size_t k;     // latent dimension K
    std::size_t p;     // lag order
    std::size_t n() const { return t_len - p; }
    std::size_t features() const { return p * k; }
};

// c[f] = sum_t zn[t-k_f, l_f] * v[t-p]   (raw X^T v, all pK features)
void lagged_corr(std::span<const double> zn, LaggedDims d, std::span<const double> v,
                 std::span<double> c);

// u[t-p] = sum_m w[m] * zn[t-k_m, l_m] over active features
void lagged_apply_cols(std::span<const double> zn, LaggedDims d,
                       std::span<const std::size_t> active, std::span<const double> w,
                       std::span<double> u);

// G[a,b] = sum_t zn[t-k_a,l_a] * zn[t-k_b,l_b]  (raw, |A| x |A|)
void lagged_gram(std::span<const double> zn, LaggedDims d,
                 std::span<const std::size_t> active, std::span<double> g);

// Gradient gathers for the three products above. Each accumulates into gzn
// ([T,K]) or the dual argument; gathers are per-output-element, so they
// parallelize without atomics.

void lagged_corr_backward(std::span<const double> zn, LaggedDims d,
                          std::span<const double> v, std::span<const double> gc,
                          std::span<double> gzn, std::span<double> gv);

void lagged_apply_cols_backward(std::span<const double> zn, LaggedDims d,
                                std::span<const std::size_t> active,
                                std::span<const double> w, std::span<const double> gu,
                                std::span<double> gzn, std::span<double> gw);

void lagged_gram_backward(std::span<const double> zn, LaggedDims d,
                          std::span<const std::size_t> active, std::span<const double> gg,
                          std::span<double> gzn);

// Serial reference implementations, kept for equivalence tests and the
// benchmark baseline.
namespace reference {

void conv3x3_forward(std::span<const double> in, std::span<const double> w,
                     std::span<const double> b, std::span<double> out,
                     std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t wd);

void conv3x3_backward_input(std::span<const double> g, std::span<const double> w,
                            std::span<double> gin, std::size_t c_in, std::size_t c_out,
                            std::size_t h, std::size_t wd);

void conv3x3_backward_weight(std::span<const double> g, std::span<const double> in,
                             std::span<double> gw, std::size_t c_in, std::size_t c_out,
                             std::size_t h, std::size_t wd);

void lagged_corr(std::span<const double> zn, LaggedDims d, std::span<const double> v,
                 std::span<double> c);

void lagged_apply_cols(std::span<const double> zn, LaggedDims d,
                       std::span<const std::size_t> active, std::span<const double> w,
                       std::span<double> u);

void lagged_gram(std::span<const double> zn, LaggedDims d,
                 std::span<const std::size_t> active, std::span<double> g);

} // namespace reference

} // namespace sparsedyn::kernels
