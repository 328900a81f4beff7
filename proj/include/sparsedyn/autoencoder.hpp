#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sparsedyn/ops.hpp"
#include "sparsedyn/tensor.hpp"
#include "sparsedyn/var.hpp"

namespace sparsedyn::ae {

// Dataset mean frame; the multiplicative bypass routes it straight to the
// reconstruction. floor records the minimum background the data generator
// guarantees (0 when unknown).
struct MeanFrame {
    Tensor xbar; // [H,W]
    double floor = 0.0;
};

struct ConvBlock {
    Tensor w;     // [C_out,C_in,3,3]
    Tensor b;     // [C_out]
    Tensor gamma; // [C_out] norm scale
    Tensor beta;  // [C_out] norm shift
};

// Three conv blocks (conv 3x3 -> leaky ReLU -> normalization -> 2x2 pool)
// down to an 8x smaller single-channel latent; the decoder mirrors them with
// unpooling driven by the encoder's pool indices. skip=false removes both the
// mean-centering at the input and the (f_dec + 1) * xbar composition at the
// output, leaving a plain autoencoder for comparisons.
struct ModelParams {
    std::size_t channels = 32;
    bool skip = true;
    double leaky_slope = 0.01;
    std::array<ConvBlock, 3> enc;
    Tensor enc_head_w; // [1,C]
    Tensor enc_head_b; // [1]
    Tensor dec_expand_w; // [C,1]
    Tensor dec_expand_b; // [C]
    std::array<ConvBlock, 3> dec; // last block maps C -> 1

    static ModelParams init(std::size_t channels, bool skip, std::uint64_t seed);

    // Stable iteration order shared by the optimizer and the checkpoint.
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;
};

// Registers every parameter as a leaf on the tape and returns the bound copy.
ModelParams bind_to_tape(const ModelParams& m, Tape& tape);

struct EncodeResult {
    Tensor z; // [H/8, W/8]
    std::array<PoolIndices, 3> indices;
};

// x_bar = (1/N) sum_i (1/T_i) sum_t x_t; every series weighs equally.
MeanFrame compute_mean_frame(std::span<const Tensor> series_frames); // each [T,H,W]

EncodeResult encode(const Tensor& frame, const MeanFrame& mean, const ModelParams& params);

// x_hat = (f_dec(z_hat) + 1) .* x_bar when the skip path is on.
Tensor decode(const Tensor& z_hat, const std::array<PoolIndices, 3>& indices,
              const MeanFrame& mean, const ModelParams& params);

// Evaluation-time reconstruction error per the mean-squared display:
// mean over series of (1/(T H W)) sum_t ||x_t - x_hat_t||^2. When coeffs[i]
// is non-null, frames t >= p are decoded from the VAR forecast and earlier
// frames from their own latents; a null entry decodes every frame directly.
double reconstruction_loss(std::span<const Tensor> series_frames, const ModelParams& model,
                           const MeanFrame& mean,
                           const std::vector<const var::VarCoefficients*>& coeffs,
                           std::size_t p);

// Latent block [T,K] of one series, plain evaluation.
Tensor encode_series(const Tensor& frames, const MeanFrame& mean, const ModelParams& params);

} // namespace sparsedyn::ae
