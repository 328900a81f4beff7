#pragma once

#include <string>

#include "sparsedyn/autoencoder.hpp"
#include "sparsedyn/tensor.hpp"
#include "sparsedyn/var.hpp"

namespace sparsedyn::contrib {

// Per-latent sums of absolute off-diagonal coefficients across lags.
struct InfluenceVector {
    Tensor c; // [K], entries >= 0
    std::string series_id;
};

InfluenceVector influence_vector(const var::VarCoefficients& coeffs);

struct ContributionMap {
    Tensor omega; // [H,W]
    double gamma_viz = 1.0;
    std::string condition_label;
};

// Decoder projection of the scaled influence vector, modulated by the mean
// frame. Pool indices come from encoding the mean frame itself (a zero input
// to the network when the skip path is on).
ContributionMap contribution_map(const InfluenceVector& c, double gamma_viz,
                                 const ae::ModelParams& model, const ae::MeanFrame& mean);

// 8-bit binary PGM (P5), min-max normalized to 0..255; a value range below
// 1e-12 renders mid-gray. The raw map is written losslessly next to it as
// <path>.dtb1.
void export_map(const ContributionMap& map, const std::string& path);

// Shannon entropy of the |values| distribution; lower means more localized.
double spatial_entropy(const Tensor& map);

} // namespace sparsedyn::contrib
