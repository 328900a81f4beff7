#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sparsedyn/tensor.hpp"

namespace sparsedyn::synth {

// Calcium-imaging-like videos: a positive static background modulated by
// blob sources whose amplitudes follow a known sparse stable VAR process,
// plus pixelwise observation noise. Two conditions share background and
// source positions and differ only in the coupling.
struct SynthConfig {
    std::size_t h = 48, w = 32; // divisible by 8
    std::size_t n_sources = 24; // M, at most (h/8)*(w/8)
    std::size_t t_len = 192;    // frames per series
    std::size_t n_series = 4;   // series per condition
    std::size_t p_true = 2;
    double density = 0.05;          // fraction of nonzero coupling entries
    double coupling_min = 0.4;      // magnitude range before stabilization
    double coupling_max = 0.9;
    double innovation_std = 0.5;
    double noise_std = 0.02;
    double background_floor = 0.05; // keeps the multiplicative skip exact
    double blob_sigma = 2.0;
    std::uint64_t seed = 1;

    // Clustered mode (n_coupled > 0): each condition couples its own
    // disjoint source subset in a ring of weight cluster_weight plus random
    // in-cluster entries at cluster_density; sources outside any coupling
    // act as white-amplitude distractors with innovation_std scaled by
    // distractor_boost.
    std::size_t n_coupled = 0;
    double cluster_weight = 0.85;
    double cluster_density = 0.1;
    double distractor_boost = 1.0;

    // Deterministic geometry: sources fill the latent grid in row-major
    // order and the clustered subsets are the leading blocks, independent of
    // the seed. Seeds then control only amplitudes and noise.
    bool fixed_layout = false;

    void validate() const;
};

struct GroundTruth {
    std::vector<std::pair<double, double>> positions; // source centers (y,x)
    std::vector<Tensor> coupling;                     // p_true matrices [M,M]
    std::vector<Tensor> amplitudes;                   // per series [T,M]
    Tensor differing_mask;                            // [H,W], filled at dataset level
    double blob_sigma = 0.0;
};

// Estimated spectral radius of the VAR companion matrix (power iteration on
// the norm growth; deterministic).
double companion_spectral_radius(const std::vector<Tensor>& lag_mats);

// Halves all matrices until the companion radius is <= 0.95; throws after
// 100 halvings.
std::vector<Tensor> stabilize_coupling(std::vector<Tensor> lag_mats);

// Random sparse coupling at the given density, stabilized.
std::vector<Tensor> make_stable_coupling(std::size_t m, std::size_t p, double density,
                                         std::uint64_t seed, double mag_lo = 0.4,
                                         double mag_hi = 0.9);

// Two couplings with disjoint supports, both stabilized.
std::pair<std::vector<Tensor>, std::vector<Tensor>> make_disjoint_couplings(
    std::size_t m, std::size_t p, double density, std::uint64_t seed, double mag_lo = 0.4,
    double mag_hi = 0.9);

// Ring coupling of the given weight over subset, plus random in-cluster
// entries at density; everything outside subset x subset stays zero.
std::vector<Tensor> make_clustered_coupling(std::size_t m, std::size_t p,
                                            const std::vector<std::size_t>& subset,
                                            double weight, double density,
                                            std::uint64_t seed);

// Amplitude series [T,M] driven by the coupling with centered innovations.
Tensor simulate_var(const std::vector<Tensor>& lag_mats, std::size_t t_len,
                    double innovation_std, std::uint64_t seed, std::size_t burn = 100);

// Per-source innovation scales.
Tensor simulate_var_scaled(const std::vector<Tensor>& lag_mats, std::size_t t_len,
                           std::span<const double> innovation_std, std::uint64_t seed,
                           std::size_t burn = 100);

// Static background and source positions depend only on cfg.seed, so both
// conditions share them by construction.
Tensor make_background(const SynthConfig& cfg);
std::vector<std::pair<double, double>> source_positions(const SynthConfig& cfg);

// Frames of one condition: background * (1 + sum_m blob_m * s_tm) + noise.
std::pair<std::vector<Tensor>, GroundTruth> generate_condition(
    const SynthConfig& cfg, const std::vector<Tensor>& coupling, std::uint64_t cond_seed);

struct Dataset {
    SynthConfig cfg;
    std::vector<Tensor> frames_f, frames_n; // [T,H,W] per series
    GroundTruth truth_f, truth_n;
    Tensor differing_mask; // [H,W]
};

// Two conditions with disjoint-support couplings and the ground-truth mask
// of pixels whose coupling differs.
Dataset generate_dataset(const SynthConfig& cfg);

// Pearson correlation between per-frame ||z_t||^2 and the total transient
// energy sum_m s_tm^2. Returns 0 and sets degenerate when either side has
// zero variance.
double snr_metrics(const Tensor& latents, const Tensor& amplitudes, bool* degenerate = nullptr);

} // namespace sparsedyn::synth
