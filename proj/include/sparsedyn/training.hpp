#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsedyn/autoencoder.hpp"
#include "sparsedyn/lars.hpp"
#include "sparsedyn/tensor.hpp"
#include "sparsedyn/var.hpp"

namespace sparsedyn::train {

enum class Regime { Sequential, Embedded, EndToEnd };

Regime regime_from_string(const std::string& s);
std::string regime_to_string(Regime r);

struct TrainConfig {
    Regime regime = Regime::EndToEnd;
    double lambda = 0.005;
    std::size_t p = 5;
    std::size_t window = 64;
    double lr = 0.001;
    std::size_t epochs = 2;
    std::uint64_t seed = 1;
    std::size_t channel_width = 32;
    double eps_gamma = 1e-8;
    bool use_skip = true; // programmatic switch, not a config-file key
    std::string data_dir;
    std::string out_dir;

    void validate() const;
    lars::SolverConfig solver() const;
};

struct SeriesData {
    std::string id;
    std::string condition;
    Tensor frames; // [T,H,W]
};

struct EpochMetrics {
    double l_rec = 0.0;
    double r_var = 0.0;
};

struct Checkpoint {
    ae::ModelParams model;
    ae::MeanFrame mean;
    std::vector<var::VarCoefficients> coeffs; // final full-series fits, one per series
    TrainConfig config;
    std::vector<EpochMetrics> history; // one entry per epoch
    std::vector<std::string> series_ids;
    std::vector<std::string> series_conditions;
};

// First/second-moment state for one parameter tensor.
struct AdamState {
    Tensor m, v;
    std::size_t t = 0;
};

// Standard Adam update (beta1 0.9, beta2 0.999, eps 1e-8), in place.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr);

// Start offsets of the floor(T/window) non-overlapping windows; the trailing
// remainder is dropped. Empty (caller warns) when T < window.
std::vector<std::size_t> make_subsequences(std::size_t t_len, std::size_t window);

// Deterministic seeded permutation applied to the epoch's window order.
void shuffle_windows(std::vector<std::pair<std::size_t, std::size_t>>& windows,
                     std::uint64_t seed, std::size_t epoch);

struct EvalResult {
    double l_rec = 0.0;
    double r_var = 0.0;
    std::vector<var::VarCoefficients> coeffs;
    std::vector<Tensor> latents; // per series [T,K]
};

// Full-dataset metrics under the regime's reconstruction semantics, with
// per-series coefficients refit on full-series latents.
EvalResult evaluate(const ae::ModelParams& model, const ae::MeanFrame& mean,
                    const std::vector<SeriesData>& dataset, const TrainConfig& cfg);

// Loss of one training window under the regime, recorded on the given tape.
Tensor window_loss(Tape& tape, const ae::ModelParams& bound, const ae::MeanFrame& mean,
                   const Tensor& frames, std::size_t start, const TrainConfig& cfg);

Checkpoint train(const TrainConfig& cfg, const std::vector<SeriesData>& dataset);

} // namespace sparsedyn::train
