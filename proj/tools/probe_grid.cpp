// scratch driver used while calibrating the acceptance benchmark; not built
// by CMake
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "sparsedyn/synth.hpp"
#include "sparsedyn/training.hpp"

using namespace sparsedyn;

int main(int argc, char** argv) {
    // args: seed lambda epochs [regime 0/1/2]
    std::uint64_t seed = std::atoll(argv[1]);
    double lambda = std::atof(argv[2]);
    std::size_t epochs = std::atoll(argv[3]);
    int which = argc > 4 ? std::atoi(argv[4]) : -1;
    synth::SynthConfig scfg;
    scfg.h = 48;
    scfg.w = 32;
    scfg.n_sources = 24;
    scfg.t_len = 192;
    scfg.n_series = 4;
    scfg.p_true = 2;
    scfg.noise_std = 0.05;
    scfg.seed = seed;
    scfg.n_coupled = 7;
    scfg.cluster_weight = 0.85;
    scfg.cluster_density = 0.1;
    scfg.distractor_boost = 3.5;
    scfg.blob_sigma = 4.0; scfg.fixed_layout = true;
    synth::Dataset ds = synth::generate_dataset(scfg);
    std::vector<train::SeriesData> dataset;
    for (std::size_t i = 0; i < ds.frames_f.size(); ++i)
        dataset.push_back({"f" + std::to_string(i), "f", ds.frames_f[i]});
    for (std::size_t i = 0; i < ds.frames_n.size(); ++i)
        dataset.push_back({"n" + std::to_string(i), "n", ds.frames_n[i]});

    const train::Regime regimes[3] = {train::Regime::Sequential, train::Regime::Embedded,
                                      train::Regime::EndToEnd};
    for (int ri = 0; ri < 3; ++ri) {
        if (which >= 0 && ri != which) continue;
        train::TrainConfig cfg;
        cfg.regime = regimes[ri];
        cfg.lambda = lambda;
        cfg.p = 2;
        cfg.window = 64;
        cfg.lr = 0.001;
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.channel_width = 8;
        train::Checkpoint ckpt = train::train(cfg, dataset);
        std::printf("seed=%llu lam=%g %-11s l_rec=%.4f r_var=%.4f\n",
                    (unsigned long long)seed, lambda,
                    train::regime_to_string(regimes[ri]).c_str(), ckpt.history.back().l_rec,
                    ckpt.history.back().r_var);
        std::fflush(stdout);
    }
    return 0;
}
