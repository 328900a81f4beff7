#include "sparsedyn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "sparsedyn/error.hpp"
#include "sparsedyn/parallel.hpp"
#include "sparsedyn/rng.hpp"

namespace sparsedyn::synth {

void SynthConfig::validate() const {
    if (h % 8 != 0 || w % 8 != 0) throw ArgumentError("synth: H and W must be divisible by 8");
    if (n_sources == 0 || n_sources > (h / 8) * (w / 8)) {
        throw ArgumentError("synth: n_sources must be in [1, K] with K=(H/8)*(W/8)");
    }
    if (!(density > 0.0 && density <= 1.0)) throw ArgumentError("synth: density must be in (0,1]");
    if (t_len < p_true + 2) throw ArgumentError("synth: t_len too short for the lag order");
    if (n_series == 0) throw ArgumentError("synth: n_series must be positive");
    if (!(background_floor >= 0.05)) {
        throw ArgumentError("synth: background floor must be >= 0.05");
    }
    if (n_coupled > 0) {
        if (n_coupled < 2 || 2 * n_coupled > n_sources) {
            throw ArgumentError("synth: clustered mode needs 2 <= n_coupled <= n_sources/2");
        }
    }
}

double companion_spectral_radius(const std::vector<Tensor>& lag_mats) {
    if (lag_mats.empty()) return 0.0;
    const std::size_t m = lag_mats[0].dim(0);
    const std::size_t p = lag_mats.size();
    // state = (x_t, ..., x_{t-p+1}); apply the companion map and track the
    // norm growth rate
    CounterRng rng(0x9d2c5680);
    std::vector<double> state(m * p);
    for (double& v : state) v = rng.next_uniform(-1.0, 1.0);
    double norm = 0.0;
    for (double v : state) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (double& v : state) v /= norm;

    const int iters = 600, tail = 300;
    double log_acc = 0.0;
    int counted = 0;
    std::vector<double> next(m);
    for (int it = 0; it < iters; ++it) {
        for (std::size_t r = 0; r < m; ++r) {
            double acc = 0.0;
            for (std::size_t lag = 0; lag < p; ++lag) {
                auto ad = lag_mats[lag].data();
                const double* blk = state.data() + lag * m;
                for (std::size_t c = 0; c < m; ++c) acc += ad[r * m + c] * blk[c];
            }
            next[r] = acc;
        }
        for (std::size_t lag = p; lag-- > 1;)
            for (std::size_t i = 0; i < m; ++i) state[lag * m + i] = state[(lag - 1) * m + i];
        for (std::size_t i = 0; i < m; ++i) state[i] = next[i];
        double nn = 0.0;
        for (double v : state) nn += v * v;
        nn = std::sqrt(nn);
        if (nn == 0.0) return 0.0;
        if (it >= iters - tail) {
            log_acc += std::log(nn);
            ++counted;
        }
        for (double& v : state) v /= nn;
    }
    return std::exp(log_acc / counted);
}

std::vector<Tensor> stabilize_coupling(std::vector<Tensor> lag_mats) {
    for (int halvings = 0; halvings <= 100; ++halvings) {
        const double radius = companion_spectral_radius(lag_mats);
        if (radius <= 0.95) return lag_mats;
        for (Tensor& a : lag_mats)
            for (double& v : a.mutable_data()) v *= 0.5;
    }
    throw SolverError("stabilize_coupling: spectral radius did not drop below 0.95 "
                      "after 100 halvings");
}

std::vector<Tensor> make_stable_coupling(std::size_t m, std::size_t p, double density,
                                         std::uint64_t seed, double mag_lo, double mag_hi) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw ArgumentError("make_stable_coupling: density must be in (0,1]");
    }
    CounterRng rng(seed);
    std::vector<Tensor> mats;
    for (std::size_t lag = 0; lag < p; ++lag) {
        Tensor a = Tensor::zeros({m, m});
        auto ad = a.mutable_data();
        for (std::size_t i = 0; i < m * m; ++i) {
            if (rng.next_unit() < density) {
                const double mag = rng.next_uniform(mag_lo, mag_hi);
                ad[i] = rng.next_unit() < 0.5 ? mag : -mag;
            }
        }
        mats.push_back(std::move(a));
    }
    return stabilize_coupling(std::move(mats));
}

std::pair<std::vector<Tensor>, std::vector<Tensor>> make_disjoint_couplings(
    std::size_t m, std::size_t p, double density, std::uint64_t seed, double mag_lo,
    double mag_hi) {
    CounterRng rng(seed);
    std::vector<Tensor> a_f, a_n;
    for (std::size_t lag = 0; lag < p; ++lag) {
        Tensor f = Tensor::zeros({m, m});
        Tensor n = Tensor::zeros({m, m});
        auto fd = f.mutable_data();
        auto nd = n.mutable_data();
        for (std::size_t i = 0; i < m * m; ++i) {
            const double u = rng.next_unit();
            const double mag = rng.next_uniform(mag_lo, mag_hi);
            const double v = rng.next_unit() < 0.5 ? mag : -mag;
            if (u < density)
                fd[i] = v;
            else if (u < 2.0 * density)
                nd[i] = v;
        }
        a_f.push_back(std::move(f));
        a_n.push_back(std::move(n));
    }
    return {stabilize_coupling(std::move(a_f)), stabilize_coupling(std::move(a_n))};
}

Tensor simulate_var_scaled(const std::vector<Tensor>& lag_mats, std::size_t t_len,
                           std::span<const double> innovation_std, std::uint64_t seed,
                           std::size_t burn) {
    if (lag_mats.empty()) throw ArgumentError("simulate_var: empty coupling");
    const std::size_t m = lag_mats[0].dim(0);
    if (innovation_std.size() != m) throw ArgumentError("simulate_var: scale length mismatch");
    const std::size_t p = lag_mats.size();
    CounterRng rng(seed);
    std::vector<std::vector<double>> hist(p, std::vector<double>(m, 0.0));
    Tensor out({t_len, m});
    auto od = out.mutable_data();
    std::vector<double> next(m);
    for (std::size_t t = 0; t < burn + t_len; ++t) {
        for (std::size_t r = 0; r < m; ++r) {
            double acc = 0.0;
            for (std::size_t lag = 0; lag < p; ++lag) {
                auto ad = lag_mats[lag].data();
                for (std::size_t c = 0; c < m; ++c) acc += ad[r * m + c] * hist[lag][c];
            }
            next[r] = acc + innovation_std[r] * rng.next_gauss();
        }
        for (std::size_t lag = p; lag-- > 1;) hist[lag] = hist[lag - 1];
        hist[0] = next;
        if (t >= burn)
            for (std::size_t j = 0; j < m; ++j) od[(t - burn) * m + j] = next[j];
    }
    return out;
}

Tensor simulate_var(const std::vector<Tensor>& lag_mats, std::size_t t_len,
                    double innovation_std, std::uint64_t seed, std::size_t burn) {
    if (lag_mats.empty()) throw ArgumentError("simulate_var: empty coupling");
    std::vector<double> scales(lag_mats[0].dim(0), innovation_std);
    return simulate_var_scaled(lag_mats, t_len, scales, seed, burn);
}

std::vector<Tensor> make_clustered_coupling(std::size_t m, std::size_t p,
                                            const std::vector<std::size_t>& subset,
                                            double weight, double density,
                                            std::uint64_t seed) {
    if (subset.size() < 2) throw ArgumentError("clustered coupling: subset too small");
    for (std::size_t s : subset)
        if (s >= m) throw ArgumentError("clustered coupling: index out of range");
    CounterRng rng(seed);
    std::vector<Tensor> mats;
    for (std::size_t lag = 0; lag < p; ++lag) mats.push_back(Tensor::zeros({m, m}));
    auto a0 = mats[0].mutable_data();
    for (std::size_t i = 0; i < subset.size(); ++i) {
        const std::size_t from = subset[i];
        const std::size_t to = subset[(i + 1) % subset.size()];
        a0[to * m + from] = weight;
    }
    for (std::size_t lag = 0; lag < p; ++lag) {
        auto ad = mats[lag].mutable_data();
        for (std::size_t i : subset)
            for (std::size_t j : subset) {
                if (lag == 0 && ad[i * m + j] != 0.0) continue;
                if (rng.next_unit() < density) {
                    const double mag = rng.next_uniform(0.2, 0.5);
                    ad[i * m + j] = rng.next_unit() < 0.5 ? mag : -mag;
                }
            }
    }
    return stabilize_coupling(std::move(mats));
}

Tensor make_background(const SynthConfig& cfg) {
    CounterRng rng = CounterRng(cfg.fixed_layout ? 7777 : cfg.seed).fork(2);
    Tensor bg = Tensor::full({cfg.h, cfg.w}, cfg.background_floor);
    auto bd = bg.mutable_data();
    // positive wide bumps on top of the floor keep the field >= floor
    const int n_bumps = 6;
    for (int b = 0; b < n_bumps; ++b) {
        const double cy = rng.next_uniform(0.0, double(cfg.h));
        const double cx = rng.next_uniform(0.0, double(cfg.w));
        const double amp = rng.next_uniform(0.1, 0.4);
        const double sig = rng.next_uniform(double(cfg.h) / 6.0, double(cfg.h) / 2.0);
        for (std::size_t y = 0; y < cfg.h; ++y)
            for (std::size_t x = 0; x < cfg.w; ++x) {
                const double dy = double(y) - cy, dx = double(x) - cx;
                bd[y * cfg.w + x] += amp * std::exp(-(dy * dy + dx * dx) / (2 * sig * sig));
            }
    }
    return bg;
}

std::vector<std::pair<double, double>> source_positions(const SynthConfig& cfg) {
    const std::size_t gh = cfg.h / 8, gw = cfg.w / 8;
    const std::size_t k = gh * gw;
    std::vector<std::size_t> cells(k);
    for (std::size_t i = 0; i < k; ++i) cells[i] = i;
    if (!cfg.fixed_layout) {
        CounterRng rng = CounterRng(cfg.seed).fork(1);
        for (std::size_t i = k; i-- > 1;) {
            const std::size_t j = rng.next_below(i + 1);
            std::swap(cells[i], cells[j]);
        }
    }
    std::vector<std::pair<double, double>> pos;
    for (std::size_t m = 0; m < cfg.n_sources; ++m) {
        const std::size_t cy = cells[m] / gw, cx = cells[m] % gw;
        pos.emplace_back(8.0 * double(cy) + 3.5, 8.0 * double(cx) + 3.5);
    }
    return pos;
}

std::pair<std::vector<Tensor>, GroundTruth> generate_condition(
    const SynthConfig& cfg, const std::vector<Tensor>& coupling, std::uint64_t cond_seed) {
    cfg.validate();
    if (coupling.size() != cfg.p_true || coupling[0].dim(0) != cfg.n_sources) {
        throw ArgumentError("generate_condition: coupling does not match config");
    }
    GroundTruth truth;
    truth.positions = source_positions(cfg);
    truth.coupling = coupling;
    truth.blob_sigma = cfg.blob_sigma;

    const Tensor bg = make_background(cfg);
    // blob kernels rendered once
    std::vector<std::vector<double>> blob(cfg.n_sources,
                                          std::vector<double>(cfg.h * cfg.w, 0.0));
    for (std::size_t m = 0; m < cfg.n_sources; ++m) {
        const auto [cy, cx] = truth.positions[m];
        for (std::size_t y = 0; y < cfg.h; ++y)
            for (std::size_t x = 0; x < cfg.w; ++x) {
                const double dy = double(y) - cy, dx = double(x) - cx;
                blob[m][y * cfg.w + x] =
                    std::exp(-(dy * dy + dx * dx) / (2 * cfg.blob_sigma * cfg.blob_sigma));
            }
    }

    // sources untouched by the coupling act as white-amplitude distractors
    std::vector<double> innovation(cfg.n_sources, cfg.innovation_std);
    {
        std::vector<char> coupled(cfg.n_sources, 0);
        for (const Tensor& a : coupling) {
            auto ad = a.data();
            for (std::size_t r = 0; r < cfg.n_sources; ++r)
                for (std::size_t c = 0; c < cfg.n_sources; ++c)
                    if (ad[r * cfg.n_sources + c] != 0.0) coupled[r] = coupled[c] = 1;
        }
        for (std::size_t m = 0; m < cfg.n_sources; ++m)
            if (!coupled[m]) innovation[m] *= cfg.distractor_boost;
    }

    std::vector<Tensor> frames(cfg.n_series);
    truth.amplitudes.resize(cfg.n_series);
    CounterRng root(cond_seed);
    parallel_for(cfg.n_series, [&](std::size_t s) {
        CounterRng series_rng = root.fork(1000 + s);
        Tensor amps = simulate_var_scaled(coupling, cfg.t_len, innovation,
                                          series_rng.fork(0).seed());
        Tensor fr({cfg.t_len, cfg.h, cfg.w});
        auto fd = fr.mutable_data();
        auto bd = bg.data();
        auto ad = amps.data();
        CounterRng noise_rng = series_rng.fork(1);
        for (std::size_t t = 0; t < cfg.t_len; ++t) {
            double* frame = fd.data() + t * cfg.h * cfg.w;
            for (std::size_t i = 0; i < cfg.h * cfg.w; ++i) frame[i] = 0.0;
            for (std::size_t m = 0; m < cfg.n_sources; ++m) {
                const double a = ad[t * cfg.n_sources + m];
                if (a == 0.0) continue;
                const auto& bl = blob[m];
                for (std::size_t i = 0; i < cfg.h * cfg.w; ++i) frame[i] += bl[i] * a;
            }
            for (std::size_t i = 0; i < cfg.h * cfg.w; ++i) {
                frame[i] = bd[i] * (1.0 + frame[i]) + cfg.noise_std * noise_rng.next_gauss();
            }
        }
        frames[s] = std::move(fr);
        truth.amplitudes[s] = std::move(amps);
    });
    return {std::move(frames), std::move(truth)};
}

Dataset generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.cfg = cfg;
    CounterRng root(cfg.seed);
    std::vector<Tensor> af, an;
    if (cfg.n_coupled > 0) {
        // disjoint coupled subsets; a fixed layout interleaves them across
        // the grid so both conditions face the same unmixing geometry on
        // every seed
        std::vector<std::size_t> s_f, s_n;
        if (cfg.fixed_layout) {
            for (std::size_t i = 0; i < cfg.n_coupled; ++i) {
                s_f.push_back(2 * i);
                s_n.push_back(2 * i + 1);
            }
        } else {
            std::vector<std::size_t> order(cfg.n_sources);
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            CounterRng shuf = root.fork(8);
            for (std::size_t i = order.size(); i-- > 1;) {
                const std::size_t j = shuf.next_below(i + 1);
                std::swap(order[i], order[j]);
            }
            s_f.assign(order.begin(),
                       order.begin() + static_cast<std::ptrdiff_t>(cfg.n_coupled));
            s_n.assign(order.begin() + static_cast<std::ptrdiff_t>(cfg.n_coupled),
                       order.begin() + static_cast<std::ptrdiff_t>(2 * cfg.n_coupled));
        }
        const std::uint64_t cseed_f = cfg.fixed_layout ? 61 : root.fork(6).seed();
        const std::uint64_t cseed_n = cfg.fixed_layout ? 62 : root.fork(7).seed();
        af = make_clustered_coupling(cfg.n_sources, cfg.p_true, s_f, cfg.cluster_weight,
                                     cfg.cluster_density, cseed_f);
        an = make_clustered_coupling(cfg.n_sources, cfg.p_true, s_n, cfg.cluster_weight,
                                     cfg.cluster_density, cseed_n);
    } else {
        std::tie(af, an) = make_disjoint_couplings(cfg.n_sources, cfg.p_true, cfg.density,
                                                   root.fork(3).seed(), cfg.coupling_min,
                                                   cfg.coupling_max);
    }
    auto [ff, tf] = generate_condition(cfg, af, root.fork(4).seed());
    auto [fn, tn] = generate_condition(cfg, an, root.fork(5).seed());
    ds.frames_f = std::move(ff);
    ds.frames_n = std::move(fn);
    ds.truth_f = std::move(tf);
    ds.truth_n = std::move(tn);

    // pixels whose coupling differs: half-peak discs of every source whose
    // row or column differs in any lag
    std::vector<char> differs(cfg.n_sources, 0);
    for (std::size_t lag = 0; lag < cfg.p_true; ++lag) {
        auto fd = af[lag].data();
        auto nd = an[lag].data();
        for (std::size_t r = 0; r < cfg.n_sources; ++r)
            for (std::size_t c = 0; c < cfg.n_sources; ++c)
                if (fd[r * cfg.n_sources + c] != nd[r * cfg.n_sources + c]) {
                    differs[r] = 1;
                    differs[c] = 1;
                }
    }
    Tensor mask = Tensor::zeros({cfg.h, cfg.w});
    auto md = mask.mutable_data();
    const auto pos = source_positions(cfg);
    for (std::size_t m = 0; m < cfg.n_sources; ++m) {
        if (!differs[m]) continue;
        const auto [cy, cx] = pos[m];
        for (std::size_t y = 0; y < cfg.h; ++y)
            for (std::size_t x = 0; x < cfg.w; ++x) {
                const double dy = double(y) - cy, dx = double(x) - cx;
                const double v =
                    std::exp(-(dy * dy + dx * dx) / (2 * cfg.blob_sigma * cfg.blob_sigma));
                if (v >= 0.5) md[y * cfg.w + x] = 1.0;
            }
    }
    ds.differing_mask = mask;
    ds.truth_f.differing_mask = mask;
    ds.truth_n.differing_mask = mask;
    return ds;
}

double snr_metrics(const Tensor& latents, const Tensor& amplitudes, bool* degenerate) {
    const std::size_t t_len = latents.dim(0);
    if (amplitudes.dim(0) != t_len) throw ArgumentError("snr_metrics: length mismatch");
    const std::size_t k = latents.numel() / t_len;
    const std::size_t m = amplitudes.numel() / t_len;
    std::vector<double> e(t_len), a(t_len);
    auto zd = latents.data();
    auto ad = amplitudes.data();
    for (std::size_t t = 0; t < t_len; ++t) {
        double ze = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double v = zd[t * k + j];
            ze += v * v;
        }
        e[t] = ze;
        double ae = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double v = ad[t * m + j];
            ae += v * v;
        }
        a[t] = ae;
    }
    double me = 0.0, ma = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
        me += e[t];
        ma += a[t];
    }
    me /= double(t_len);
    ma /= double(t_len);
    double cov = 0.0, ve = 0.0, va = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
        cov += (e[t] - me) * (a[t] - ma);
        ve += (e[t] - me) * (e[t] - me);
        va += (a[t] - ma) * (a[t] - ma);
    }
    if (ve <= 0.0 || va <= 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    if (degenerate) *degenerate = false;
    return cov / std::sqrt(ve * va);
}

} // namespace sparsedyn::synth
