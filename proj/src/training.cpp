#include "sparsedyn/training.hpp"

#include <cmath>
#include <iostream>

#include "sparsedyn/error.hpp"
#include "sparsedyn/ops.hpp"
#include "sparsedyn/parallel.hpp"
#include "sparsedyn/rng.hpp"
#include "sparsedyn/tape.hpp"

namespace sparsedyn::train {

Regime regime_from_string(const std::string& s) {
    if (s == "sequential") return Regime::Sequential;
    if (s == "embedded") return Regime::Embedded;
    if (s == "end_to_end") return Regime::EndToEnd;
    throw ConfigError("unknown regime '" + s + "' (expected sequential|embedded|end_to_end)");
}

std::string regime_to_string(Regime r) {
    switch (r) {
        case Regime::Sequential: return "sequential";
        case Regime::Embedded: return "embedded";
        case Regime::EndToEnd: return "end_to_end";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (window <= p) throw ConfigError("train config: window must exceed the lag order p");
    if (!(lr > 0.0)) throw ConfigError("train config: lr must be positive");
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("train config: lambda must be >= 0");
    if (!(eps_gamma > 0.0)) throw ConfigError("train config: eps_gamma must be > 0");
    if (channel_width == 0) throw ConfigError("train config: channel_width must be >= 1");
}

lars::SolverConfig TrainConfig::solver() const {
    lars::SolverConfig s;
    s.eps_gamma = eps_gamma;
    return s;
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr) {
    if (param.shape() != grad.shape()) throw DimensionError("adam_step: shape mismatch");
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    if (!state.m.defined()) {
        state.m = Tensor::zeros(param.shape());
        state.v = Tensor::zeros(param.shape());
        state.t = 0;
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
    auto pd = param.mutable_data();
    auto gd = grad.data();
    auto md = state.m.mutable_data();
    auto vd = state.v.mutable_data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
        md[i] = kBeta1 * md[i] + (1.0 - kBeta1) * gd[i];
        vd[i] = kBeta2 * vd[i] + (1.0 - kBeta2) * gd[i] * gd[i];
        const double mh = md[i] / c1;
        const double vh = vd[i] / c2;
        pd[i] -= lr * mh / (std::sqrt(vh) + kEps);
    }
}

std::vector<std::size_t> make_subsequences(std::size_t t_len, std::size_t window) {
    if (window < 2) throw ArgumentError("make_subsequences: window must be >= 2");
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + window <= t_len; s += window) starts.push_back(s);
    return starts;
}

void shuffle_windows(std::vector<std::pair<std::size_t, std::size_t>>& windows,
                     std::uint64_t seed, std::size_t epoch) {
    CounterRng rng = CounterRng(seed).fork(0xe70c0000ULL + epoch);
    for (std::size_t i = windows.size(); i-- > 1;) {
        const std::size_t j = rng.next_below(i + 1);
        std::swap(windows[i], windows[j]);
    }
}

namespace {

Tensor frame_at(const Tensor& frames, std::size_t t) {
    const std::size_t h = frames.dim(1), w = frames.dim(2);
    return Tensor({h, w}, std::vector<double>(frames.data().begin() + t * h * w,
                                              frames.data().begin() + (t + 1) * h * w));
}

} // namespace

Tensor window_loss(Tape& tape, const ae::ModelParams& bound, const ae::MeanFrame& mean,
                   const Tensor& frames, std::size_t start, const TrainConfig& cfg) {
    const std::size_t w_len = cfg.window;
    const std::size_t h = frames.dim(1), w = frames.dim(2);
    const std::size_t k = (h / 8) * (w / 8);

    std::vector<ae::EncodeResult> encs(w_len);
    std::vector<Tensor> z_flat(w_len);
    for (std::size_t t = 0; t < w_len; ++t) {
        encs[t] = ae::encode(frame_at(frames, start + t), mean, bound);
        z_flat[t] = reshape(encs[t].z, {k});
    }
    Tensor z2d = stack_rows(z_flat); // [W,K], taped

    // reconstruction targets per regime; frames before the lag horizon are
    // decoded from their own latents
    std::vector<Tensor> z_in(w_len);
    for (std::size_t t = 0; t < w_len; ++t) z_in[t] = encs[t].z;

    if (cfg.regime != Regime::Sequential) {
        const double sigma = var::latent_scale(z2d.detached()); // stop-gradient scale
        if (!(sigma > 1e-12)) throw ArgumentError("window_loss: constant latent series");
        const std::size_t p = cfg.p;
        const std::size_t n = w_len - p;

        std::vector<Tensor> row_betas(k);
        std::vector<std::vector<std::size_t>> row_active(k);
        Tensor zn_taped;
        if (cfg.regime == Regime::EndToEnd) {
            var::VarFit fit = var::fit_rows(z2d, sigma, p, cfg.lambda, cfg.solver());
            for (std::size_t j = 0; j < k; ++j) {
                row_betas[j] = fit.rows[j].beta_values;
                row_active[j] = fit.rows[j].active;
            }
            zn_taped = fit.z_norm;
        } else {
            // coefficients are fit off-tape and enter as constants; gradients
            // still flow through the forecast's latent inputs
            var::VarFit fit = var::fit_rows(z2d.detached(), sigma, p, cfg.lambda, cfg.solver());
            for (std::size_t j = 0; j < k; ++j) {
                row_betas[j] = fit.rows[j].beta_values.detached();
                row_active[j] = fit.rows[j].active;
            }
            zn_taped = scale(z2d, 1.0 / sigma);
        }
        lars::DesignOperator design = var::make_lagged_operator(zn_taped, p);
        std::vector<Tensor> row_preds(k); // each [n]
        for (std::size_t j = 0; j < k; ++j) {
            if (row_active[j].empty()) {
                row_preds[j] = Tensor::zeros({n});
            } else {
                row_preds[j] = design.apply_cols(row_active[j], row_betas[j]);
            }
        }
        Tensor pred_block = stack_rows(row_preds); // [K,n]
        for (std::size_t t = p; t < w_len; ++t) {
            std::vector<std::size_t> idx(k);
            for (std::size_t j = 0; j < k; ++j) idx[j] = j * n + (t - p);
            z_in[t] = reshape(gather(pred_block, idx), {h / 8, w / 8});
        }
    }

    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < w_len; ++t) {
        Tensor xhat = ae::decode(z_in[t], encs[t].indices, mean, bound);
        Tensor diff = sub(xhat, frame_at(frames, start + t));
        acc = add(acc, dot(diff, diff));
    }
    (void)tape;
    return scale(acc, 1.0 / static_cast<double>(w_len * h * w));
}

EvalResult evaluate(const ae::ModelParams& model, const ae::MeanFrame& mean,
                    const std::vector<SeriesData>& dataset, const TrainConfig& cfg) {
    EvalResult out;
    const std::size_t n = dataset.size();
    out.coeffs.resize(n);
    out.latents.resize(n);
    std::vector<double> l_rec(n, 0.0), r_var(n, 0.0);
    parallel_for(n, [&](std::size_t s) {
        const Tensor& frames = dataset[s].frames;
        const std::size_t t_len = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
        const std::size_t k = (h / 8) * (w / 8);

        std::vector<ae::EncodeResult> encs(t_len);
        Tensor z2d({t_len, k});
        auto zd = z2d.mutable_data();
        for (std::size_t t = 0; t < t_len; ++t) {
            encs[t] = ae::encode(frame_at(frames, t), mean, model);
            auto zv = encs[t].z.data();
            for (std::size_t j = 0; j < k; ++j) zd[t * k + j] = zv[j];
        }
        const double sigma = var::latent_scale(z2d);
        var::VarFit fit = var::fit_rows(z2d, sigma, cfg.p, cfg.lambda, cfg.solver(),
                                        dataset[s].id);
        out.coeffs[s] = fit.coeffs;
        out.latents[s] = z2d;

        var::LatentSeries series;
        series.z = reshape(z2d, {t_len, h / 8, w / 8});
        series.series_id = dataset[s].id;
        series.sigma_z = sigma;
        r_var[s] = var::relative_prediction_error(out.coeffs[s], series);

        double acc = 0.0;
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor z_in = encs[t].z;
            if (cfg.regime != Regime::Sequential && t >= cfg.p) {
                std::vector<Tensor> hist;
                for (std::size_t lag = 1; lag <= cfg.p; ++lag) hist.push_back(encs[t - lag].z);
                z_in = var::forecast(out.coeffs[s], hist);
            }
            Tensor xhat = ae::decode(z_in, encs[t].indices, mean, model);
            auto fd = frames.data();
            auto rd = xhat.data();
            for (std::size_t i = 0; i < h * w; ++i) {
                const double d = fd[t * h * w + i] - rd[i];
                acc += d * d;
            }
        }
        l_rec[s] = acc / static_cast<double>(t_len * h * w);
    });
    for (std::size_t s = 0; s < n; ++s) {
        out.l_rec += l_rec[s];
        out.r_var += r_var[s];
    }
    out.l_rec /= static_cast<double>(n);
    out.r_var /= static_cast<double>(n);
    return out;
}

Checkpoint train(const TrainConfig& cfg, const std::vector<SeriesData>& dataset) {
    cfg.validate();
    if (dataset.empty()) throw ArgumentError("train: empty dataset");

    std::vector<Tensor> all_frames;
    for (const auto& s : dataset) all_frames.push_back(s.frames);
    ae::MeanFrame mean = ae::compute_mean_frame(all_frames);
    ae::ModelParams params = ae::ModelParams::init(cfg.channel_width, cfg.use_skip, cfg.seed);

    std::vector<std::pair<std::size_t, std::size_t>> windows;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
        auto starts = make_subsequences(dataset[s].frames.dim(0), cfg.window);
        if (starts.empty()) {
            std::cerr << "warning: series " << dataset[s].id << " shorter than window "
                      << cfg.window << ", excluded from training\n";
        }
        for (std::size_t st : starts) windows.emplace_back(s, st);
    }

    std::vector<AdamState> states(params.named_params().size());
    Checkpoint ckpt;
    ckpt.config = cfg;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = windows;
        shuffle_windows(order, cfg.seed, epoch);
        std::size_t step = 0;
        for (const auto& [s, start] : order) {
            Tape tape;
            ae::ModelParams bound = ae::bind_to_tape(params, tape);
            Tensor loss = window_loss(tape, bound, mean, dataset[s].frames, start, cfg);
            if (!std::isfinite(loss.value())) {
                throw SolverError("train: loss diverged (epoch " + std::to_string(epoch + 1) +
                                  ", step " + std::to_string(step + 1) + ", series " +
                                  dataset[s].id + ")");
            }
            tape.backward(loss);
            auto named_bound = bound.named_params();
            auto named = params.named_params();
            for (std::size_t i = 0; i < named.size(); ++i) {
                Tensor g = tape.grad(*named_bound[i].second);
                adam_step(*named[i].second, g, states[i], cfg.lr);
            }
            ++step;
        }
        EvalResult eval = evaluate(params, mean, dataset, cfg);
        ckpt.history.push_back({eval.l_rec, eval.r_var});
        if (epoch + 1 == cfg.epochs) ckpt.coeffs = std::move(eval.coeffs);
    }
    if (ckpt.coeffs.empty()) {
        EvalResult eval = evaluate(params, mean, dataset, cfg);
        ckpt.coeffs = std::move(eval.coeffs);
    }

    ckpt.model = std::move(params);
    ckpt.mean = std::move(mean);
    for (const auto& s : dataset) {
        ckpt.series_ids.push_back(s.id);
        ckpt.series_conditions.push_back(s.condition);
    }
    return ckpt;
}

} // namespace sparsedyn::train
