#include "sparsedyn/autoencoder.hpp"

#include <cmath>

#include "sparsedyn/error.hpp"
#include "sparsedyn/rng.hpp"
#include "sparsedyn/tape.hpp"

namespace sparsedyn::ae {

namespace {

Tensor uniform_fan_in(CounterRng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.next_uniform(-bound, bound);
    return t;
}

void check_frame(const Tensor& frame) {
    if (frame.ndim() != 2 || frame.dim(0) % 8 != 0 || frame.dim(1) % 8 != 0) {
        throw DimensionError("encode: frame must be [H,W] with H, W divisible by 8, got " +
                             frame.shape_str());
    }
}

} // namespace

ModelParams ModelParams::init(std::size_t channels, bool skip, std::uint64_t seed) {
    CounterRng root(seed);
    ModelParams m;
    m.channels = channels;
    m.skip = skip;
    const std::size_t c = channels;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t c_in = i == 0 ? 1 : c;
        CounterRng rng = root.fork(10 + i);
        m.enc[i].w = uniform_fan_in(rng, {c, c_in, 3, 3}, c_in * 9);
        m.enc[i].b = Tensor::zeros({c});
        m.enc[i].gamma = Tensor::full({c}, 1.0);
        m.enc[i].beta = Tensor::zeros({c});
    }
    {
        CounterRng rng = root.fork(20);
        m.enc_head_w = uniform_fan_in(rng, {1, c}, c);
        m.enc_head_b = Tensor::zeros({1});
    }
    {
        CounterRng rng = root.fork(21);
        m.dec_expand_w = uniform_fan_in(rng, {c, 1}, 1);
        m.dec_expand_b = Tensor::zeros({c});
    }
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t c_out = i == 2 ? 1 : c;
        CounterRng rng = root.fork(30 + i);
        m.dec[i].w = uniform_fan_in(rng, {c_out, c, 3, 3}, c * 9);
        m.dec[i].b = Tensor::zeros({c_out});
        m.dec[i].gamma = Tensor::full({c_out}, 1.0);
        m.dec[i].beta = Tensor::zeros({c_out});
    }
    return m;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string base = "enc" + std::to_string(i);
        out.emplace_back(base + ".w", &enc[i].w);
        out.emplace_back(base + ".b", &enc[i].b);
        out.emplace_back(base + ".gamma", &enc[i].gamma);
        out.emplace_back(base + ".beta", &enc[i].beta);
    }
    out.emplace_back("enc_head.w", &enc_head_w);
    out.emplace_back("enc_head.b", &enc_head_b);
    out.emplace_back("dec_expand.w", &dec_expand_w);
    out.emplace_back("dec_expand.b", &dec_expand_b);
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string base = "dec" + std::to_string(i);
        out.emplace_back(base + ".w", &dec[i].w);
        out.emplace_back(base + ".b", &dec[i].b);
        out.emplace_back(base + ".gamma", &dec[i].gamma);
        out.emplace_back(base + ".beta", &dec[i].beta);
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<ModelParams*>(this)->named_params())
        out.emplace_back(name, t);
    return out;
}

ModelParams bind_to_tape(const ModelParams& m, Tape& tape) {
    ModelParams bound = m;
    for (auto& [name, t] : bound.named_params()) {
        (void)name;
        *t = tape.leaf(*t);
    }
    return bound;
}

MeanFrame compute_mean_frame(std::span<const Tensor> series_frames) {
    if (series_frames.empty()) throw ArgumentError("compute_mean_frame: empty dataset");
    const std::size_t h = series_frames[0].dim(1), w = series_frames[0].dim(2);
    MeanFrame mean;
    mean.xbar = Tensor::zeros({h, w});
    auto acc = mean.xbar.mutable_data();
    for (const Tensor& frames : series_frames) {
        if (frames.ndim() != 3 || frames.dim(1) != h || frames.dim(2) != w) {
            throw DimensionError("compute_mean_frame: inconsistent frame shape " +
                                 frames.shape_str());
        }
        const std::size_t t_len = frames.dim(0);
        if (t_len == 0) throw ArgumentError("compute_mean_frame: empty series");
        const double inv_t = 1.0 / static_cast<double>(t_len);
        auto fd = frames.data();
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t i = 0; i < h * w; ++i) acc[i] += fd[t * h * w + i] * inv_t;
    }
    const double inv_n = 1.0 / static_cast<double>(series_frames.size());
    for (double& v : acc) v *= inv_n;
    return mean;
}

EncodeResult encode(const Tensor& frame, const MeanFrame& mean, const ModelParams& params) {
    check_frame(frame);
    const std::size_t h = frame.dim(0), w = frame.dim(1);
    Tensor x = params.skip ? sub(frame, mean.xbar) : frame;
    x = reshape(x, {1, h, w});
    EncodeResult res;
    for (std::size_t i = 0; i < 3; ++i) {
        x = conv2d(x, params.enc[i].w, params.enc[i].b);
        x = leaky_relu(x, params.leaky_slope);
        x = frozen_stats_norm(x, params.enc[i].gamma, params.enc[i].beta);
        PoolResult pooled = maxpool2x2(x);
        x = pooled.values;
        res.indices[i] = std::move(pooled.indices);
    }
    x = conv1x1(x, params.enc_head_w, params.enc_head_b);
    res.z = reshape(x, {h / 8, w / 8});
    return res;
}

Tensor decode(const Tensor& z_hat, const std::array<PoolIndices, 3>& indices,
              const MeanFrame& mean, const ModelParams& params) {
    if (z_hat.ndim() != 2) throw DimensionError("decode: latent must be [H',W']");
    const std::size_t hp = z_hat.dim(0), wp = z_hat.dim(1);
    Tensor x = reshape(z_hat, {1, hp, wp});
    x = conv1x1(x, params.dec_expand_w, params.dec_expand_b);
    std::size_t h = hp, w = wp;
    for (std::size_t i = 0; i < 3; ++i) {
        // mirror order: the deepest encoder indices drive the first unpool
        x = max_unpool2x2(x, indices[2 - i], 2 * h, 2 * w);
        h *= 2;
        w *= 2;
        x = conv2d(x, params.dec[i].w, params.dec[i].b);
        x = frozen_stats_norm(x, params.dec[i].gamma, params.dec[i].beta);
        x = leaky_relu(x, params.leaky_slope);
    }
    Tensor out = reshape(x, {h, w});
    if (!params.skip) return out;
    if (mean.xbar.shape() != out.shape()) {
        throw DimensionError("decode: mean frame " + mean.xbar.shape_str() +
                             " does not match output " + out.shape_str());
    }
    return mul(add_scalar(out, 1.0), mean.xbar);
}

Tensor encode_series(const Tensor& frames, const MeanFrame& mean, const ModelParams& params) {
    const std::size_t t_len = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
    Tensor block({t_len, (h / 8) * (w / 8)});
    auto bd = block.mutable_data();
    for (std::size_t t = 0; t < t_len; ++t) {
        Tensor frame({h, w},
                     std::vector<double>(frames.data().begin() + t * h * w,
                                         frames.data().begin() + (t + 1) * h * w));
        EncodeResult enc = encode(frame, mean, params);
        auto zd = enc.z.data();
        for (std::size_t j = 0; j < zd.size(); ++j) bd[t * zd.size() + j] = zd[j];
    }
    return block;
}

double reconstruction_loss(std::span<const Tensor> series_frames, const ModelParams& model,
                           const MeanFrame& mean,
                           const std::vector<const var::VarCoefficients*>& coeffs,
                           std::size_t p) {
    if (series_frames.empty()) throw ArgumentError("reconstruction_loss: empty dataset");
    if (!coeffs.empty() && coeffs.size() != series_frames.size()) {
        throw DimensionError("reconstruction_loss: coefficient list does not match dataset");
    }
    double total = 0.0;
    for (std::size_t s = 0; s < series_frames.size(); ++s) {
        const Tensor& frames = series_frames[s];
        const std::size_t t_len = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
        const var::VarCoefficients* c = coeffs.empty() ? nullptr : coeffs[s];
        std::vector<EncodeResult> encs(t_len);
        std::vector<Tensor> zs(t_len);
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor frame({h, w},
                         std::vector<double>(frames.data().begin() + t * h * w,
                                             frames.data().begin() + (t + 1) * h * w));
            encs[t] = encode(frame, mean, model);
            zs[t] = encs[t].z;
        }
        double acc = 0.0;
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor z_in = zs[t];
            if (c && t >= p) {
                std::vector<Tensor> hist;
                for (std::size_t lag = 1; lag <= p; ++lag) hist.push_back(zs[t - lag]);
                z_in = var::forecast(*c, hist);
            }
            Tensor xhat = decode(z_in, encs[t].indices, mean, model);
            auto xd = frames.data();
            auto rd = xhat.data();
            for (std::size_t i = 0; i < h * w; ++i) {
                const double d = xd[t * h * w + i] - rd[i];
                acc += d * d;
            }
        }
        total += acc / static_cast<double>(t_len * h * w);
    }
    return total / static_cast<double>(series_frames.size());
}

} // namespace sparsedyn::ae
