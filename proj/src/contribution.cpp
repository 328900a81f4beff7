#include "sparsedyn/contribution.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "sparsedyn/error.hpp"
#include "sparsedyn/io.hpp"

namespace sparsedyn::contrib {

InfluenceVector influence_vector(const var::VarCoefficients& coeffs) {
    InfluenceVector out;
    out.series_id = coeffs.series_id;
    out.c = Tensor::zeros({coeffs.k});
    auto cd = out.c.mutable_data();
    for (const auto& lag : coeffs.lags)
        for (const auto& e : lag)
            if (e.col != e.row) cd[e.row] += std::fabs(e.value); // autocorrelation excluded
    return out;
}

ContributionMap contribution_map(const InfluenceVector& c, double gamma_viz,
                                 const ae::ModelParams& model, const ae::MeanFrame& mean) {
    if (!(gamma_viz > 0.0)) throw ArgumentError("contribution_map: gamma_viz must be > 0");
    const std::size_t h = mean.xbar.dim(0), w = mean.xbar.dim(1);
    const std::size_t hp = h / 8, wp = w / 8;
    if (c.c.numel() != hp * wp) {
        throw DimensionError("contribution_map: influence length " +
                             std::to_string(c.c.numel()) + " != latent grid " +
                             std::to_string(hp * wp));
    }
    // deterministic, input-independent pooling indices
    ae::EncodeResult ref = ae::encode(mean.xbar, mean, model);
    Tensor scaled = scale(reshape(c.c, {hp, wp}), gamma_viz);
    ContributionMap map;
    map.gamma_viz = gamma_viz;
    map.omega = ae::decode(scaled, ref.indices, mean, model);
    return map;
}

void export_map(const ContributionMap& map, const std::string& path) {
    if (!map.omega.all_finite()) throw ArgumentError("export_map: non-finite map");
    const std::size_t h = map.omega.dim(0), w = map.omega.dim(1);
    double lo = map.omega.at(0), hi = map.omega.at(0);
    for (double v : map.omega.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi - lo;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("export_map: cannot open " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    for (double v : map.omega.data()) {
        unsigned char px;
        if (range < 1e-12) {
            px = 128;
        } else {
            px = static_cast<unsigned char>(std::llround((v - lo) / range * 255.0));
        }
        out.put(static_cast<char>(px));
    }
    if (!out) throw FormatError("export_map: write failed for " + path);
    out.close();
    io::write_dtb1(path + ".dtb1", map.omega);
}

double spatial_entropy(const Tensor& map) {
    double total = 0.0;
    for (double v : map.data()) total += std::fabs(v);
    if (total <= 0.0) return 0.0;
    double ent = 0.0;
    for (double v : map.data()) {
        const double p = std::fabs(v) / total;
        if (p > 0.0) ent -= p * std::log(p);
    }
    return ent;
}

} // namespace sparsedyn::contrib
