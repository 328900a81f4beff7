#include "sparsedyn/kernels.hpp"

#include "sparsedyn/parallel.hpp"

namespace sparsedyn::kernels {

namespace {

// One output pixel of the 3x3 convolution.
inline double conv3x3_cell(std::span<const double> in, std::span<const double> w,
                           std::size_t c_in, std::size_t h, std::size_t wd,
                           std::size_t co, std::size_t y, std::size_t x) {
    double acc = 0.0;
    for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* plane = in.data() + ci * h * wd;
        const double* ker = w.data() + (co * c_in + ci) * 9;
        for (int dy = -1; dy <= 1; ++dy) {
            const int yy = static_cast<int>(y) + dy;
            if (yy < 0 || yy >= static_cast<int>(h)) continue;
            for (int dx = -1; dx <= 1; ++dx) {
                const int xx = static_cast<int>(x) + dx;
                if (xx < 0 || xx >= static_cast<int>(wd)) continue;
                acc += plane[static_cast<std::size_t>(yy) * wd + static_cast<std::size_t>(xx)] *
                       ker[static_cast<std::size_t>(dy + 1) * 3 + static_cast<std::size_t>(dx + 1)];
            }
        }
    }
    return acc;
}

inline double conv3x3_grad_in_cell(std::span<const double> g, std::span<const double> w,
                                   std::size_t c_in, std::size_t c_out, std::size_t h,
                                   std::size_t wd, std::size_t ci, std::size_t y,
                                   std::size_t x) {
    double acc = 0.0;
    for (std::size_t co = 0; co < c_out; ++co) {
        const double* gplane = g.data() + co * h * wd;
        const double* ker = w.data() + (co * c_in + ci) * 9;
        for (int dy = 0; dy < 3; ++dy) {
            const int oy = static_cast<int>(y) - dy + 1;
            if (oy < 0 || oy >= static_cast<int>(h)) continue;
            for (int dx = 0; dx < 3; ++dx) {
                const int ox = static_cast<int>(x) - dx + 1;
                if (ox < 0 || ox >= static_cast<int>(wd)) continue;
                acc += gplane[static_cast<std::size_t>(oy) * wd + static_cast<std::size_t>(ox)] *
                       ker[static_cast<std::size_t>(dy) * 3 + static_cast<std::size_t>(dx)];
            }
        }
    }
    return acc;
}

inline double conv3x3_grad_w_cell(std::span<const double> g, std::span<const double> in,
                                  std::size_t h, std::size_t wd, std::size_t co,
                                  std::size_t ci, std::size_t dy, std::size_t dx) {
    const double* gplane = g.data() + co * h * wd;
    const double* plane = in.data() + ci * h * wd;
    double acc = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
        const int yy = static_cast<int>(y + dy) - 1;
        if (yy < 0 || yy >= static_cast<int>(h)) continue;
        for (std::size_t x = 0; x < wd; ++x) {
            const int xx = static_cast<int>(x + dx) - 1;
            if (xx < 0 || xx >= static_cast<int>(wd)) continue;
            acc += gplane[y * wd + x] *
                   plane[static_cast<std::size_t>(yy) * wd + static_cast<std::size_t>(xx)];
        }
    }
    return acc;
}

} // namespace

void conv3x3_forward(std::span<const double> in, std::span<const double> w,
                     std::span<const double> b, std::span<double> out,
                     std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t wd) {
    parallel_for(c_out * h, [&](std::size_t i) {
        const std::size_t co = i / h;
        const std::size_t y = i % h;
        double* row = out.data() + (co * h + y) * wd;
        for (std::size_t x = 0; x < wd; ++x)
            row[x] = b[co] + conv3x3_cell(in, w, c_in, h, wd, co, y, x);
    });
}

void conv3x3_backward_input(std::span<const double> g, std::span<const double> w,
                            std::span<double> gin, std::size_t c_in, std::size_t c_out,
                            std::size_t h, std::size_t wd) {
    parallel_for(c_in * h, [&](std::size_t i) {
        const std::size_t ci = i / h;
        const std::size_t y = i % h;
        double* row = gin.data() + (ci * h + y) * wd;
        for (std::size_t x = 0; x < wd; ++x)
            row[x] += conv3x3_grad_in_cell(g, w, c_in, c_out, h, wd, ci, y, x);
    });
}

void conv3x3_backward_weight(std::span<const double> g, std::span<const double> in,
                             std::span<double> gw, std::size_t c_in, std::size_t c_out,
                             std::size_t h, std::size_t wd) {
    parallel_for(c_out * c_in, [&](std::size_t i) {
        const std::size_t co = i / c_in;
        const std::size_t ci = i % c_in;
        double* cell = gw.data() + (co * c_in + ci) * 9;
        for (std::size_t dy = 0; dy < 3; ++dy)
            for (std::size_t dx = 0; dx < 3; ++dx)
                cell[dy * 3 + dx] += conv3x3_grad_w_cell(g, in, h, wd, co, ci, dy, dx);
    });
}

void conv3x3_backward_bias(std::span<const double> g, std::span<double> gb,
                           std::size_t c_out, std::size_t h, std::size_t wd) {
    parallel_for(c_out, [&](std::size_t co) {
        const double* plane = g.data() + co * h * wd;
        double acc = 0.0;
        for (std::size_t i = 0; i < h * wd; ++i) acc += plane[i];
        gb[co] += acc;
    });
}

void conv1x1_forward(std::span<const double> in, std::span<const double> w,
                     std::span<const double> b, std::span<double> out,
                     std::size_t c_in, std::size_t c_out, std::size_t hw) {
    parallel_for(c_out, [&](std::size_t co) {
        double* plane = out.data() + co * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            double acc = b[co];
            for (std::size_t ci = 0; ci < c_in; ++ci)
                acc += in[ci * hw + i] * w[co * c_in + ci];
            plane[i] = acc;
        }
    });
}

void conv1x1_backward_input(std::span<const double> g, std::span<const double> w,
                            std::span<double> gin, std::size_t c_in, std::size_t c_out,
                            std::size_t hw) {
    parallel_for(c_in, [&](std::size_t ci) {
        double* plane = gin.data() + ci * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            double acc = 0.0;
            for (std::size_t co = 0; co < c_out; ++co)
                acc += g[co * hw + i] * w[co * c_in + ci];
            plane[i] += acc;
        }
    });
}

void conv1x1_backward_weight(std::span<const double> g, std::span<const double> in,
                             std::span<double> gw, std::size_t c_in, std::size_t c_out,
                             std::size_t hw) {
    parallel_for(c_out * c_in, [&](std::size_t idx) {
        const std::size_t co = idx / c_in;
        const std::size_t ci = idx % c_in;
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += g[co * hw + i] * in[ci * hw + i];
        gw[idx] += acc;
    });
}

void lagged_corr(std::span<const double> zn, LaggedDims d, std::span<const double> v,
                 std::span<double> c) {
    parallel_for(d.features(), [&](std::size_t f) {
        const std::size_t k = f / d.k + 1;
        const std::size_t l = f % d.k;
        double acc = 0.0;
        for (std::size_t t = d.p; t < d.t_len; ++t)
            acc += zn[(t - k) * d.k + l] * v[t - d.p];
        c[f] = acc;
    });
}

void lagged_apply_cols(std::span<const double> zn, LaggedDims d,
                       std::span<const std::size_t> active, std::span<const double> w,
                       std::span<double> u) {
    parallel_for(d.n(), [&](std::size_t it) {
        const std::size_t t = it + d.p;
        double acc = 0.0;
        for (std::size_t m = 0; m < active.size(); ++m) {
            const std::size_t k = active[m] / d.k + 1;
            const std::size_t l = active[m] % d.k;
            acc += w[m] * zn[(t - k) * d.k + l];
        }
        u[it] = acc;
    });
}

void lagged_gram(std::span<const double> zn, LaggedDims d,
                 std::span<const std::size_t> active, std::span<double> g) {
    const std::size_t m = active.size();
    parallel_for(m, [&](std::size_t a) {
        const std::size_t ka = active[a] / d.k + 1;
        const std::size_t la = active[a] % d.k;
        for (std::size_t b = 0; b < m; ++b) {
            const std::size_t kb = active[b] / d.k + 1;
            const std::size_t lb = active[b] % d.k;
            double acc = 0.0;
            for (std::size_t t = d.p; t < d.t_len; ++t)
                acc += zn[(t - ka) * d.k + la] * zn[(t - kb) * d.k + lb];
            g[a * m + b] = acc;
        }
    });
}

void lagged_corr_backward(std::span<const double> zn, LaggedDims d,
                          std::span<const double> v, std::span<const double> gc,
                          std::span<double> gzn, std::span<double> gv) {
    // gzn[s,l] += sum_k gc[(k-1)K+l] * v[s+k-p], gathered per (s,l)
    parallel_for(d.t_len, [&](std::size_t s) {
        for (std::size_t l = 0; l < d.k; ++l) {
            double acc = 0.0;
            for (std::size_t k = 1; k <= d.p; ++k) {
                const std::size_t t = s + k; // sample index whose lag-k value is zn[s,l]
                if (t < d.p || t >= d.t_len) continue;
                acc += gc[(k - 1) * d.k + l] * v[t - d.p];
            }
            gzn[s * d.k + l] += acc;
        }
    });
    // gv[it] = sum_f zn[t-k,l] * gc[f]
    parallel_for(d.n(), [&](std::size_t it) {
        const std::size_t t = it + d.p;
        double acc = 0.0;
        for (std::size_t f = 0; f < d.features(); ++f) {
            const std::size_t k = f / d.k + 1;
            const std::size_t l = f % d.k;
            acc += zn[(t - k) * d.k + l] * gc[f];
        }
        gv[it] += acc;
    });
}

void lagged_apply_cols_backward(std::span<const double> zn, LaggedDims d,
                                std::span<const std::size_t> active,
                                std::span<const double> w, std::span<const double> gu,
                                std::span<double> gzn, std::span<double> gw) {
    parallel_for(d.t_len, [&](std::size_t s) {
        for (std::size_t m = 0; m < active.size(); ++m) {
            const std::size_t k = active[m] / d.k + 1;
            const std::size_t l = active[m] % d.k;
            const std::size_t t = s + k;
            if (t < d.p || t >= d.t_len) continue;
            gzn[s * d.k + l] += w[m] * gu[t - d.p];
        }
    });
    parallel_for(active.size(), [&](std::size_t m) {
        const std::size_t k = active[m] / d.k + 1;
        const std::size_t l = active[m] % d.k;
        double acc = 0.0;
        for (std::size_t t = d.p; t < d.t_len; ++t)
            acc += gu[t - d.p] * zn[(t - k) * d.k + l];
        gw[m] += acc;
    });
}

void lagged_gram_backward(std::span<const double> zn, LaggedDims d,
                          std::span<const std::size_t> active, std::span<const double> gg,
                          std::span<double> gzn) {
    const std::size_t m = active.size();
    // d G[a,b] / d zn[s,l] contributes via both factor positions; gather per s row.
    parallel_for(d.t_len, [&](std::size_t s) {
        for (std::size_t a = 0; a < m; ++a) {
            const std::size_t ka = active[a] / d.k + 1;
            const std::size_t la = active[a] % d.k;
            const std::size_t t = s + ka;
            if (t < d.p || t >= d.t_len) continue;
            double acc = 0.0;
            for (std::size_t b = 0; b < m; ++b) {
                const std::size_t kb = active[b] / d.k + 1;
                const std::size_t lb = active[b] % d.k;
                const double other = zn[(t - kb) * d.k + lb];
                acc += (gg[a * m + b] + gg[b * m + a]) * other;
            }
            gzn[s * d.k + la] += acc;
        }
    });
}

namespace reference {

void conv3x3_forward(std::span<const double> in, std::span<const double> w,
                     std::span<const double> b, std::span<double> out,
                     std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t wd) {
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < wd; ++x)
                out[(co * h + y) * wd + x] = b[co] + conv3x3_cell(in, w, c_in, h, wd, co, y, x);
}

void conv3x3_backward_input(std::span<const double> g, std::span<const double> w,
                            std::span<double> gin, std::size_t c_in, std::size_t c_out,
                            std::size_t h, std::size_t wd) {
    for (std::size_t ci = 0; ci < c_in; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < wd; ++x)
                gin[(ci * h + y) * wd + x] +=
                    conv3x3_grad_in_cell(g, w, c_in, c_out, h, wd, ci, y, x);
}

void conv3x3_backward_weight(std::span<const double> g, std::span<const double> in,
                             std::span<double> gw, std::size_t c_in, std::size_t c_out,
                             std::size_t h, std::size_t wd) {
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t ci = 0; ci < c_in; ++ci)
            for (std::size_t dy = 0; dy < 3; ++dy)
                for (std::size_t dx = 0; dx < 3; ++dx)
                    gw[((co * c_in + ci) * 3 + dy) * 3 + dx] +=
                        conv3x3_grad_w_cell(g, in, h, wd, co, ci, dy, dx);
}

void lagged_corr(std::span<const double> zn, LaggedDims d, std::span<const double> v,
                 std::span<double> c) {
    for (std::size_t f = 0; f < d.features(); ++f) {
        const std::size_t k = f / d.k + 1;
        const std::size_t l = f % d.k;
        double acc = 0.0;
        for (std::size_t t = d.p; t < d.t_len; ++t)
            acc += zn[(t - k) * d.k + l] * v[t - d.p];
        c[f] = acc;
    }
}

void lagged_apply_cols(std::span<const double> zn, LaggedDims d,
                       std::span<const std::size_t> active, std::span<const double> w,
                       std::span<double> u) {
    for (std::size_t it = 0; it < d.n(); ++it) {
        const std::size_t t = it + d.p;
        double acc = 0.0;
        for (std::size_t m = 0; m < active.size(); ++m) {
            const std::size_t k = active[m] / d.k + 1;
            const std::size_t l = active[m] % d.k;
            acc += w[m] * zn[(t - k) * d.k + l];
        }
        u[it] = acc;
    }
}

void lagged_gram(std::span<const double> zn, LaggedDims d,
                 std::span<const std::size_t> active, std::span<double> g) {
    const std::size_t m = active.size();
    for (std::size_t a = 0; a < m; ++a) {
        const std::size_t ka = active[a] / d.k + 1;
        const std::size_t la = active[a] % d.k;
        for (std::size_t b = 0; b < m; ++b) {
            const std::size_t kb = active[b] / d.k + 1;
            const std::size_t lb = active[b] % d.k;
            double acc = 0.0;
            for (std::size_t t = d.p; t < d.t_len; ++t)
                acc += zn[(t - ka) * d.k + la] * zn[(t - kb) * d.k + lb];
            g[a * m + b] = acc;
        }
    }
}

} // namespace reference

} // namespace sparsedyn::kernels
