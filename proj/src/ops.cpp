#include "sparsedyn/ops.hpp"

#include <cmath>
#include <string>

#include "sparsedyn/error.hpp"
#include "sparsedyn/kernels.hpp"

namespace sparsedyn {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
    }
}

#ifndef NDEBUG
void debug_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw SolverError(std::string(op) + " produced a non-finite value");
}
#else
void debug_finite(const Tensor&, const char*) {}
#endif

Tensor record_unless_const(Tape* tape, Tensor value, std::vector<std::int64_t> parents,
                           Tape::BackwardFn fn) {
    if (!tape) return value;
    return tape->record(std::move(value), std::move(parents), std::move(fn));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto pa = a.data(), pb = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] + pb[i];
    Tape* tape = common_tape({&a, &b});
    const std::int64_t na = a.node(), nb = b.node();
    return record_unless_const(tape, std::move(out), {na, nb},
                               [na, nb](Tape& t, const Tensor& up) {
                                   t.accumulate(na, up);
                                   t.accumulate(nb, up);
                               });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto pa = a.data(), pb = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] - pb[i];
    Tape* tape = common_tape({&a, &b});
    const std::int64_t na = a.node(), nb = b.node();
    return record_unless_const(tape, std::move(out), {na, nb},
                               [na, nb](Tape& t, const Tensor& up) {
                                   t.accumulate(na, up);
                                   if (nb >= 0) {
                                       Tensor m(up.shape());
                                       auto md = m.mutable_data();
                                       auto ud = up.data();
                                       for (std::size_t i = 0; i < md.size(); ++i) md[i] = -ud[i];
                                       t.accumulate(nb, std::move(m));
                                   }
                               });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto pa = a.data(), pb = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] * pb[i];
    Tape* tape = common_tape({&a, &b});
    const std::int64_t na = a.node(), nb = b.node();
    Tensor sa = a.detached(), sb = b.detached();
    return record_unless_const(tape, std::move(out), {na, nb},
                               [na, nb, sa, sb](Tape& t, const Tensor& up) {
                                   auto ud = up.data();
                                   if (na >= 0) {
                                       Tensor g(up.shape());
                                       auto gd = g.mutable_data();
                                       auto bd = sb.data();
                                       for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = ud[i] * bd[i];
                                       t.accumulate(na, std::move(g));
                                   }
                                   if (nb >= 0) {
                                       Tensor g(up.shape());
                                       auto gd = g.mutable_data();
                                       auto ad = sa.data();
                                       for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = ud[i] * ad[i];
                                       t.accumulate(nb, std::move(g));
                                   }
                               });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto pa = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] * c;
    const std::int64_t na = a.node();
    return record_unless_const(a.tape(), std::move(out), {na},
                               [na, c](Tape& t, const Tensor& up) {
                                   Tensor g(up.shape());
                                   auto gd = g.mutable_data();
                                   auto ud = up.data();
                                   for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = ud[i] * c;
                                   t.accumulate(na, std::move(g));
                               });
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto pa = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] + c;
    const std::int64_t na = a.node();
    return record_unless_const(a.tape(), std::move(out), {na},
                               [na](Tape& t, const Tensor& up) { t.accumulate(na, up); });
}

Tensor abs_frozen(const Tensor& a) {
    Tensor out(a.shape());
    std::vector<double> sign(a.numel());
    auto o = out.mutable_data();
    auto pa = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        sign[i] = pa[i] >= 0.0 ? 1.0 : -1.0;
        o[i] = pa[i] * sign[i];
    }
    const std::int64_t na = a.node();
    return record_unless_const(a.tape(), std::move(out), {na},
                               [na, sign = std::move(sign)](Tape& t, const Tensor& up) {
                                   Tensor g(up.shape());
                                   auto gd = g.mutable_data();
                                   auto ud = up.data();
                                   for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = ud[i] * sign[i];
                                   t.accumulate(na, std::move(g));
                               });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor out = Tensor::scalar(s);
    const std::int64_t na = a.node();
    auto shape = a.shape();
    return record_unless_const(a.tape(), std::move(out), {na},
                               [na, shape](Tape& t, const Tensor& up) {
                                   t.accumulate(na, Tensor::full(shape, up.value()));
                               });
}

Tensor dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    auto pa = a.data(), pb = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) s += pa[i] * pb[i];
    Tape* tape = common_tape({&a, &b});
    const std::int64_t na = a.node(), nb = b.node();
    Tensor sa = a.detached(), sb = b.detached();
    return record_unless_const(tape, Tensor::scalar(s), {na, nb},
                               [na, nb, sa, sb](Tape& t, const Tensor& up) {
                                   const double u = up.value();
                                   if (na >= 0) {
                                       Tensor g(sa.shape());
                                       auto gd = g.mutable_data();
                                       auto bd = sb.data();
                                       for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = u * bd[i];
                                       t.accumulate(na, std::move(g));
                                   }
                                   if (nb >= 0) {
                                       Tensor g(sb.shape());
                                       auto gd = g.mutable_data();
                                       auto ad = sa.data();
                                       for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = u * ad[i];
                                       t.accumulate(nb, std::move(g));
                                   }
                               });
}

Tensor add_scaled(const Tensor& a, const Tensor& w, const Tensor& gamma) {
    check_same_shape(a, w, "add_scaled");
    if (gamma.numel() != 1) throw DimensionError("add_scaled: gamma must be scalar");
    const double gv = gamma.value();
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto pa = a.data(), pw = w.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] + gv * pw[i];
    Tape* tape = common_tape({&a, &w, &gamma});
    const std::int64_t na = a.node(), nw = w.node(), ng = gamma.node();
    Tensor sw = w.detached();
    return record_unless_const(tape, std::move(out), {na, nw, ng},
                               [na, nw, ng, gv, sw](Tape& t, const Tensor& up) {
                                   t.accumulate(na, up);
                                   auto ud = up.data();
                                   if (nw >= 0) {
                                       Tensor g(up.shape());
                                       auto gd = g.mutable_data();
                                       for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = gv * ud[i];
                                       t.accumulate(nw, std::move(g));
                                   }
                                   if (ng >= 0) {
                                       double s = 0.0;
                                       auto wd = sw.data();
                                       for (std::size_t i = 0; i < ud.size(); ++i) s += ud[i] * wd[i];
                                       t.accumulate(ng, Tensor::scalar(s));
                                   }
                               });
}

Tensor scalar_minus_vec(const Tensor& s, const Tensor& v) {
    if (s.numel() != 1) throw DimensionError("scalar_minus_vec: s must be scalar");
    const double sv = s.value();
    Tensor out(v.shape());
    auto o = out.mutable_data();
    auto pv = v.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = sv - pv[i];
    Tape* tape = common_tape({&s, &v});
    const std::int64_t ns = s.node(), nv = v.node();
    return record_unless_const(tape, std::move(out), {ns, nv},
                               [ns, nv](Tape& t, const Tensor& up) {
                                   auto ud = up.data();
                                   if (ns >= 0) {
                                       double acc = 0.0;
                                       for (double u : ud) acc += u;
                                       t.accumulate(ns, Tensor::scalar(acc));
                                   }
                                   if (nv >= 0) {
                                       Tensor g(up.shape());
                                       auto gd = g.mutable_data();
                                       for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = -ud[i];
                                       t.accumulate(nv, std::move(g));
                                   }
                               });
}

Tensor scalar_plus_vec(const Tensor& s, const Tensor& v) {
    if (s.numel() != 1) throw DimensionError("scalar_plus_vec: s must be scalar");
    const double sv = s.value();
    Tensor out(v.shape());
    auto o = out.mutable_data();
    auto pv = v.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = sv + pv[i];
    Tape* tape = common_tape({&s, &v});
    const std::int64_t ns = s.node(), nv = v.node();
    return record_unless_const(tape, std::move(out), {ns, nv},
                               [ns, nv](Tape& t, const Tensor& up) {
                                   auto ud = up.data();
                                   if (ns >= 0) {
                                       double acc = 0.0;
                                       for (double u : ud) acc += u;
                                       t.accumulate(ns, Tensor::scalar(acc));
                                   }
                                   t.accumulate(nv, up);
                               });
}

Tensor div_stab(const Tensor& num, const Tensor& den, double eps) {
    check_same_shape(num, den, "div_stab");
    Tensor out(num.shape());
    std::vector<double> dstab(num.numel());
    auto o = out.mutable_data();
    auto pn = num.data(), pd = den.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        const double s = pd[i] >= 0.0 ? 1.0 : -1.0;
        dstab[i] = pd[i] + eps * s;
        o[i] = pn[i] / dstab[i];
    }
    debug_finite(out, "div_stab");
    Tape* tape = common_tape({&num, &den});
    const std::int64_t nn = num.node(), nd = den.node();
    Tensor saved_out = out.detached();
    return record_unless_const(
        tape, std::move(out), {nn, nd},
        [nn, nd, dstab = std::move(dstab), saved_out](Tape& t, const Tensor& up) {
            auto ud = up.data();
            if (nn >= 0) {
                Tensor g(up.shape());
                auto gd = g.mutable_data();
                for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = ud[i] / dstab[i];
                t.accumulate(nn, std::move(g));
            }
            if (nd >= 0) {
                Tensor g(up.shape());
                auto gd = g.mutable_data();
                auto od = saved_out.data();
                for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = -ud[i] * od[i] / dstab[i];
                t.accumulate(nd, std::move(g));
            }
        });
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    if (Tensor::count(shape) != a.numel()) {
        throw DimensionError("reshape: element count mismatch for " + a.shape_str());
    }
    Tensor out(shape, std::vector<double>(a.data().begin(), a.data().end()));
    const std::int64_t na = a.node();
    auto orig = a.shape();
    return record_unless_const(a.tape(), std::move(out), {na},
                               [na, orig](Tape& t, const Tensor& up) {
                                   Tensor g(orig, std::vector<double>(up.data().begin(),
                                                                      up.data().end()));
                                   t.accumulate(na, std::move(g));
                               });
}

Tensor gather(const Tensor& a, std::vector<std::size_t> flat_indices) {
    Tensor out({flat_indices.size()});
    auto o = out.mutable_data();
    auto pa = a.data();
    for (std::size_t i = 0; i < flat_indices.size(); ++i) {
        if (flat_indices[i] >= pa.size()) {
            throw DimensionError("gather: index " + std::to_string(flat_indices[i]) +
                                 " out of range for " + a.shape_str());
        }
        o[i] = pa[flat_indices[i]];
    }
    const std::int64_t na = a.node();
    auto shape = a.shape();
    return record_unless_const(a.tape(), std::move(out), {na},
                               [na, shape, idx = std::move(flat_indices)](Tape& t,
                                                                          const Tensor& up) {
                                   Tensor g = Tensor::zeros(shape);
                                   auto gd = g.mutable_data();
                                   auto ud = up.data();
                                   for (std::size_t i = 0; i < idx.size(); ++i) gd[idx[i]] += ud[i];
                                   t.accumulate(na, std::move(g));
                               });
}

Tensor concat1d(const std::vector<Tensor>& parts) {
    std::size_t total = 0;
    for (const Tensor& p : parts) total += p.numel();
    Tensor out({total});
    auto o = out.mutable_data();
    std::size_t off = 0;
    std::vector<std::int64_t> parents;
    std::vector<std::size_t> sizes;
    const Tensor* first = parts.empty() ? nullptr : &parts[0];
    Tape* tape = nullptr;
    for (const Tensor& p : parts) {
        for (double v : p.data()) o[off++] = v;
        parents.push_back(p.node());
        sizes.push_back(p.numel());
        if (p.on_tape()) {
            if (tape && tape != p.tape()) throw ContractViolation("concat1d: mixed tapes");
            tape = p.tape();
        }
    }
    (void)first;
    return record_unless_const(tape, std::move(out), parents,
                               [parents, sizes](Tape& t, const Tensor& up) {
                                   auto ud = up.data();
                                   std::size_t off = 0;
                                   for (std::size_t i = 0; i < parents.size(); ++i) {
                                       if (parents[i] >= 0) {
                                           Tensor g({sizes[i]});
                                           auto gd = g.mutable_data();
                                           for (std::size_t j = 0; j < sizes[i]; ++j)
                                               gd[j] = ud[off + j];
                                           t.accumulate(parents[i], std::move(g));
                                       }
                                       off += sizes[i];
                                   }
                               });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ArgumentError("stack_rows: no rows");
    const std::size_t len = rows[0].numel();
    Tensor out({rows.size(), len});
    auto o = out.mutable_data();
    std::vector<std::int64_t> parents;
    Tape* tape = nullptr;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].numel() != len) throw DimensionError("stack_rows: ragged rows");
        auto pd = rows[r].data();
        for (std::size_t j = 0; j < len; ++j) o[r * len + j] = pd[j];
        parents.push_back(rows[r].node());
        if (rows[r].on_tape()) {
            if (tape && tape != rows[r].tape())
                throw ContractViolation("stack_rows: mixed tapes");
            tape = rows[r].tape();
        }
    }
    return record_unless_const(tape, std::move(out), parents,
                               [parents, len](Tape& t, const Tensor& up) {
                                   auto ud = up.data();
                                   for (std::size_t r = 0; r < parents.size(); ++r) {
                                       if (parents[r] < 0) continue;
                                       Tensor g({len});
                                       auto gd = g.mutable_data();
                                       for (std::size_t j = 0; j < len; ++j)
                                           gd[j] = ud[r * len + j];
                                       t.accumulate(parents[r], std::move(g));
                                   }
                               });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    if (input.ndim() != 3) throw DimensionError("conv2d: input must be [C,H,W], got " +
                                                input.shape_str());
    if (kernel.ndim() != 4 || kernel.dim(2) != 3 || kernel.dim(3) != 3) {
        throw DimensionError("conv2d: kernel must be [C_out,C_in,3,3], got " + kernel.shape_str());
    }
    const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t c_out = kernel.dim(0);
    if (kernel.dim(1) != c_in) {
        throw DimensionError("conv2d: kernel input-channel axis " +
                             std::to_string(kernel.dim(1)) + " != input channel axis " +
                             std::to_string(c_in));
    }
    if (bias.numel() != c_out) {
        throw DimensionError("conv2d: bias axis " + std::to_string(bias.numel()) +
                             " != output channel axis " + std::to_string(c_out));
    }
    Tensor out({c_out, h, w});
    kernels::conv3x3_forward(input.data(), kernel.data(), bias.data(), out.mutable_data(),
                             c_in, c_out, h, w);
    debug_finite(out, "conv2d");
    Tape* tape = common_tape({&input, &kernel, &bias});
    const std::int64_t ni = input.node(), nk = kernel.node(), nb = bias.node();
    Tensor sin = input.detached(), sker = kernel.detached();
    return record_unless_const(
        tape, std::move(out), {ni, nk, nb},
        [ni, nk, nb, sin, sker, c_in, c_out, h, w](Tape& t, const Tensor& up) {
            if (ni >= 0) {
                Tensor g = Tensor::zeros({c_in, h, w});
                kernels::conv3x3_backward_input(up.data(), sker.data(), g.mutable_data(), c_in,
                                                c_out, h, w);
                t.accumulate(ni, std::move(g));
            }
            if (nk >= 0) {
                Tensor g = Tensor::zeros({c_out, c_in, 3, 3});
                kernels::conv3x3_backward_weight(up.data(), sin.data(), g.mutable_data(), c_in,
                                                 c_out, h, w);
                t.accumulate(nk, std::move(g));
            }
            if (nb >= 0) {
                Tensor g = Tensor::zeros({c_out});
                kernels::conv3x3_backward_bias(up.data(), g.mutable_data(), c_out, h, w);
                t.accumulate(nb, std::move(g));
            }
        });
}

Tensor conv1x1(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    if (input.ndim() != 3) throw DimensionError("conv1x1: input must be [C,H,W]");
    if (kernel.ndim() != 2) throw DimensionError("conv1x1: kernel must be [C_out,C_in]");
    const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t c_out = kernel.dim(0);
    if (kernel.dim(1) != c_in || bias.numel() != c_out) {
        throw DimensionError("conv1x1: kernel " + kernel.shape_str() + " / bias does not match input " +
                             input.shape_str());
    }
    const std::size_t hw = h * w;
    Tensor out({c_out, h, w});
    kernels::conv1x1_forward(input.data(), kernel.data(), bias.data(), out.mutable_data(),
                             c_in, c_out, hw);
    Tape* tape = common_tape({&input, &kernel, &bias});
    const std::int64_t ni = input.node(), nk = kernel.node(), nb = bias.node();
    Tensor sin = input.detached(), sker = kernel.detached();
    return record_unless_const(
        tape, std::move(out), {ni, nk, nb},
        [ni, nk, nb, sin, sker, c_in, c_out, h, w, hw](Tape& t, const Tensor& up) {
            if (ni >= 0) {
                Tensor g = Tensor::zeros({c_in, h, w});
                kernels::conv1x1_backward_input(up.data(), sker.data(), g.mutable_data(), c_in,
                                                c_out, hw);
                t.accumulate(ni, std::move(g));
            }
            if (nk >= 0) {
                Tensor g = Tensor::zeros({c_out, c_in});
                kernels::conv1x1_backward_weight(up.data(), sin.data(), g.mutable_data(), c_in,
                                                 c_out, hw);
                t.accumulate(nk, std::move(g));
            }
            if (nb >= 0) {
                Tensor g = Tensor::zeros({c_out});
                auto gd = g.mutable_data();
                auto ud = up.data();
                for (std::size_t co = 0; co < c_out; ++co) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) acc += ud[co * hw + i];
                    gd[co] = acc;
                }
                t.accumulate(nb, std::move(g));
            }
        });
}

PoolResult maxpool2x2(const Tensor& input) {
    if (input.ndim() != 3) throw DimensionError("maxpool2x2: input must be [C,H,W]");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("maxpool2x2: spatial dims must be even, got " + input.shape_str());
    }
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor values({c, oh, ow});
    PoolIndices indices;
    indices.winner.resize(c * oh * ow);
    indices.channels = c;
    indices.out_h = oh;
    indices.out_w = ow;
    indices.in_numel = input.numel();
    auto vd = values.mutable_data();
    auto pd = input.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                // Fixed scan order; strict > keeps the lowest flat index on ties.
                std::size_t best = (ch * h + 2 * y) * w + 2 * x;
                double bv = pd[best];
                const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
                for (std::size_t cidx : cand) {
                    if (pd[cidx] > bv) {
                        bv = pd[cidx];
                        best = cidx;
                    }
                }
                const std::size_t cell = (ch * oh + y) * ow + x;
                vd[cell] = bv;
                indices.winner[cell] = best;
            }
        }
    }
    const std::int64_t ni = input.node();
    auto ishape = input.shape();
    Tensor rec = record_unless_const(input.tape(), std::move(values), {ni},
                                     [ni, ishape, win = indices.winner](Tape& t,
                                                                        const Tensor& up) {
                                         Tensor g = Tensor::zeros(ishape);
                                         auto gd = g.mutable_data();
                                         auto ud = up.data();
                                         for (std::size_t i = 0; i < win.size(); ++i)
                                             gd[win[i]] += ud[i];
                                         t.accumulate(ni, std::move(g));
                                     });
    return PoolResult{std::move(rec), std::move(indices)};
}

Tensor max_unpool2x2(const Tensor& pooled, const PoolIndices& indices, std::size_t out_h,
                     std::size_t out_w) {
    if (pooled.ndim() != 3) throw DimensionError("max_unpool2x2: pooled must be [C,H',W']");
    const std::size_t c = pooled.dim(0);
    if (c != indices.channels || pooled.dim(1) != indices.out_h ||
        pooled.dim(2) != indices.out_w || out_h != 2 * indices.out_h ||
        out_w != 2 * indices.out_w) {
        throw DimensionError("max_unpool2x2: indices do not match pooled shape " +
                             pooled.shape_str());
    }
    const std::size_t out_numel = c * out_h * out_w;
    if (indices.in_numel != out_numel) {
        throw ArgumentError("max_unpool2x2: corrupt pooling indices (recorded input size " +
                            std::to_string(indices.in_numel) + ", requested output size " +
                            std::to_string(out_numel) + ")");
    }
    Tensor out = Tensor::zeros({c, out_h, out_w});
    auto od = out.mutable_data();
    auto pd = pooled.data();
    for (std::size_t i = 0; i < indices.winner.size(); ++i) {
        if (indices.winner[i] >= out_numel) {
            throw ArgumentError("max_unpool2x2: corrupt pooling indices (index " +
                                std::to_string(indices.winner[i]) + " out of range)");
        }
        od[indices.winner[i]] = pd[i];
    }
    const std::int64_t np = pooled.node();
    return record_unless_const(pooled.tape(), std::move(out), {np},
                               [np, win = indices.winner, pshape = pooled.shape()](
                                   Tape& t, const Tensor& up) {
                                   Tensor g({pshape});
                                   g = Tensor::zeros(pshape);
                                   auto gd = g.mutable_data();
                                   auto ud = up.data();
                                   for (std::size_t i = 0; i < win.size(); ++i)
                                       gd[i] = ud[win[i]];
                                   t.accumulate(np, std::move(g));
                               });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) {
        throw ArgumentError("leaky_relu: slope must be in (0,1), got " + std::to_string(slope));
    }
    Tensor out(x.shape());
    std::vector<double> deriv(x.numel());
    auto od = out.mutable_data();
    auto xd = x.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        if (xd[i] >= 0.0) {
            od[i] = xd[i];
            deriv[i] = 1.0;
        } else {
            od[i] = slope * xd[i];
            deriv[i] = slope;
        }
    }
    const std::int64_t nx = x.node();
    return record_unless_const(x.tape(), std::move(out), {nx},
                               [nx, deriv = std::move(deriv)](Tape& t, const Tensor& up) {
                                   Tensor g(up.shape());
                                   auto gd = g.mutable_data();
                                   auto ud = up.data();
                                   for (std::size_t i = 0; i < gd.size(); ++i)
                                       gd[i] = ud[i] * deriv[i];
                                   t.accumulate(nx, std::move(g));
                               });
}

Tensor frozen_stats_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    if (x.ndim() != 3) throw DimensionError("frozen_stats_norm: input must be [C,H,W]");
    const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
    if (gamma.numel() != c || beta.numel() != c) {
        throw DimensionError("frozen_stats_norm: gamma/beta must have one entry per channel");
    }
    constexpr double kEps = 1e-5;
    Tensor out(x.shape());
    std::vector<double> inv(c), xhat(x.numel());
    auto od = out.mutable_data();
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* px = xd.data() + ch * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += px[i];
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double d = px[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(plane);
        inv[ch] = 1.0 / std::sqrt(var + kEps);
        for (std::size_t i = 0; i < plane; ++i) {
            const double h = (px[i] - mean) * inv[ch];
            xhat[ch * plane + i] = h;
            od[ch * plane + i] = gd[ch] * h + bd[ch];
        }
    }
    Tape* tape = common_tape({&x, &gamma, &beta});
    const std::int64_t nx = x.node(), ng = gamma.node(), nb = beta.node();
    Tensor sgamma = gamma.detached();
    return record_unless_const(
        tape, std::move(out), {nx, ng, nb},
        [nx, ng, nb, c, plane, inv = std::move(inv), xhat = std::move(xhat),
         sgamma](Tape& t, const Tensor& up) {
            auto ud = up.data();
            auto gmd = sgamma.data();
            if (nx >= 0) {
                Tensor g(up.shape());
                auto out_g = g.mutable_data();
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double f = gmd[ch] * inv[ch]; // mean/var are frozen
                    for (std::size_t i = 0; i < plane; ++i)
                        out_g[ch * plane + i] = ud[ch * plane + i] * f;
                }
                t.accumulate(nx, std::move(g));
            }
            if (ng >= 0) {
                Tensor g({c});
                auto out_g = g.mutable_data();
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i)
                        acc += ud[ch * plane + i] * xhat[ch * plane + i];
                    out_g[ch] = acc;
                }
                t.accumulate(ng, std::move(g));
            }
            if (nb >= 0) {
                Tensor g({c});
                auto out_g = g.mutable_data();
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += ud[ch * plane + i];
                    out_g[ch] = acc;
                }
                t.accumulate(nb, std::move(g));
            }
        });
}

bool cholesky_factor(std::vector<double>& a, std::size_t m, double min_pivot) {
    for (std::size_t j = 0; j < m; ++j) {
        double d = a[j * m + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * m + k] * a[j * m + k];
        if (!(d > min_pivot * min_pivot)) return false;
        const double l = std::sqrt(d);
        a[j * m + j] = l;
        for (std::size_t i = j + 1; i < m; ++i) {
            double s = a[i * m + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * m + k] * a[j * m + k];
            a[i * m + j] = s / l;
        }
        for (std::size_t i = 0; i < j; ++i) a[i * m + j] = 0.0;
    }
    return true;
}

void cholesky_solve(const std::vector<double>& chol, std::size_t m, std::span<const double> b,
                    std::span<double> x) {
    // L y = b
    for (std::size_t i = 0; i < m; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= chol[i * m + k] * x[k];
        x[i] = s / chol[i * m + i];
    }
    // L^T x = y
    for (std::size_t ii = m; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < m; ++k) s -= chol[k * m + ii] * x[k];
        x[ii] = s / chol[ii * m + ii];
    }
}

Tensor solve_spd_prefactored(const Tensor& g, const std::vector<double>& chol,
                             const std::vector<double>& rhs) {
    const std::size_t m = rhs.size();
    if (g.numel() != m * m) throw DimensionError("solve_spd: G must be m x m");
    Tensor w({m});
    cholesky_solve(chol, m, rhs, w.mutable_data());
    debug_finite(w, "solve_spd");
    const std::int64_t ngm = g.node();
    Tensor sw = w.detached();
    return record_unless_const(g.tape(), std::move(w), {ngm},
                               [ngm, m, chol, sw](Tape& t, const Tensor& up) {
                                   std::vector<double> tvec(m);
                                   cholesky_solve(chol, m, up.data(), tvec);
                                   Tensor gg({m, m});
                                   auto gd = gg.mutable_data();
                                   auto wd = sw.data();
                                   for (std::size_t a = 0; a < m; ++a)
                                       for (std::size_t b = 0; b < m; ++b)
                                           gd[a * m + b] = -tvec[a] * wd[b];
                                   t.accumulate(ngm, std::move(gg));
                               });
}

} // namespace sparsedyn
