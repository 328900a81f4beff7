#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sparsedyn/error.hpp"
#include "sparsedyn/kernels.hpp"
#include "sparsedyn/ops.hpp"
#include "sparsedyn/rng.hpp"
#include "sparsedyn/tape.hpp"
#include "sparsedyn/tensor.hpp"
#include "test_util.hpp"

using namespace sparsedyn;
using testutil::central_diff;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

// Independent convolution used as the oracle for conv2d.
Tensor conv3x3_brute(const Tensor& in, const Tensor& ker, const Tensor& bias) {
    const std::size_t ci_n = in.dim(0), h = in.dim(1), w = in.dim(2);
    const std::size_t co_n = ker.dim(0);
    Tensor out({co_n, h, w});
    auto od = out.mutable_data();
    for (std::size_t co = 0; co < co_n; ++co)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = bias.at(co);
                for (std::size_t ci = 0; ci < ci_n; ++ci)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = static_cast<int>(y) + dy;
                            const int xx = static_cast<int>(x) + dx;
                            if (yy < 0 || yy >= static_cast<int>(h) || xx < 0 ||
                                xx >= static_cast<int>(w))
                                continue;
                            acc += in.at((ci * h + static_cast<std::size_t>(yy)) * w +
                                         static_cast<std::size_t>(xx)) *
                                   ker.at(((co * ci_n + ci) * 3 +
                                           static_cast<std::size_t>(dy + 1)) *
                                              3 +
                                          static_cast<std::size_t>(dx + 1));
                        }
                od[(co * h + y) * w + x] = acc;
            }
    return out;
}

} // namespace

TEST_CASE("conv2d zero input yields bias planes") {
    CounterRng rng(1);
    Tensor in = Tensor::zeros({2, 4, 4});
    Tensor ker = random_tensor(rng, {3, 2, 3, 3});
    Tensor bias({3}, {0.5, -1.0, 2.0});
    Tensor out = conv2d(in, ker, bias);
    for (std::size_t co = 0; co < 3; ++co)
        for (std::size_t i = 0; i < 16; ++i)
            CHECK(out.at(co * 16 + i) == doctest::Approx(bias.at(co)).epsilon(1e-15));
}

TEST_CASE("conv2d delta kernel is the identity") {
    CounterRng rng(2);
    Tensor in = random_tensor(rng, {1, 5, 6});
    Tensor ker = Tensor::zeros({1, 1, 3, 3});
    ker.mutable_data()[4] = 1.0; // center tap
    Tensor bias = Tensor::zeros({1});
    Tensor out = conv2d(in, ker, bias);
    CHECK(max_abs_diff(out.data(), in.data()) == 0.0);
}

TEST_CASE("conv2d ones kernel on ones input: interior 9, corners 4") {
    Tensor in = Tensor::full({1, 4, 4}, 1.0);
    Tensor ker = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor bias = Tensor::zeros({1});
    Tensor out = conv2d(in, ker, bias);
    CHECK(out.at(0) == 4.0);                 // corner
    CHECK(out.at(5) == 9.0);                 // interior
    CHECK(out.at(15) == 4.0);                // opposite corner
    CHECK(out.at(1) == 6.0);                 // edge
    // full agreement with the brute-force oracle
    Tensor ref = conv3x3_brute(in, ker, bias);
    CHECK(max_abs_diff(out.data(), ref.data()) == 0.0);
}

TEST_CASE("conv2d matches brute force on random tensors") {
    CounterRng rng(3);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor in = random_tensor(rng, {3, 6, 5});
        Tensor ker = random_tensor(rng, {4, 3, 3, 3});
        Tensor bias = random_tensor(rng, {4});
        Tensor out = conv2d(in, ker, bias);
        Tensor ref = conv3x3_brute(in, ker, bias);
        CHECK(max_abs_diff(out.data(), ref.data()) < 1e-14);
    }
}

TEST_CASE("conv2d shape errors name the offending axes") {
    Tensor in = Tensor::zeros({2, 4, 4});
    Tensor ker = Tensor::zeros({3, 5, 3, 3}); // wrong input channels
    Tensor bias = Tensor::zeros({3});
    CHECK_THROWS_AS(conv2d(in, ker, bias), DimensionError);
    Tensor ker55 = Tensor::zeros({3, 2, 5, 5});
    CHECK_THROWS_AS(conv2d(in, ker55, bias), DimensionError);
}

TEST_CASE("parallel kernels match serial reference bit for bit") {
    CounterRng rng(4);
    const std::size_t c_in = 3, c_out = 4, h = 8, w = 6;
    Tensor in = random_tensor(rng, {c_in, h, w});
    Tensor ker = random_tensor(rng, {c_out, c_in, 3, 3});
    Tensor bias = random_tensor(rng, {c_out});
    Tensor out_par({c_out, h, w}), out_ser({c_out, h, w});
    kernels::conv3x3_forward(in.data(), ker.data(), bias.data(), out_par.mutable_data(), c_in,
                             c_out, h, w);
    kernels::reference::conv3x3_forward(in.data(), ker.data(), bias.data(),
                                        out_ser.mutable_data(), c_in, c_out, h, w);
    CHECK(max_abs_diff(out_par.data(), out_ser.data()) == 0.0);

    Tensor g = random_tensor(rng, {c_out, h, w});
    Tensor gi_par = Tensor::zeros({c_in, h, w}), gi_ser = Tensor::zeros({c_in, h, w});
    kernels::conv3x3_backward_input(g.data(), ker.data(), gi_par.mutable_data(), c_in, c_out, h,
                                    w);
    kernels::reference::conv3x3_backward_input(g.data(), ker.data(), gi_ser.mutable_data(), c_in,
                                               c_out, h, w);
    CHECK(max_abs_diff(gi_par.data(), gi_ser.data()) == 0.0);

    Tensor gw_par = Tensor::zeros({c_out, c_in, 3, 3}), gw_ser = Tensor::zeros({c_out, c_in, 3, 3});
    kernels::conv3x3_backward_weight(g.data(), in.data(), gw_par.mutable_data(), c_in, c_out, h,
                                     w);
    kernels::reference::conv3x3_backward_weight(g.data(), in.data(), gw_ser.mutable_data(), c_in,
                                                c_out, h, w);
    CHECK(max_abs_diff(gw_par.data(), gw_ser.data()) == 0.0);
}

TEST_CASE("maxpool picks the single-block maximum and its index") {
    Tensor in({1, 2, 2}, {1, 2, 3, 4});
    auto [vals, idx] = maxpool2x2(in);
    CHECK(vals.numel() == 1);
    CHECK(vals.at(0) == 4.0);
    CHECK(idx.winner[0] == 3);
}

TEST_CASE("maxpool tie goes to the lowest flat index") {
    Tensor in = Tensor::full({1, 4, 4}, 7.0);
    auto [vals, idx] = maxpool2x2(in);
    // brute-force: all entries equal, so every winner must be the first cell
    // of its 2x2 block
    CHECK(idx.winner[0] == 0);
    CHECK(idx.winner[1] == 2);
    CHECK(idx.winner[2] == 8);
    CHECK(idx.winner[3] == 10);
    for (std::size_t i = 0; i < 4; ++i) CHECK(vals.at(i) == 7.0);
}

TEST_CASE("maxpool rejects odd spatial dims") {
    CHECK_THROWS_AS(maxpool2x2(Tensor::zeros({1, 3, 4})), DimensionError);
    CHECK_THROWS_AS(maxpool2x2(Tensor::zeros({1, 4, 5})), DimensionError);
}

TEST_CASE("gradient of sum(pool) routes only to winners") {
    CounterRng rng(5);
    Tensor vals = random_tensor(rng, {2, 4, 4});
    Tape tape;
    Tensor x = tape.leaf(vals);
    auto pooled = maxpool2x2(x);
    Tensor loss = sum(pooled.values);
    tape.backward(loss);
    Tensor g = tape.grad(x);
    std::vector<char> is_winner(vals.numel(), 0);
    for (std::size_t w : pooled.indices.winner) is_winner[w] = 1;
    for (std::size_t i = 0; i < vals.numel(); ++i)
        CHECK(g.at(i) == (is_winner[i] ? 1.0 : 0.0));
}

TEST_CASE("unpool scatters a single value") {
    Tensor in({1, 2, 2}, {0, 0, 0, 4});
    auto res = maxpool2x2(in);
    Tensor up = max_unpool2x2(res.values, res.indices, 2, 2);
    CHECK(up.at(0) == 0.0);
    CHECK(up.at(1) == 0.0);
    CHECK(up.at(2) == 0.0);
    CHECK(up.at(3) == 4.0);
}

TEST_CASE("pool(unpool(y)) is the identity on pooled values") {
    CounterRng rng(6);
    for (int rep = 0; rep < 20; ++rep) {
        // nonnegative values: a scattered zero must never beat a winner
        Tensor in = random_tensor(rng, {2, 4, 4}, 0.0, 1.0);
        auto res = maxpool2x2(in);
        Tensor up = max_unpool2x2(res.values, res.indices, 4, 4);
        auto res2 = maxpool2x2(up);
        CHECK(max_abs_diff(res2.values.data(), res.values.data()) == 0.0);
        // and the unpooled tensor is zero away from winners
        std::vector<char> winner(up.numel(), 0);
        for (std::size_t w : res.indices.winner) winner[w] = 1;
        for (std::size_t i = 0; i < up.numel(); ++i)
            if (!winner[i]) CHECK(up.at(i) == 0.0);
    }
}

TEST_CASE("unpool rejects corrupt indices") {
    Tensor in({1, 2, 2}, {1, 2, 3, 4});
    auto res = maxpool2x2(in);
    res.indices.winner[0] = 99;
    res.indices.in_numel = 4;
    CHECK_THROWS_AS(max_unpool2x2(res.values, res.indices, 2, 2), ArgumentError);
}

TEST_CASE("leaky_relu values and slope bounds") {
    Tensor x({2}, {2.0, -2.0});
    Tensor y = leaky_relu(x, 0.01);
    CHECK(y.at(0) == 2.0);
    CHECK(y.at(1) == doctest::Approx(-0.02).epsilon(1e-15));
    CHECK_THROWS_AS(leaky_relu(x, 0.0), ArgumentError);
    CHECK_THROWS_AS(leaky_relu(x, 1.0), ArgumentError);
}

TEST_CASE("leaky_relu gradient matches central differences") {
    for (double x0 : {0.5, -0.5}) {
        auto f = [&](const std::vector<double>& v) {
            Tensor x({1}, {v[0]});
            return sum(leaky_relu(x, 0.01)).value();
        };
        Tape tape;
        Tensor x = tape.leaf(Tensor({1}, {x0}));
        tape.backward(sum(leaky_relu(x, 0.01)));
        const double got = tape.grad(x).at(0);
        const double want = central_diff(f, {x0}, 0, 1e-5);
        CHECK(rel_err(got, want) < 1e-8);
    }
}

TEST_CASE("backward on x*x") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(3.0));
    Tensor y = mul(x, x);
    tape.backward(y);
    CHECK(tape.grad(x).value() == 6.0);
}

TEST_CASE("backward of sum(x*y) gives the partner operand") {
    CounterRng rng(7);
    Tensor xv = random_tensor(rng, {5});
    Tensor yv = random_tensor(rng, {5});
    Tape tape;
    Tensor x = tape.leaf(xv);
    Tensor y = tape.leaf(yv);
    tape.backward(sum(mul(x, y)));
    CHECK(max_abs_diff(tape.grad(x).data(), yv.data()) == 0.0);
    CHECK(max_abs_diff(tape.grad(y).data(), xv.data()) == 0.0);
}

TEST_CASE("backward rejects non-scalar roots") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::zeros({3}));
    CHECK_THROWS_AS(tape.backward(x), ContractViolation);
}

TEST_CASE("unreached leaves get zero gradients") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(1.0));
    Tensor y = tape.leaf(Tensor::scalar(2.0));
    tape.backward(mul(x, x));
    CHECK(tape.grad(y).value() == 0.0);
}

TEST_CASE("shared subexpressions accumulate like the unshared rewrite") {
    CounterRng rng(8);
    Tensor av = random_tensor(rng, {4});
    Tensor bv = random_tensor(rng, {4});
    // shared: s = a*b used twice
    Tape t1;
    Tensor a1 = t1.leaf(av), b1 = t1.leaf(bv);
    Tensor s = mul(a1, b1);
    t1.backward(sum(add(s, s)));
    // unshared: each use recomputed
    Tape t2;
    Tensor a2 = t2.leaf(av), b2 = t2.leaf(bv);
    t2.backward(sum(add(mul(a2, b2), mul(a2, b2))));
    CHECK(max_abs_diff(t1.grad(a1).data(), t2.grad(a2).data()) == 0.0);
    CHECK(max_abs_diff(t1.grad(b1).data(), t2.grad(b2).data()) == 0.0);
}

TEST_CASE("composite conv-pool-sum gradient matches finite differences") {
    CounterRng rng(9);
    Tensor in0 = random_tensor(rng, {1, 4, 4});
    Tensor ker0 = random_tensor(rng, {2, 1, 3, 3});
    Tensor bias0 = random_tensor(rng, {2});

    auto run = [&](const Tensor& in, const Tensor& ker, const Tensor& bias) {
        auto pooled = maxpool2x2(conv2d(in, ker, bias));
        return sum(leaky_relu(pooled.values, 0.01));
    };

    Tape tape;
    Tensor in = tape.leaf(in0), ker = tape.leaf(ker0), bias = tape.leaf(bias0);
    tape.backward(run(in, ker, bias));

    // probe a handful of coordinates of each input
    auto check_input = [&](const Tensor& base, const Tensor& leaf, int which) {
        Tensor grad = tape.grad(leaf);
        CounterRng pick(100 + which);
        for (int rep = 0; rep < 6; ++rep) {
            const std::size_t i = pick.next_below(base.numel());
            auto f = [&](const std::vector<double>& v) {
                Tensor t(base.shape(), v);
                if (which == 0) return run(t, ker0, bias0).value();
                if (which == 1) return run(in0, t, bias0).value();
                return run(in0, ker0, t).value();
            };
            std::vector<double> flat(base.data().begin(), base.data().end());
            const double want = central_diff(f, flat, i, 1e-5);
            CHECK(rel_err(grad.at(i), want) < 1e-5);
        }
    };
    check_input(in0, in, 0);
    check_input(ker0, ker, 1);
    check_input(bias0, bias, 2);
}

TEST_CASE("frozen_stats_norm gradient matches finite differences") {
    CounterRng rng(10);
    Tensor x0 = random_tensor(rng, {2, 2, 3});
    Tensor g0 = random_tensor(rng, {2}, 0.5, 1.5);
    Tensor b0 = random_tensor(rng, {2});
    auto run = [&](const Tensor& x, const Tensor& g, const Tensor& b) {
        // weight the output so per-element gradients differ
        Tensor wts({12});
        for (std::size_t i = 0; i < 12; ++i) wts.mutable_data()[i] = 0.1 * (double(i) + 1.0);
        return dot(reshape(frozen_stats_norm(x, g, b), {12}), wts);
    };
    Tape tape;
    Tensor x = tape.leaf(x0), g = tape.leaf(g0), b = tape.leaf(b0);
    tape.backward(run(x, g, b));
    // gamma gradient
    {
        auto f = [&](const std::vector<double>& v) {
            return run(x0, Tensor({2}, v), b0).value();
        };
        std::vector<double> flat(g0.data().begin(), g0.data().end());
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(rel_err(tape.grad(g).at(i), central_diff(f, flat, i, 1e-6)) < 1e-6);
    }
    // beta gradient
    {
        auto f = [&](const std::vector<double>& v) {
            return run(x0, g0, Tensor({2}, v)).value();
        };
        std::vector<double> flat(b0.data().begin(), b0.data().end());
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(rel_err(tape.grad(b).at(i), central_diff(f, flat, i, 1e-6)) < 1e-6);
    }
    // x gradient: the frozen statistics make this d out / d x = gamma * inv
    // elementwise, not the full batch-norm Jacobian; check against that form.
    {
        Tensor gx = tape.grad(x);
        for (std::size_t ch = 0; ch < 2; ++ch) {
            auto xd = x0.data();
            double mean = 0.0;
            for (std::size_t i = 0; i < 6; ++i) mean += xd[ch * 6 + i];
            mean /= 6.0;
            double var = 0.0;
            for (std::size_t i = 0; i < 6; ++i) {
                const double d = xd[ch * 6 + i] - mean;
                var += d * d;
            }
            var /= 6.0;
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            for (std::size_t i = 0; i < 6; ++i) {
                const double upstream = 0.1 * (double(ch * 6 + i) + 1.0);
                CHECK(rel_err(gx.at(ch * 6 + i), upstream * g0.at(ch) * inv) < 1e-12);
            }
        }
    }
}

TEST_CASE("elementwise and reduction ops match finite differences") {
    CounterRng rng(11);
    Tensor a0 = random_tensor(rng, {6});
    Tensor b0 = random_tensor(rng, {6}, 0.5, 2.0);
    auto run = [&](const Tensor& a, const Tensor& b) {
        Tensor s1 = add(mul(a, b), scale(sub(a, b), 0.3));
        Tensor s2 = div_stab(a, b, 1e-8);
        Tensor s3 = abs_frozen(a);
        Tensor g = gather(concat1d({s1, s2, s3}), {0, 3, 7, 11, 13});
        return add(dot(g, g), sum(add_scalar(s2, 1.5)));
    };
    Tape tape;
    Tensor a = tape.leaf(a0), b = tape.leaf(b0);
    tape.backward(run(a, b));
    for (std::size_t i = 0; i < 6; ++i) {
        auto fa = [&](const std::vector<double>& v) { return run(Tensor({6}, v), b0).value(); };
        std::vector<double> fl(a0.data().begin(), a0.data().end());
        CHECK(rel_err(tape.grad(a).at(i), central_diff(fa, fl, i, 1e-6)) < 1e-5);
        auto fb = [&](const std::vector<double>& v) { return run(a0, Tensor({6}, v)).value(); };
        std::vector<double> flb(b0.data().begin(), b0.data().end());
        CHECK(rel_err(tape.grad(b).at(i), central_diff(fb, flb, i, 1e-6)) < 1e-5);
    }
}

TEST_CASE("scalar-vector ops and add_scaled match finite differences") {
    CounterRng rng(12);
    Tensor s0 = Tensor({1}, {0.7});
    Tensor v0 = random_tensor(rng, {5});
    Tensor w0 = random_tensor(rng, {5});
    auto run = [&](const Tensor& s, const Tensor& v, const Tensor& w) {
        Tensor m = scalar_minus_vec(s, v);
        Tensor p = scalar_plus_vec(s, w);
        Tensor comb = add_scaled(m, p, gather(v, {2}));
        return dot(comb, comb);
    };
    Tape tape;
    Tensor s = tape.leaf(s0), v = tape.leaf(v0), w = tape.leaf(w0);
    tape.backward(run(s, v, w));
    {
        auto f = [&](const std::vector<double>& x) { return run(Tensor({1}, x), v0, w0).value(); };
        CHECK(rel_err(tape.grad(s).at(0), central_diff(f, {0.7}, 0, 1e-6)) < 1e-6);
    }
    for (std::size_t i = 0; i < 5; ++i) {
        auto f = [&](const std::vector<double>& x) { return run(s0, Tensor({5}, x), w0).value(); };
        std::vector<double> fl(v0.data().begin(), v0.data().end());
        CHECK(rel_err(tape.grad(v).at(i), central_diff(f, fl, i, 1e-6)) < 1e-5);
        auto fw = [&](const std::vector<double>& x) { return run(s0, v0, Tensor({5}, x)).value(); };
        std::vector<double> flw(w0.data().begin(), w0.data().end());
        CHECK(rel_err(tape.grad(w).at(i), central_diff(fw, flw, i, 1e-6)) < 1e-5);
    }
}

TEST_CASE("solve_spd gradient w.r.t. the matrix matches finite differences") {
    CounterRng rng(13);
    // SPD G = A^T A + 2 I
    const std::size_t m = 3;
    Tensor amat = random_tensor(rng, {m, m});
    std::vector<double> gv(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = i == j ? 2.0 : 0.0;
            for (std::size_t k = 0; k < m; ++k) acc += amat.at(k * m + i) * amat.at(k * m + j);
            gv[i * m + j] = acc;
        }
    std::vector<double> rhs = {1.0, -0.5, 0.25};
    // FD oracle must treat every matrix entry independently, so it solves the
    // perturbed (possibly asymmetric) system by Gaussian elimination.
    auto run_plain = [&](const std::vector<double>& g) {
        std::vector<double> a(m * (m + 1));
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) a[i * (m + 1) + j] = g[i * m + j];
            a[i * (m + 1) + m] = rhs[i];
        }
        for (std::size_t col = 0; col < m; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < m; ++r)
                if (std::fabs(a[r * (m + 1) + col]) > std::fabs(a[piv * (m + 1) + col])) piv = r;
            for (std::size_t c = 0; c <= m; ++c)
                std::swap(a[col * (m + 1) + c], a[piv * (m + 1) + c]);
            for (std::size_t r = 0; r < m; ++r) {
                if (r == col) continue;
                const double f = a[r * (m + 1) + col] / a[col * (m + 1) + col];
                for (std::size_t c = col; c <= m; ++c)
                    a[r * (m + 1) + c] -= f * a[col * (m + 1) + c];
            }
        }
        const double wts[3] = {1.0, 2.0, 3.0};
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            acc += wts[i] * a[i * (m + 1) + m] / a[i * (m + 1) + i];
        return acc;
    };
    Tape tape;
    Tensor g = tape.leaf(Tensor({m, m}, gv));
    std::vector<double> chol = gv;
    REQUIRE(cholesky_factor(chol, m, 1e-12));
    Tensor w = solve_spd_prefactored(g, chol, rhs);
    Tensor wts({m}, {1.0, 2.0, 3.0});
    tape.backward(dot(w, wts));
    Tensor gg = tape.grad(g);
    for (std::size_t i = 0; i < m * m; ++i) {
        const double want = central_diff(run_plain, gv, i, 1e-6);
        CHECK(rel_err(gg.at(i), want) < 1e-5);
    }
}

TEST_CASE("ops are deterministic") {
    CounterRng rng(14);
    Tensor in = random_tensor(rng, {3, 8, 8});
    Tensor ker = random_tensor(rng, {5, 3, 3, 3});
    Tensor bias = random_tensor(rng, {5});
    Tensor o1 = conv2d(in, ker, bias);
    Tensor o2 = conv2d(in, ker, bias);
    CHECK(max_abs_diff(o1.data(), o2.data()) == 0.0);
}

TEST_CASE("mixing tapes is rejected") {
    Tape t1, t2;
    Tensor a = t1.leaf(Tensor::scalar(1.0));
    Tensor b = t2.leaf(Tensor::scalar(2.0));
    CHECK_THROWS_AS(add(a, b), ContractViolation);
}
