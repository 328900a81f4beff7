// Timing comparison between the OpenMP kernels and their serial references,
// plus an end-to-end row-fit timing in both modes.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "sparsedyn/kernels.hpp"
#include "sparsedyn/parallel.hpp"
#include "sparsedyn/rng.hpp"
#include "sparsedyn/tensor.hpp"
#include "sparsedyn/var.hpp"

using namespace sparsedyn;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const std::string& name, double serial_ms, double parallel_ms) {
    std::printf("%-28s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx\n", name.c_str(),
                serial_ms, parallel_ms, serial_ms / parallel_ms);
}

} // namespace

int main(int argc, char** argv) {
    int threads = 0;
    int reps = 5;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--threads" && i + 1 < argc) threads = std::atoi(argv[++i]);
        if (arg == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);
    }
    set_num_threads(threads);

    CounterRng rng(1234);
    // conv kernels at the paper-scale frame size
    const std::size_t c = 32, h = 192, w = 128;
    std::vector<double> in(c * h * w), ker(c * c * 9), bias(c), out(c * h * w);
    std::vector<double> g(c * h * w), gin(c * h * w), gw(c * c * 9);
    for (double& v : in) v = rng.next_uniform(-1, 1);
    for (double& v : ker) v = rng.next_uniform(-1, 1);
    for (double& v : bias) v = rng.next_uniform(-1, 1);
    for (double& v : g) v = rng.next_uniform(-1, 1);

    report("conv3x3 forward",
           time_ms([&] { kernels::reference::conv3x3_forward(in, ker, bias, out, c, c, h, w); },
                   reps),
           time_ms([&] { kernels::conv3x3_forward(in, ker, bias, out, c, c, h, w); }, reps));
    report("conv3x3 backward input",
           time_ms([&] {
               std::fill(gin.begin(), gin.end(), 0.0);
               kernels::reference::conv3x3_backward_input(g, ker, gin, c, c, h, w);
           }, reps),
           time_ms([&] {
               std::fill(gin.begin(), gin.end(), 0.0);
               kernels::conv3x3_backward_input(g, ker, gin, c, c, h, w);
           }, reps));
    report("conv3x3 backward weight",
           time_ms([&] {
               std::fill(gw.begin(), gw.end(), 0.0);
               kernels::reference::conv3x3_backward_weight(g, in, gw, c, c, h, w);
           }, reps),
           time_ms([&] {
               std::fill(gw.begin(), gw.end(), 0.0);
               kernels::conv3x3_backward_weight(g, in, gw, c, c, h, w);
           }, reps));

    // lagged design products at analysis scale
    const kernels::LaggedDims dims{512, 64, 5};
    std::vector<double> zn(dims.t_len * dims.k), v(dims.n()), corr(dims.features());
    for (double& x : zn) x = rng.next_uniform(-1, 1);
    for (double& x : v) x = rng.next_uniform(-1, 1);
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < 40; ++i) active.push_back((i * 7) % dims.features());
    std::vector<double> wv(active.size(), 0.3), u(dims.n()), gram(active.size() * active.size());

    report("lagged corr",
           time_ms([&] { kernels::reference::lagged_corr(zn, dims, v, corr); }, reps),
           time_ms([&] { kernels::lagged_corr(zn, dims, v, corr); }, reps));
    report("lagged apply_cols",
           time_ms([&] { kernels::reference::lagged_apply_cols(zn, dims, active, wv, u); },
                   reps * 10),
           time_ms([&] { kernels::lagged_apply_cols(zn, dims, active, wv, u); }, reps * 10));
    report("lagged gram",
           time_ms([&] { kernels::reference::lagged_gram(zn, dims, active, gram); }, reps),
           time_ms([&] { kernels::lagged_gram(zn, dims, active, gram); }, reps));

    // whole row battery: serial vs parallel rows
    {
        Tensor z2d({256, 24});
        for (double& x : z2d.mutable_data()) x = rng.next_gauss();
        const double sigma = var::latent_scale(z2d);
        const double parallel_ms = time_ms(
            [&] { var::fit_rows(z2d, sigma, 3, 0.02, {}); }, 1);
        set_num_threads(1);
        const double serial_ms = time_ms([&] { var::fit_rows(z2d, sigma, 3, 0.02, {}); }, 1);
        set_num_threads(threads);
        report("fit_rows (24 rows)", serial_ms, parallel_ms);
    }
    return 0;
}
