#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sparsedyn/cli.hpp"
#include "sparsedyn/error.hpp"
#include "sparsedyn/io.hpp"
#include "sparsedyn/lars.hpp"
#include "sparsedyn/rng.hpp"
#include "sparsedyn/synth.hpp"
#include "sparsedyn/training.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace sparsedyn;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

// stdout capture for in-process CLI calls
struct CoutCapture {
    std::ostringstream buffer;
    std::streambuf* old;
    CoutCapture() : old(std::cout.rdbuf(buffer.rdbuf())) {}
    ~CoutCapture() { std::cout.rdbuf(old); }
    std::string str() const { return buffer.str(); }
};

const std::string kGenConfig =
    "h = 16\nw = 16\nn_sources = 4\nt_len = 30\nn_series = 2\np_true = 1\n"
    "density = 0.2\nnoise_std = 0.01\nbackground_floor = 0.05\nseed = 7\n";

} // namespace

TEST_CASE("dtb1 round-trips tensors bit-exactly, including scalars") {
    CounterRng rng(120);
    const fs::path dir = temp_dir("sparsedyn_io_a");
    for (auto shape : std::vector<std::vector<std::size_t>>{{5}, {3, 4}, {2, 3, 4}, {}}) {
        Tensor t = shape.empty() ? Tensor::scalar(3.25) : random_tensor(rng, shape);
        const std::string path = (dir / "t.dtb1").string();
        io::write_dtb1(path, t);
        Tensor back = io::read_dtb1(path);
        CHECK(back.shape() == t.shape());
        CHECK(max_abs_diff(back.data(), t.data()) == 0.0);
    }
}

TEST_CASE("dtb1 rejects corruption") {
    const fs::path dir = temp_dir("sparsedyn_io_b");
    const fs::path path = dir / "bad.dtb1";
    write_text(path, "XXXXgarbage");
    CHECK_THROWS_AS(io::read_dtb1(path.string()), FormatError);
    io::write_dtb1(path.string(), Tensor({4}, {1, 2, 3, 4}));
    // truncate the payload
    fs::resize_file(path, fs::file_size(path) - 8);
    CHECK_THROWS_AS(io::read_dtb1(path.string()), FormatError);
}

TEST_CASE("container round trip, duplicate rejection, byte-identical rewrite") {
    CounterRng rng(121);
    const fs::path dir = temp_dir("sparsedyn_io_c");
    std::vector<std::pair<std::string, Tensor>> entries = {
        {"zz", random_tensor(rng, {3, 3})},
        {"alpha", random_tensor(rng, {7})},
        {"mid.key", Tensor::scalar(1.5)},
    };
    const std::string path = (dir / "c.sdck").string();
    io::write_container(path, entries);
    auto back = io::read_container(path);
    REQUIRE(back.size() == 3);
    CHECK(back[0].first == "alpha"); // sorted on write
    const std::string first = file_bytes(path);
    io::write_container(path, back);
    CHECK(file_bytes(path) == first);

    entries.emplace_back("alpha", Tensor::scalar(0.0));
    CHECK_THROWS_AS(io::write_container((dir / "d.sdck").string(), entries), FormatError);
}

TEST_CASE("config parsing and error reporting") {
    const fs::path dir = temp_dir("sparsedyn_io_d");
    const fs::path path = dir / "cfg";
    write_text(path, "# comment\n a = 1.5 \nname = hello\n\nb=2\n");
    io::ConfigFile cfg = io::ConfigFile::parse(path.string());
    CHECK(cfg.get_double("a") == 1.5);
    CHECK(cfg.get("name") == "hello");
    CHECK(cfg.get_size("b") == 2);
    CHECK_THROWS_WITH_AS(cfg.get("missing"), doctest::Contains("missing"), ConfigError);
    CHECK_THROWS_WITH_AS(cfg.restrict_keys({"a", "b"}), doctest::Contains("name"), ConfigError);

    write_text(path, "a = 1\nbroken line\n");
    CHECK_THROWS_WITH_AS(io::ConfigFile::parse(path.string()), doctest::Contains("line 2"),
                         ConfigError);
    write_text(path, "a = 1\na = 2\n");
    CHECK_THROWS_AS(io::ConfigFile::parse(path.string()), ConfigError);
    write_text(path, "a = xyz\n");
    CHECK_THROWS_AS(io::ConfigFile::parse(path.string()).get_double("a"), ConfigError);
}

TEST_CASE("checkpoint save/load round trip reproduces metrics bit-exactly") {
    // tiny end-to-end: train, save, load, re-save, re-evaluate
    synth::SynthConfig scfg;
    scfg.h = 16;
    scfg.w = 16;
    scfg.n_sources = 4;
    scfg.t_len = 16;
    scfg.n_series = 2;
    scfg.p_true = 1;
    scfg.density = 0.2;
    scfg.noise_std = 0.01;
    scfg.seed = 3;
    synth::Dataset ds = synth::generate_dataset(scfg);
    std::vector<train::SeriesData> dataset;
    for (std::size_t i = 0; i < ds.frames_f.size(); ++i)
        dataset.push_back({"f" + std::to_string(i), "f", ds.frames_f[i]});
    for (std::size_t i = 0; i < ds.frames_n.size(); ++i)
        dataset.push_back({"n" + std::to_string(i), "n", ds.frames_n[i]});

    train::TrainConfig cfg;
    cfg.regime = train::Regime::Embedded;
    cfg.lambda = 0.01;
    cfg.p = 2;
    cfg.window = 8;
    cfg.epochs = 1;
    cfg.seed = 11;
    cfg.channel_width = 4;
    train::Checkpoint ckpt = train::train(cfg, dataset);

    const fs::path dir = temp_dir("sparsedyn_io_e");
    const std::string path = (dir / "ckpt.sdck").string();
    io::save_checkpoint(path, ckpt);
    train::Checkpoint back = io::load_checkpoint(path);

    CHECK(back.series_ids == ckpt.series_ids);
    CHECK(back.series_conditions == ckpt.series_conditions);
    CHECK(back.config.lambda == cfg.lambda);
    CHECK(back.config.seed == cfg.seed);
    CHECK(back.history.size() == ckpt.history.size());

    // byte-identical re-save
    const std::string bytes = file_bytes(path);
    io::save_checkpoint(path, back);
    CHECK(file_bytes(path) == bytes);

    // loaded model + coefficients reproduce the recorded final metrics
    train::EvalResult eval = train::evaluate(back.model, back.mean, dataset, back.config);
    CHECK(eval.l_rec == ckpt.history.back().l_rec);
    CHECK(eval.r_var == ckpt.history.back().r_var);
}

TEST_CASE("cli gen writes the documented layout and is seed-reproducible") {
    const fs::path dir = temp_dir("sparsedyn_cli_a");
    const fs::path cfg_path = dir / "gen.cfg";
    write_text(cfg_path, kGenConfig);
    const fs::path out1 = dir / "out1";
    const fs::path out2 = dir / "out2";
    {
        CoutCapture cap;
        CHECK(cli::run({"gen", "--config", cfg_path.string(), "--out", out1.string()}) == 0);
        CHECK(cli::run({"gen", "--config", cfg_path.string(), "--out", out2.string()}) == 0);
    }
    auto manifest = io::read_manifest((out1 / "manifest").string());
    CHECK(manifest.size() == 4); // N * 2 conditions
    for (const auto& e : manifest) {
        CHECK(fs::exists(out1 / e.rel_path));
        CHECK(e.t_len == 30);
    }
    CHECK(fs::exists(out1 / "ground_truth.dtb1"));
    // identical bytes across the two runs
    for (const auto& e : manifest)
        CHECK(file_bytes(out1 / e.rel_path) == file_bytes(out2 / e.rel_path));
    CHECK(file_bytes(out1 / "manifest") == file_bytes(out2 / "manifest"));
    CHECK(file_bytes(out1 / "ground_truth.dtb1") == file_bytes(out2 / "ground_truth.dtb1"));
}

TEST_CASE("cli gen reports missing and unknown keys by name") {
    const fs::path dir = temp_dir("sparsedyn_cli_b");
    const fs::path cfg_path = dir / "gen.cfg";
    // missing seed
    write_text(cfg_path,
               "h = 16\nw = 16\nn_sources = 4\nt_len = 30\nn_series = 2\np_true = 1\n"
               "density = 0.2\nnoise_std = 0.01\nbackground_floor = 0.05\n");
    CHECK(cli::run({"gen", "--config", cfg_path.string(), "--out", (dir / "o").string()}) == 2);
    // unknown key
    write_text(cfg_path, kGenConfig + "bogus_key = 1\n");
    CHECK(cli::run({"gen", "--config", cfg_path.string(), "--out", (dir / "o").string()}) == 2);
}

TEST_CASE("cli lasso reproduces soft thresholding on the orthonormal fixture") {
    const fs::path dir = temp_dir("sparsedyn_cli_c");
    const std::size_t n = 4;
    Tensor x = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) x.mutable_data()[i * n + i] = 2.0; // sqrt(4)
    Tensor y({n}, {1.0, -0.6, 0.1, 2.0});
    io::write_dtb1((dir / "x.dtb1").string(), x);
    io::write_dtb1((dir / "y.dtb1").string(), y);
    std::string knots;
    {
        CoutCapture cap;
        CHECK(cli::run({"lasso", "--x", (dir / "x.dtb1").string(), "--y",
                        (dir / "y.dtb1").string(), "--lambda", "0.2", "--eps-gamma", "1e-14",
                        "--beta-out", (dir / "beta.dtb1").string()}) == 0);
        knots = cap.str();
    }
    CHECK(knots.rfind("lambda,event,feature", 0) == 0);
    Tensor beta = io::read_dtb1((dir / "beta.dtb1").string());
    for (std::size_t j = 0; j < n; ++j) {
        const double cj = 2.0 * y.at(j) / double(n);
        CHECK(std::fabs(beta.at(j) - lars::soft_threshold(cj, 0.2)) < 1e-9);
    }
}

TEST_CASE("cli exit codes for bad inputs") {
    const fs::path dir = temp_dir("sparsedyn_cli_d");
    // unreadable data dir -> 3 (format), bad flag -> 2 (usage)
    write_text(dir / "train.cfg",
               "regime = sequential\nlambda = 0.01\np = 2\nwindow = 8\nlr = 0.001\n"
               "epochs = 1\nseed = 1\nchannel_width = 4\neps_gamma = 1e-8\n"
               "data_dir = " + (dir / "nope").string() + "\nout_dir = " +
                   (dir / "out").string() + "\n");
    CHECK(cli::run({"train", "--config", (dir / "train.cfg").string()}) == 3);
    CHECK(cli::run({"definitely-not-a-subcommand"}) == 2);
    CHECK(cli::run({"lasso", "--x", "missing.dtb1", "--y", "missing.dtb1", "--lambda", "0.1"}) ==
          3);
}

TEST_CASE("cli train + test + map pipeline on a tiny dataset") {
    const fs::path dir = temp_dir("sparsedyn_cli_e");
    write_text(dir / "gen.cfg",
               "h = 16\nw = 16\nn_sources = 4\nt_len = 24\nn_series = 4\np_true = 1\n"
               "density = 0.2\nnoise_std = 0.01\nbackground_floor = 0.05\nseed = 21\n");
    {
        CoutCapture cap;
        REQUIRE(cli::run({"gen", "--config", (dir / "gen.cfg").string(), "--out",
                          (dir / "data").string()}) == 0);
    }
    write_text(dir / "train.cfg",
               "regime = embedded\nlambda = 0.01\np = 2\nwindow = 8\nlr = 0.001\n"
               "epochs = 1\nseed = 5\nchannel_width = 4\neps_gamma = 1e-8\n"
               "data_dir = " + (dir / "data").string() + "\nout_dir = " +
                   (dir / "run").string() + "\n");
    {
        CoutCapture cap;
        REQUIRE(cli::run({"train", "--config", (dir / "train.cfg").string()}) == 0);
    }
    REQUIRE(fs::exists(dir / "run" / "checkpoint.sdck"));
    {
        std::ifstream metrics(dir / "run" / "metrics.csv");
        std::string line;
        std::getline(metrics, line);
        CHECK(line == "epoch,l_rec,r_var");
        std::size_t rows = 0;
        while (std::getline(metrics, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 1); // one epoch
    }
    std::string test_csv;
    {
        CoutCapture cap;
        REQUIRE(cli::run({"test", "--checkpoint", (dir / "run" / "checkpoint.sdck").string(),
                          "--data", (dir / "data").string()}) == 0);
        test_csv = cap.str();
    }
    CHECK(test_csv.rfind("comparison,group_g,group_h,u,p,reject_bonferroni", 0) == 0);
    std::size_t rows = 0;
    for (char ch : test_csv) rows += ch == '\n';
    CHECK(rows == 7); // header + the six canonical comparisons
    {
        CoutCapture cap;
        REQUIRE(cli::run({"map", "--checkpoint", (dir / "run" / "checkpoint.sdck").string(),
                          "--data", (dir / "data").string(), "--out",
                          (dir / "maps").string()}) == 0);
    }
    CHECK(fs::exists(dir / "maps" / "omega_f.pgm"));
    CHECK(fs::exists(dir / "maps" / "omega_n.pgm"));
    CHECK(fs::exists(dir / "maps" / "omega_diff.pgm"));
    CHECK(fs::exists(dir / "maps" / "omega_f.pgm.dtb1"));
    CHECK(fs::exists(dir / "maps" / "influence.csv"));
}

TEST_CASE("train reruns with one seed produce identical metrics files") {
    const fs::path dir = temp_dir("sparsedyn_cli_f");
    write_text(dir / "gen.cfg", kGenConfig);
    {
        CoutCapture cap;
        REQUIRE(cli::run({"gen", "--config", (dir / "gen.cfg").string(), "--out",
                          (dir / "data").string()}) == 0);
    }
    const std::string base_cfg =
        "regime = sequential\nlambda = 0.01\np = 2\nwindow = 8\nlr = 0.001\n"
        "epochs = 1\nseed = 9\nchannel_width = 4\neps_gamma = 1e-8\n"
        "data_dir = " + (dir / "data").string() + "\n";
    write_text(dir / "t1.cfg", base_cfg + "out_dir = " + (dir / "r1").string() + "\n");
    write_text(dir / "t2.cfg", base_cfg + "out_dir = " + (dir / "r2").string() + "\n");
    {
        CoutCapture cap;
        REQUIRE(cli::run({"train", "--config", (dir / "t1.cfg").string()}) == 0);
        REQUIRE(cli::run({"train", "--config", (dir / "t2.cfg").string()}) == 0);
    }
    CHECK(file_bytes(dir / "r1" / "metrics.csv") == file_bytes(dir / "r2" / "metrics.csv"));
    CHECK(file_bytes(dir / "r1" / "checkpoint.sdck") ==
          file_bytes(dir / "r2" / "checkpoint.sdck"));
}
