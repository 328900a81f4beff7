#include "sparsedyn/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "sparsedyn/contribution.hpp"
#include "sparsedyn/error.hpp"
#include "sparsedyn/io.hpp"
#include "sparsedyn/lars.hpp"
#include "sparsedyn/parallel.hpp"
#include "sparsedyn/stats.hpp"
#include "sparsedyn/synth.hpp"
#include "sparsedyn/training.hpp"

namespace fs = std::filesystem;

namespace sparsedyn::cli {

namespace {

void apply_threads(int threads) {
    if (threads > 0) {
        set_num_threads(threads);
        return;
    }
    if (const char* env = std::getenv("SPARSEDYN_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) set_num_threads(n);
    }
}

synth::SynthConfig parse_gen_config(const std::string& path) {
    io::ConfigFile cfg = io::ConfigFile::parse(path);
    const std::vector<std::string> required = {"h",       "w",         "n_sources",
                                               "t_len",   "n_series",  "p_true",
                                               "density", "noise_std", "background_floor",
                                               "seed"};
    const std::vector<std::string> optional = {"innovation_std", "blob_sigma", "coupling_min",
                                               "coupling_max"};
    std::vector<std::string> allowed = required;
    allowed.insert(allowed.end(), optional.begin(), optional.end());
    cfg.restrict_keys(allowed);
    cfg.require(required);
    synth::SynthConfig out;
    out.h = cfg.get_size("h");
    out.w = cfg.get_size("w");
    out.n_sources = cfg.get_size("n_sources");
    out.t_len = cfg.get_size("t_len");
    out.n_series = cfg.get_size("n_series");
    out.p_true = cfg.get_size("p_true");
    out.density = cfg.get_double("density");
    out.noise_std = cfg.get_double("noise_std");
    out.background_floor = cfg.get_double("background_floor");
    out.seed = cfg.get_u64("seed");
    if (cfg.has("innovation_std")) out.innovation_std = cfg.get_double("innovation_std");
    if (cfg.has("blob_sigma")) out.blob_sigma = cfg.get_double("blob_sigma");
    if (cfg.has("coupling_min")) out.coupling_min = cfg.get_double("coupling_min");
    if (cfg.has("coupling_max")) out.coupling_max = cfg.get_double("coupling_max");
    return out;
}

train::TrainConfig parse_train_config(const std::string& path) {
    io::ConfigFile cfg = io::ConfigFile::parse(path);
    const std::vector<std::string> keys = {"regime", "lambda", "p",    "window",
                                           "lr",     "epochs", "seed", "channel_width",
                                           "eps_gamma", "data_dir", "out_dir"};
    cfg.restrict_keys(keys);
    cfg.require(keys);
    train::TrainConfig out;
    out.regime = train::regime_from_string(cfg.get("regime"));
    out.lambda = cfg.get_double("lambda");
    out.p = cfg.get_size("p");
    out.window = cfg.get_size("window");
    out.lr = cfg.get_double("lr");
    out.epochs = cfg.get_size("epochs");
    out.seed = cfg.get_u64("seed");
    out.channel_width = cfg.get_size("channel_width");
    out.eps_gamma = cfg.get_double("eps_gamma");
    out.data_dir = cfg.get("data_dir");
    out.out_dir = cfg.get("out_dir");
    return out;
}

void write_series_files(const std::string& out_dir, const std::string& cond,
                        const std::vector<Tensor>& frames,
                        std::vector<io::ManifestEntry>& manifest) {
    fs::create_directories(fs::path(out_dir) / cond);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::string id = cond + std::to_string(i);
        const std::string rel = cond + "/" + id + ".dtb1";
        io::write_dtb1((fs::path(out_dir) / rel).string(), frames[i]);
        manifest.push_back({cond, id, frames[i].dim(0), frames[i].dim(1), frames[i].dim(2), rel});
    }
}

int cmd_gen(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_override) {
    synth::SynthConfig cfg = parse_gen_config(config_path);
    if (seed_override) cfg.seed = *seed_override;
    cfg.validate();
    synth::Dataset ds = synth::generate_dataset(cfg);
    fs::create_directories(out_dir);
    std::vector<io::ManifestEntry> manifest;
    write_series_files(out_dir, "f", ds.frames_f, manifest);
    write_series_files(out_dir, "n", ds.frames_n, manifest);
    io::write_manifest((fs::path(out_dir) / "manifest").string(), manifest);

    std::vector<std::pair<std::string, Tensor>> truth;
    {
        Tensor pos({ds.truth_f.positions.size(), 2});
        auto pd = pos.mutable_data();
        for (std::size_t i = 0; i < ds.truth_f.positions.size(); ++i) {
            pd[i * 2] = ds.truth_f.positions[i].first;
            pd[i * 2 + 1] = ds.truth_f.positions[i].second;
        }
        truth.emplace_back("positions", std::move(pos));
    }
    for (std::size_t lag = 0; lag < cfg.p_true; ++lag) {
        truth.emplace_back("coupling.f." + std::to_string(lag), ds.truth_f.coupling[lag]);
        truth.emplace_back("coupling.n." + std::to_string(lag), ds.truth_n.coupling[lag]);
    }
    for (std::size_t i = 0; i < ds.truth_f.amplitudes.size(); ++i)
        truth.emplace_back("amplitudes.f" + std::to_string(i), ds.truth_f.amplitudes[i]);
    for (std::size_t i = 0; i < ds.truth_n.amplitudes.size(); ++i)
        truth.emplace_back("amplitudes.n" + std::to_string(i), ds.truth_n.amplitudes[i]);
    truth.emplace_back("differing_mask", ds.differing_mask);
    truth.emplace_back("blob_sigma", Tensor::scalar(cfg.blob_sigma));
    io::write_container((fs::path(out_dir) / "ground_truth.dtb1").string(), std::move(truth));

    std::cout << "wrote " << manifest.size() << " series to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_override,
              const std::string& out_override) {
    train::TrainConfig cfg = parse_train_config(config_path);
    if (seed_override) cfg.seed = *seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    cfg.validate();
    auto dataset = io::load_dataset(cfg.data_dir);
    train::Checkpoint ckpt = train::train(cfg, dataset);
    fs::create_directories(cfg.out_dir);
    io::save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.sdck").string(), ckpt);
    {
        std::ofstream metrics(fs::path(cfg.out_dir) / "metrics.csv");
        metrics << "epoch,l_rec,r_var\n";
        char buf[96];
        for (std::size_t e = 0; e < ckpt.history.size(); ++e) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e + 1, ckpt.history[e].l_rec,
                          ckpt.history[e].r_var);
            metrics << buf;
        }
    }
    std::cout << "checkpoint written to " << cfg.out_dir << "\n";
    return 0;
}

struct LoadedModel {
    train::Checkpoint ckpt;
    std::vector<train::SeriesData> dataset;
    std::vector<var::LatentSeries> latents;
    std::map<std::string, std::size_t> index_of;
};

LoadedModel load_model_with_data(const std::string& checkpoint_path,
                                 const std::string& data_dir) {
    LoadedModel lm;
    lm.ckpt = io::load_checkpoint(checkpoint_path);
    lm.dataset = io::load_dataset(data_dir);
    if (lm.dataset.size() != lm.ckpt.coeffs.size()) {
        throw FormatError("checkpoint holds " + std::to_string(lm.ckpt.coeffs.size()) +
                          " series, data dir holds " + std::to_string(lm.dataset.size()));
    }
    for (std::size_t i = 0; i < lm.dataset.size(); ++i) {
        if (lm.dataset[i].id != lm.ckpt.series_ids[i]) {
            throw FormatError("series order mismatch: checkpoint '" + lm.ckpt.series_ids[i] +
                              "' vs data '" + lm.dataset[i].id + "'");
        }
        lm.index_of[lm.dataset[i].id] = i;
    }
    lm.latents.resize(lm.dataset.size());
    parallel_for(lm.dataset.size(), [&](std::size_t i) {
        const Tensor& frames = lm.dataset[i].frames;
        const std::size_t h = frames.dim(1), w = frames.dim(2);
        Tensor z2d = ae::encode_series(frames, lm.ckpt.mean, lm.ckpt.model);
        var::LatentSeries s;
        s.z = reshape(z2d, {frames.dim(0), h / 8, w / 8});
        s.series_id = lm.dataset[i].id;
        s.sigma_z = var::latent_scale(z2d);
        lm.latents[i] = std::move(s);
    });
    return lm;
}

struct Comparison {
    std::string name;
    stats::GroupSpec groups;
};

// Early/late halves within each condition plus the four cross splits.
std::vector<Comparison> canonical_comparisons(const LoadedModel& lm) {
    std::vector<std::size_t> f_idx, n_idx;
    for (std::size_t i = 0; i < lm.ckpt.series_conditions.size(); ++i) {
        if (lm.ckpt.series_conditions[i] == "f")
            f_idx.push_back(i);
        else if (lm.ckpt.series_conditions[i] == "n")
            n_idx.push_back(i);
    }
    if (f_idx.size() < 4 || n_idx.size() < 4) {
        throw ArgumentError("canonical comparisons need >= 4 series per condition");
    }
    auto half = [](const std::vector<std::size_t>& v, bool second) {
        const std::size_t mid = v.size() / 2;
        return second ? std::vector<std::size_t>(v.begin() + mid, v.end())
                      : std::vector<std::size_t>(v.begin(), v.begin() + mid);
    };
    const auto fe = half(f_idx, false), fl = half(f_idx, true);
    const auto ne = half(n_idx, false), nl = half(n_idx, true);
    return {
        {"f_early_vs_f_late", {fe, fl}}, {"n_early_vs_n_late", {ne, nl}},
        {"f_early_vs_n_early", {fe, ne}}, {"f_late_vs_n_late", {fl, nl}},
        {"f_early_vs_n_late", {fe, nl}}, {"f_late_vs_n_early", {fl, ne}},
    };
}

std::vector<Comparison> parse_groups_file(const std::string& path, const LoadedModel& lm) {
    std::ifstream in(path);
    if (!in) throw ConfigError("groups: cannot open " + path);
    std::vector<Comparison> out;
    std::string line;
    std::size_t line_no = 0;
    auto parse_ids = [&](const std::string& csv) {
        std::vector<std::size_t> idx;
        std::istringstream ss(csv);
        std::string id;
        while (std::getline(ss, id, ',')) {
            auto it = lm.index_of.find(id);
            if (it == lm.index_of.end()) {
                throw ConfigError("groups: unknown series id '" + id + "' at line " +
                                  std::to_string(line_no));
            }
            idx.push_back(it->second);
        }
        return idx;
    };
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        Comparison cmp;
        std::string g_csv, h_csv;
        if (!(ss >> cmp.name >> g_csv >> h_csv)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            throw ConfigError("groups: line " + std::to_string(line_no) +
                              " must be '<name> <g_ids> <h_ids>'");
        }
        cmp.groups.g = parse_ids(g_csv);
        cmp.groups.h = parse_ids(h_csv);
        out.push_back(std::move(cmp));
    }
    if (out.empty()) throw ConfigError("groups: no comparisons in " + path);
    return out;
}

int cmd_test(const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& groups_path, double alpha) {
    LoadedModel lm = load_model_with_data(checkpoint_path, data_dir);
    std::vector<Comparison> cmps =
        groups_path.empty() ? canonical_comparisons(lm) : parse_groups_file(groups_path, lm);
    std::vector<stats::SwapTestResult> results;
    std::vector<double> ps;
    for (const auto& cmp : cmps) {
        results.push_back(stats::swap_test(lm.latents, lm.ckpt.coeffs, cmp.groups));
        ps.push_back(results.back().p_value);
    }
    auto adj = stats::bonferroni(ps, alpha);
    std::cout << "comparison,group_g,group_h,u,p,reject_bonferroni\n";
    char buf[64];
    for (std::size_t i = 0; i < cmps.size(); ++i) {
        auto ids = [&](const std::vector<std::size_t>& v) {
            std::string s;
            for (std::size_t j = 0; j < v.size(); ++j) {
                if (j) s += '+';
                s += lm.ckpt.series_ids[v[j]];
            }
            return s;
        };
        std::snprintf(buf, sizeof buf, "%.6g,%.6g", results[i].u_statistic, results[i].p_value);
        std::cout << cmps[i].name << ',' << ids(cmps[i].groups.g) << ',' << ids(cmps[i].groups.h)
                  << ',' << buf << ',' << (adj[i].reject ? 1 : 0) << "\n";
    }
    return 0;
}

int cmd_map(const std::string& checkpoint_path, const std::string& data_dir,
            const std::string& out_dir, double gamma_viz) {
    LoadedModel lm = load_model_with_data(checkpoint_path, data_dir);
    fs::create_directories(out_dir);

    std::map<std::string, std::vector<std::size_t>> by_cond;
    for (std::size_t i = 0; i < lm.ckpt.series_conditions.size(); ++i)
        by_cond[lm.ckpt.series_conditions[i]].push_back(i);

    std::ofstream inf_csv(fs::path(out_dir) / "influence.csv");
    inf_csv << "series_id,latent_index,value\n";

    std::map<std::string, Tensor> cond_mean;
    for (const auto& [cond, idx] : by_cond) {
        Tensor acc;
        for (std::size_t i : idx) {
            contrib::InfluenceVector c = contrib::influence_vector(lm.ckpt.coeffs[i]);
            char buf[48];
            for (std::size_t j = 0; j < c.c.numel(); ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", c.c.at(j));
                inf_csv << lm.ckpt.series_ids[i] << ',' << j << ',' << buf << "\n";
            }
            contrib::ContributionMap m =
                contrib::contribution_map(c, gamma_viz, lm.ckpt.model, lm.ckpt.mean);
            if (!acc.defined())
                acc = m.omega;
            else
                acc = add(acc, m.omega);
        }
        acc = scale(acc, 1.0 / static_cast<double>(idx.size()));
        cond_mean[cond] = acc;
        contrib::ContributionMap mean_map{acc, gamma_viz, cond};
        contrib::export_map(mean_map, (fs::path(out_dir) / ("omega_" + cond + ".pgm")).string());
    }
    if (cond_mean.count("f") && cond_mean.count("n")) {
        contrib::ContributionMap diff{sub(cond_mean["f"], cond_mean["n"]), gamma_viz, "f-n"};
        contrib::export_map(diff, (fs::path(out_dir) / "omega_diff.pgm").string());
    }
    std::cout << "maps written to " << out_dir << "\n";
    return 0;
}

int cmd_lasso(const std::string& x_path, const std::string& y_path, double lambda,
              double eps_gamma, const std::string& beta_out) {
    Tensor x = io::read_dtb1(x_path);
    Tensor y = io::read_dtb1(y_path);
    if (x.ndim() != 2) throw FormatError("lasso: X must be a 2-d DTB1 tensor");
    lars::DesignOperator op = lars::make_dense_operator(x);
    lars::SolverConfig cfg;
    if (eps_gamma > 0.0) cfg.eps_gamma = eps_gamma;
    lars::LassoSolution sol = lars::lasso_path(op, y, lambda, cfg);
    std::cout << "lambda,event,feature\n";
    char buf[48];
    for (const auto& knot : sol.knots) {
        std::snprintf(buf, sizeof buf, "%.17g", knot.lambda);
        std::cout << buf << ','
                  << (knot.event == lars::LassoKnot::Event::Enter ? "enter" : "leave") << ','
                  << knot.feature << "\n";
    }
    if (!sol.converged) std::cerr << "warning: step limit reached before the target penalty\n";
    if (!beta_out.empty()) {
        auto dense = sol.beta_dense();
        io::write_dtb1(beta_out, Tensor({dense.size()}, dense));
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, std::optional<std::uint64_t> seed_override,
               const std::string& out_override) {
    train::TrainConfig base = parse_train_config(config_path);
    if (seed_override) base.seed = *seed_override;
    if (!out_override.empty()) base.out_dir = out_override;
    base.validate();
    auto dataset = io::load_dataset(base.data_dir);

    const std::vector<double> lambda_grid = {0.005, 0.01, 0.02};
    const std::vector<train::Regime> regimes = {train::Regime::Sequential,
                                                train::Regime::Embedded,
                                                train::Regime::EndToEnd};
    // metric[lambda][regime]
    std::vector<std::vector<train::EpochMetrics>> table(
        lambda_grid.size(), std::vector<train::EpochMetrics>(regimes.size()));
    for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
        for (std::size_t ri = 0; ri < regimes.size(); ++ri) {
            train::TrainConfig cfg = base;
            cfg.lambda = lambda_grid[li];
            cfg.regime = regimes[ri];
            train::Checkpoint ckpt = train::train(cfg, dataset);
            table[li][ri] = ckpt.history.back();
        }
    }
    std::ostringstream csv;
    csv << "lambda,metric,sequential,embedded,end_to_end\n";
    char buf[48];
    for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
        for (const char* metric : {"l_rec", "r_var"}) {
            csv << lambda_grid[li] << ',' << metric;
            for (std::size_t ri = 0; ri < regimes.size(); ++ri) {
                const auto& m = table[li][ri];
                std::snprintf(buf, sizeof buf, ",%.17g",
                              std::string(metric) == "l_rec" ? m.l_rec : m.r_var);
                csv << buf;
            }
            csv << "\n";
        }
    }
    std::cout << csv.str();
    if (!base.out_dir.empty()) {
        fs::create_directories(base.out_dir);
        std::ofstream f(fs::path(base.out_dir) / "ablation.csv");
        f << csv.str();
    }
    return 0;
}

} // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"sparse latent dynamics toolkit"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "worker threads (default: all)");

    std::string config_path, out_dir, checkpoint_path, data_dir, groups_path;
    std::string x_path, y_path, beta_out;
    double lambda = 0.0, gamma_viz = 1.0, alpha = 0.05, eps_gamma = 0.0;
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override the config seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic two-condition dataset");
    gen->add_option("--config", config_path, "generator config file")->required();
    gen->add_option("--out", out_dir, "output directory")->required();
    add_seed(gen);

    CLI::App* train_cmd = app.add_subcommand("train", "train a model per the config");
    train_cmd->add_option("--config", config_path, "training config file")->required();
    train_cmd->add_option("--out", out_dir, "override out_dir");
    add_seed(train_cmd);

    CLI::App* test_cmd = app.add_subcommand("test", "coefficient-swap group tests");
    test_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    test_cmd->add_option("--data", data_dir, "dataset directory")->required();
    test_cmd->add_option("--groups", groups_path, "comparison spec file");
    test_cmd->add_option("--alpha", alpha, "significance level");

    CLI::App* map_cmd = app.add_subcommand("map", "contribution maps and influence vectors");
    map_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    map_cmd->add_option("--data", data_dir, "dataset directory")->required();
    map_cmd->add_option("--out", out_dir, "output directory")->required();
    map_cmd->add_option("--gamma-viz", gamma_viz, "visualization gain");

    CLI::App* lasso_cmd = app.add_subcommand("lasso", "run the path solver on dense inputs");
    lasso_cmd->add_option("--x", x_path, "design matrix DTB1 [n,m]")->required();
    lasso_cmd->add_option("--y", y_path, "target DTB1 [n]")->required();
    lasso_cmd->add_option("--lambda", lambda, "target penalty")->required();
    lasso_cmd->add_option("--eps-gamma", eps_gamma, "step-size stabilizer");
    lasso_cmd->add_option("--beta-out", beta_out, "write the solution as DTB1");

    CLI::App* ablate_cmd = app.add_subcommand("ablate",
                                              "all three regimes over the penalty grid");
    ablate_cmd->add_option("--config", config_path, "training config file")->required();
    ablate_cmd->add_option("--out", out_dir, "override out_dir");
    add_seed(ablate_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        apply_threads(threads);
        std::optional<std::uint64_t> seed_opt;
        if (seed_set) seed_opt = seed;
        if (gen->parsed()) return cmd_gen(config_path, out_dir, seed_opt);
        if (train_cmd->parsed()) return cmd_train(config_path, seed_opt, out_dir);
        if (test_cmd->parsed()) return cmd_test(checkpoint_path, data_dir, groups_path, alpha);
        if (map_cmd->parsed()) return cmd_map(checkpoint_path, data_dir, out_dir, gamma_viz);
        if (lasso_cmd->parsed()) return cmd_lasso(x_path, y_path, lambda, eps_gamma, beta_out);
        if (ablate_cmd->parsed()) return cmd_ablate(config_path, seed_opt, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const SolverError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("sparsedyn");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace sparsedyn::cli
