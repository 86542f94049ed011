#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qsr/config.hpp"
#include "qsr/csv.hpp"
#include "qsr/data.hpp"
#include "qsr/objective.hpp"
#include "qsr/search.hpp"

namespace fs = std::filesystem;
using namespace qsr;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string space_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string strategy;
    std::vector<double> etas;
};

RunConfig load_run_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) {
        ConfigFile f = ConfigFile::parse_file(opts.config_path);
        cfg.load(f);
        f.finish();
    }
    if (!opts.space_path.empty()) {
        ConfigFile f = ConfigFile::parse_file(opts.space_path);
        cfg.load(f);
        f.finish();
    }
    if (opts.seed_set) {
        cfg.search.seed = opts.seed;
        cfg.train.seed = opts.seed;
    }
    if (!opts.strategy.empty()) cfg.search.strategy = parse_strategy(opts.strategy);
    if (opts.etas.size() == 1) cfg.search.eta = opts.etas[0];
    cfg.validate();
    return cfg;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

struct DataBundle {
    SrDataset split_alpha, split_w, train, val;
};

DataBundle build_data(const RunConfig& cfg) {
    DataBundle d;
    if (!cfg.image_dir.empty()) {
        SrDataset all = load_png_dir(cfg.image_dir, cfg.space.scale);
        const std::size_t n_val = std::min<std::size_t>(
            std::max<std::size_t>(1, all.size() / 8), all.size() - 1);
        for (std::size_t i = 0; i < all.size(); ++i)
            (i < all.size() - n_val ? d.train : d.val).samples.push_back(all.samples[i]);
    } else {
        d.train = make_synthetic_dataset(cfg.n_train, cfg.hr_size, cfg.space.scale,
                                         cfg.search.seed);
        d.val = make_synthetic_dataset(cfg.n_val, cfg.hr_size, cfg.space.scale,
                                       cfg.search.seed + 7777);
    }
    auto [a, b] = split_halves(d.train);
    d.split_alpha = std::move(a);
    d.split_w = std::move(b);
    return d;
}

int cmd_search(const CommonOpts& opts) {
    RunConfig cfg = load_run_config(opts);
    ensure_dir(opts.out_dir);
    DataBundle data = build_data(cfg);

    Rng rng(Rng(cfg.search.seed).fork(7).next_u64());
    Supernet net = Supernet::build(cfg.space, cfg.search.strategy, rng);
    net.san_scaling = cfg.search.san_scaling;

    std::vector<EpochStats> live;
    try {
        SearchResult res = search(net, data.split_alpha, data.split_w, cfg.search, &live);
        res.genotype.save(opts.out_dir + "/genotype.json");
        write_csv_file(opts.out_dir + "/history.csv", history_table(res.history));
        const CostReport cost =
            cost_report(res.genotype, cfg.search.bitops_image, cfg.search.bitops_image);
        std::printf("search done: %zu layers, total_bitops=%.6g (%.4g GBitOps)\n",
                    res.genotype.layers.size(), cost.total_bitops, cost.total_bitops / 1e9);
        for (const auto& l : res.genotype.layers)
            std::printf("  %s.%d: %s @ %d bits\n", l.block.c_str(), l.index, l.op.c_str(), l.bits);
        return 0;
    } catch (const NumericError&) {
        // leave a diagnostic trail before aborting
        write_csv_file(opts.out_dir + "/history_abort.csv", history_table(live));
        throw;
    }
}

int cmd_retrain(const CommonOpts& opts, const std::string& genotype_path) {
    RunConfig cfg = load_run_config(opts);
    ensure_dir(opts.out_dir);
    Genotype genotype = Genotype::load(genotype_path);
    DataBundle data = build_data(cfg);

    Rng rng(Rng(cfg.train.seed).fork(8).next_u64());
    FixedNet net = FixedNet::instantiate(genotype, rng);
    RetrainResult res = retrain(net, data.train, data.val, cfg.train);
    net.save_weights(opts.out_dir + "/weights.bin");

    CsvTable metrics;
    metrics.header = {"epoch", "train_l1"};
    for (std::size_t i = 0; i < res.epoch_l1.size(); ++i)
        metrics.rows.push_back({std::to_string(i), csv_double(res.epoch_l1[i])});
    write_csv_file(opts.out_dir + "/train_metrics.csv", metrics);

    std::printf("retrain done: val_psnr=%.4f dB (bicubic baseline %.4f dB)\n", res.psnr,
                bicubic_baseline_psnr(data.val));
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& genotype_path,
             const std::string& weights_path) {
    RunConfig cfg = load_run_config(opts);
    Genotype genotype = Genotype::load(genotype_path);
    DataBundle data = build_data(cfg);

    Rng rng(1);
    FixedNet net = FixedNet::instantiate(genotype, rng);
    net.load_weights(weights_path);
    const double model = eval_psnr(net, data.val);
    const double baseline = bicubic_baseline_psnr(data.val);
    std::printf("set,psnr_db\nmodel,%.4f\nbicubic,%.4f\n", model, baseline);
    return 0;
}

int cmd_cost(const CommonOpts& opts, const std::string& genotype_path, const std::string& preset,
             int bits, int image, const std::string& out_csv) {
    CostReport rep;
    if (!preset.empty()) {
        if (preset != "espcn") throw ConfigError("unknown preset '" + preset + "'");
        rep = cost_report_layers(espcn_preset(4), image, image, bits);
    } else if (!genotype_path.empty()) {
        if (!opts.config_path.empty() || !opts.space_path.empty()) load_run_config(opts);
        rep = cost_report(Genotype::load(genotype_path), image, image);
    } else {
        throw ConfigError("cost: provide --genotype or --preset");
    }
    if (!out_csv.empty()) {
        std::ofstream f(out_csv);
        if (!f) throw IoError("cannot write " + out_csv);
        f << rep.to_csv();
    } else {
        std::fputs(rep.to_csv().c_str(), stdout);
    }
    std::printf("total_flops,%.10g\ntotal_bitops,%.10g\ntotal_gbitops,%.6g\n", rep.total_flops,
                rep.total_bitops, rep.total_bitops / 1e9);
    return 0;
}

int cmd_sweep(const CommonOpts& opts) {
    RunConfig cfg = load_run_config(opts);
    ensure_dir(opts.out_dir);
    std::vector<double> etas = opts.etas;
    if (etas.empty()) etas = {0.0, 5e-5, 1e-4, 1e-3};
    DataBundle data = build_data(cfg);

    auto rows = pareto_sweep(cfg.space, cfg.search, cfg.train, etas, data.split_alpha,
                             data.split_w, data.train, data.val);
    std::vector<std::string> paths;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::string p;
        if (!rows[i].failed) {
            p = opts.out_dir + "/genotype_eta" + std::to_string(i) + ".json";
            rows[i].genotype.save(p);
        }
        paths.push_back(p);
    }
    write_csv_file(opts.out_dir + "/sweep.csv", sweep_table(rows, paths));
    for (const auto& r : rows) {
        if (r.failed)
            std::printf("eta=%g FAILED: %s\n", r.eta, r.error.c_str());
        else
            std::printf("eta=%g bitops=%.6g psnr=%.4f%s\n", r.eta, r.bitops, r.psnr,
                        r.on_front ? " [pareto]" : "");
    }
    return 0;
}

int cmd_bench_timing(const CommonOpts& opts, int iterations, int batch, int patch,
                     const std::string& out_csv) {
    RunConfig cfg = load_run_config(opts);
    auto rows = timing_bench(
        cfg.space, {MixStrategy::Independent, MixStrategy::Shared, MixStrategy::San},
        {{8}, {4, 8}, {2, 4, 8}}, iterations, batch, patch,
        cfg.search.seed);
    if (!out_csv.empty()) write_csv_file(out_csv, timing_table(rows));
    auto seconds_of = [&rows](const std::string& s, int nb) {
        for (const auto& r : rows)
            if (r.strategy == s && r.n_bits == nb) return r.seconds;
        return 0.0;
    };
    std::fputs(csv_to_string(timing_table(rows)).c_str(), stdout);
    for (int nb = 1; nb <= 3; ++nb) {
        const double ind = seconds_of("independent", nb);
        const double sh = seconds_of("shared", nb);
        const double san = seconds_of("san", nb);
        std::printf("|B|=%d ratios: san/independent=%.3f shared/independent=%.3f san/shared=%.3f\n",
                    nb, san / ind, sh / ind, san / sh);
    }
    return 0;
}

int cmd_gen_data(const CommonOpts& opts, int count, int size, int scale) {
    ensure_dir(opts.out_dir + "/hr");
    ensure_dir(opts.out_dir + "/lr");
    const std::uint64_t seed = opts.seed_set ? opts.seed : 1;
    SrDataset data = make_synthetic_dataset(count, size, scale, seed);
    char name[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::snprintf(name, sizeof(name), "/img_%04zu.png", i);
        write_png_rgb8(opts.out_dir + "/hr" + name, data.samples[i].hr);
        write_png_rgb8(opts.out_dir + "/lr" + name, data.samples[i].lr);
    }
    std::printf("wrote %zu HR/LR pairs to %s (seed %llu)\n", data.size(), opts.out_dir.c_str(),
                static_cast<unsigned long long>(seed));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qsr: quantization-aware architecture search for efficient super-resolution"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string genotype_path, weights_path, preset, out_csv;
    int bits = 8, image = 32, iterations = 60, batch = 4, patch = 16;
    int count = 32, size = 64, scale = 2;

    auto add_common = [&](CLI::App* cmd, bool needs_out) {
        cmd->add_option("--config", opts.config_path, "config file (key=value sections)");
        cmd->add_option("--space", opts.space_path, "extra space config file");
        cmd->add_option("--seed", opts.seed, "seed override")->each([&](const std::string&) {
            opts.seed_set = true;
        });
        cmd->add_option("--strategy", opts.strategy, "independent|shared|san");
        cmd->add_option("--eta", opts.etas, "hardware penalty (repeatable for sweep)");
        auto* o = cmd->add_option("--out", opts.out_dir, "output directory");
        if (needs_out) o->required();
    };

    CLI::App* c_search = app.add_subcommand("search", "run the architecture/bit-width search");
    add_common(c_search, true);

    CLI::App* c_retrain = app.add_subcommand("retrain", "train a discretized genotype from scratch");
    add_common(c_retrain, true);
    c_retrain->add_option("--genotype", genotype_path, "genotype json")->required();

    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a trained network (PSNR table)");
    add_common(c_eval, false);
    c_eval->add_option("--genotype", genotype_path, "genotype json")->required();
    c_eval->add_option("--weights", weights_path, "weights file")->required();

    CLI::App* c_cost = app.add_subcommand("cost", "FLOPs/BitOps report for a genotype or preset");
    add_common(c_cost, false);
    c_cost->add_option("--genotype", genotype_path, "genotype json");
    c_cost->add_option("--preset", preset, "named preset (espcn)");
    c_cost->add_option("--bits", bits, "uniform bits for presets");
    c_cost->add_option("--image", image, "LR image size");
    c_cost->add_option("--csv", out_csv, "write report CSV here");

    CLI::App* c_sweep = app.add_subcommand("sweep", "search+retrain over an eta grid, Pareto CSV");
    add_common(c_sweep, true);

    CLI::App* c_bench = app.add_subcommand("bench-timing", "strategy timing comparison");
    add_common(c_bench, false);
    c_bench->add_option("--iters", iterations, "iterations per combo");
    c_bench->add_option("--batch", batch, "batch size");
    c_bench->add_option("--patch", patch, "LR patch size");
    c_bench->add_option("--csv", out_csv, "write timing CSV here");

    CLI::App* c_gen = app.add_subcommand("gen-data", "write a deterministic synthetic dataset");
    add_common(c_gen, true);
    c_gen->add_option("--count", count, "number of images");
    c_gen->add_option("--size", size, "HR image size");
    c_gen->add_option("--scale", scale, "SR factor");

    try {
        app.parse(argc, argv);
        if (*c_search) return cmd_search(opts);
        if (*c_retrain) return cmd_retrain(opts, genotype_path);
        if (*c_eval) return cmd_eval(opts, genotype_path, weights_path);
        if (*c_cost) return cmd_cost(opts, genotype_path, preset, bits, image, out_csv);
        if (*c_sweep) return cmd_sweep(opts);
        if (*c_bench) return cmd_bench_timing(opts, iterations, batch, patch, out_csv);
        if (*c_gen) return cmd_gen_data(opts, count, size, scale);
        return 1;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 2;
    }
}
