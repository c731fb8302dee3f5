// dropnet command-line harness: batch pruning experiments, aggregation and
// plot-ready output. See README.md for the config format and examples.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dropnet/harness.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dropnet;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    auto get = [&j](const char* key, auto& out) {
        if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    get("model", cfg.model);
    get("widths", cfg.widths);
    get("dataset", cfg.dataset);
    get("data_dir", cfg.data_dir);
    get("train_subset", cfg.train_subset);
    get("val_subset", cfg.val_subset);
    get("test_subset", cfg.test_subset);
    get("blob_classes", cfg.blob_classes);
    get("blob_dims", cfg.blob_dims);
    get("blob_per_class", cfg.blob_per_class);
    get("blob_sigma", cfg.blob_sigma);
    get("data_seed", cfg.data_seed);
    get("runs", cfg.runs);
    get("base_seed", cfg.base_seed);
    get("out_dir", cfg.out_dir);
    get("jobs", cfg.jobs);
    get("oracle_budget", cfg.oracle_budget);
    get("p", cfg.prune.p);
    get("kappa", cfg.prune.kappa);
    get("min_fraction", cfg.prune.min_fraction);
    get("max_epochs", cfg.prune.max_epochs);
    get("patience", cfg.prune.patience);
    get("lr", cfg.prune.lr);
    get("batch_size", cfg.prune.batch_size);
    get("drop_per_cycle", cfg.prune.drop_per_cycle);
    if (j.contains("reinit")) {
        const auto mode = j.at("reinit").get<std::string>();
        if (mode == "original") cfg.prune.reinit = ReinitMode::OriginalInit;
        else if (mode == "randominit") cfg.prune.reinit = ReinitMode::RandomInit;
        else throw ConfigError("config: reinit must be 'original' or 'randominit'");
    }
    if (j.contains("metrics")) {
        cfg.metrics.clear();
        for (const auto& m : j.at("metrics"))
            cfg.metrics.push_back(metric_from_name(m.get<std::string>()));
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        in >> j;
        return config_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
}

struct Overrides {
    std::string config_path, metric, out, data_dir;
    std::uint64_t seed = 0;
    double p = -1, kappa = -1, min_fraction = -1;
    int jobs = 0, runs = 0;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed, "base seed override");
        cmd->add_option("--metric", metric, "single metric override");
        cmd->add_option("--p", p, "pruning fraction override");
        cmd->add_option("--kappa", kappa, "maximum loss factor override");
        cmd->add_option("--min-fraction", min_fraction,
                        "prune to this fraction remaining instead of the kappa rule");
        cmd->add_option("--out", out, "output directory override");
        cmd->add_option("--data-dir", data_dir, "dataset directory (or DROPNET_DATA_DIR)");
        cmd->add_option("--jobs", jobs, "parallel runs");
        cmd->add_option("--runs", runs, "run count override");
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg = load_config(config_path);
        if (seed) cfg.base_seed = seed;
        if (!metric.empty()) cfg.metrics = {metric_from_name(metric)};
        if (p >= 0) cfg.prune.p = p;
        if (kappa >= 0) cfg.prune.kappa = kappa;
        if (min_fraction >= 0) cfg.prune.min_fraction = min_fraction;
        if (!out.empty()) cfg.out_dir = out;
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        if (jobs > 0) cfg.jobs = jobs;
        if (runs > 0) cfg.runs = runs;
        return cfg;
    }
};

std::vector<fs::path> collect_run_files(const std::vector<std::string>& inputs) {
    std::vector<fs::path> files;
    for (const auto& in : inputs) {
        fs::path p(in);
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p)) {
                const auto name = e.path().filename().string();
                if (name.starts_with("run_") && name.ends_with(".csv"))
                    files.push_back(e.path());
            }
        } else {
            files.push_back(p);
        }
    }
    return files;
}

int do_run(const Overrides& ov, bool oracle_mode) {
    ExperimentConfig cfg = ov.resolve();
    cfg.oracle = oracle_mode;
    if (oracle_mode) cfg.prune.drop_per_cycle = 1;
    auto results = run_experiment(cfg);
    std::vector<fs::path> files;
    for (const auto& r : results) {
        std::cout << r.file.string() << "\n";
        files.push_back(r.file);
    }
    write_file_atomic(fs::path(cfg.out_dir) / "aggregate.csv",
                      aggregate_csv_content(aggregate(files)));
    std::cout << (fs::path(cfg.out_dir) / "aggregate.csv").string() << "\n";
    return 0;
}

int verify_mnist(const std::string& dir) {
    auto d = load_mnist<float>(dir);
    std::printf("mnist ok: train=%zu val=%zu test=%zu image=%zux%zu\n", d.train.size(),
                d.val.size(), d.test.size(), d.train.images.shape[2], d.train.images.shape[3]);
    return 0;
}

int verify_cifar10(const std::string& dir) {
    auto d = load_cifar10<float>(dir);
    std::printf("cifar10 ok: train=%zu val=%zu test=%zu\n", d.train.size(), d.val.size(),
                d.test.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DropNet: iterative node/filter pruning by expected absolute activation"};
    app.require_subcommand(1);

    Overrides run_ov, oracle_ov, sweep_ov;
    std::vector<double> p_list = {0.2, 0.3, 0.4, 0.5, 0.9};
    std::vector<std::string> agg_inputs;
    std::string agg_out = "aggregate.csv", plot_in, plot_out = "plots";
    std::string verify_dataset = "mnist", verify_dir;

    auto* run_cmd = app.add_subcommand("run", "run a pruning experiment (metric x seed grid)");
    run_ov.add_flags(run_cmd);

    auto* oracle_cmd =
        app.add_subcommand("oracle", "run the greedy one-unit-at-a-time oracle baseline");
    oracle_ov.add_flags(oracle_cmd);

    auto* sweep_cmd = app.add_subcommand("sweep-p", "run the pruning-fraction sweep");
    sweep_ov.add_flags(sweep_cmd);
    sweep_cmd->add_option("--p-list", p_list, "pruning fractions to sweep");

    auto* agg_cmd = app.add_subcommand("aggregate", "aggregate run CSVs (mean + 95% CI)");
    agg_cmd->add_option("inputs", agg_inputs, "run CSV files or directories")->required();
    agg_cmd->add_option("--out", agg_out, "output CSV path");

    auto* plot_cmd = app.add_subcommand("plot-data", "emit per-metric gnuplot series");
    plot_cmd->add_option("--in", plot_in, "aggregate CSV")->required();
    plot_cmd->add_option("--out", plot_out, "output directory");

    auto* verify_cmd = app.add_subcommand("verify-data", "validate local dataset files");
    verify_cmd->add_option("--dataset", verify_dataset, "mnist | cifar10");
    verify_cmd->add_option("--data-dir", verify_dir, "dataset directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    try {
        if (run_cmd->parsed()) return do_run(run_ov, false);
        if (oracle_cmd->parsed()) return do_run(oracle_ov, true);
        if (sweep_cmd->parsed()) {
            auto dirs = sweep_p(sweep_ov.resolve(), p_list);
            for (const auto& d : dirs) std::cout << d.string() << "\n";
            return 0;
        }
        if (agg_cmd->parsed()) {
            auto rows = aggregate(collect_run_files(agg_inputs));
            write_file_atomic(agg_out, aggregate_csv_content(rows));
            std::cout << agg_out << "\n";
            return 0;
        }
        if (plot_cmd->parsed()) {
            auto files = plot_data(read_aggregate_csv(plot_in), plot_out);
            for (const auto& f : files) std::cout << f.string() << "\n";
            return 0;
        }
        if (verify_cmd->parsed()) {
            std::string dir = verify_dir;
            if (dir.empty())
                if (const char* env = std::getenv("DROPNET_DATA_DIR")) dir = env;
            if (verify_dataset == "mnist") return verify_mnist(dir);
            if (verify_dataset == "cifar10") return verify_cifar10(dir);
            throw ConfigError("verify-data: unknown dataset " + verify_dataset);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        // Dataset parse failures from verify-data land here.
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
