#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropnet/data.hpp"
#include "dropnet/metrics.hpp"
#include "dropnet/oracle.hpp"
#include "dropnet/prune.hpp"

namespace dropnet {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One multi-seed pruning experiment: model, dataset, metric list, pruning
// hyperparameters, run count, output directory.
struct ExperimentConfig {
    std::string model = "A";                  // A | B | C
    std::vector<std::size_t> widths;          // hidden widths (A) or filters (B/C)
    std::string dataset = "synthetic";        // mnist | cifar10 | synthetic
    std::string data_dir;                     // for mnist/cifar10
    std::size_t train_subset = 0;             // 0 = full split
    std::size_t val_subset = 0;
    std::size_t test_subset = 0;

    // synthetic generator parameters
    std::size_t blob_classes = 4;
    std::size_t blob_dims = 64;
    std::size_t blob_per_class = 400;
    double blob_sigma = 0.45;
    std::uint64_t data_seed = 12345;

    std::vector<Metric> metrics = {Metric::MinimumLayer};
    PruneConfig prune;   // per-run metric/seed filled in by the runner
    bool oracle = false; // greedy-oracle runs instead of metric runs
    std::size_t oracle_budget = 0;
    int runs = 15;
    std::uint64_t base_seed = 1;
    std::string out_dir = "out";
    int jobs = 1;

    void validate() const {
        if (runs < 1) throw ConfigError("config: runs must be >= 1");
        if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
        if (model != "A" && model != "B" && model != "C")
            throw ConfigError("config: model must be A, B or C");
        if (dataset != "mnist" && dataset != "cifar10" && dataset != "synthetic")
            throw ConfigError("config: unknown dataset " + dataset);
        if (!oracle && metrics.empty()) throw ConfigError("config: empty metric list");
        try {
            prune.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }

    ModelSpec model_spec() const {
        std::vector<std::size_t> input;
        if (dataset == "mnist") input = {1, 28, 28};
        else if (dataset == "cifar10") input = {3, 32, 32};
        else {
            std::size_t side = 1;
            while (side * side < blob_dims) ++side;
            input = {1, side, side};
        }
        const std::size_t classes = dataset == "synthetic" ? blob_classes : 10;
        std::vector<std::size_t> w = widths;
        if (w.empty()) {
            if (model == "A") w = {40, 40};
            else if (model == "B") w = {64, 64};
            else w = {64, 64, 128, 128};
        }
        return model == "A" ? ModelSpec::mlp(input, w, classes)
                            : ModelSpec::cnn(input, w, classes);
    }
};

template <class T>
DatasetTriple<T> load_experiment_data(const ExperimentConfig& cfg) {
    DatasetTriple<T> d;
    std::string dir = cfg.data_dir;
    if (dir.empty())
        if (const char* env = std::getenv("DROPNET_DATA_DIR")) dir = env;
    try {
        if (cfg.dataset == "mnist") d = load_mnist<T>(dir);
        else if (cfg.dataset == "cifar10") d = load_cifar10<T>(dir);
        else
            d = synthetic_blobs<T>(cfg.blob_classes, cfg.blob_dims, cfg.blob_per_class,
                                   cfg.blob_sigma, cfg.data_seed);
    } catch (const std::runtime_error& e) {
        throw DataError(e.what());
    }
    if (cfg.train_subset > 0) d.train = take(d.train, cfg.train_subset);
    if (cfg.val_subset > 0) d.val = take(d.val, cfg.val_subset);
    if (cfg.test_subset > 0) d.test = take(d.test, cfg.test_subset);
    return d;
}

// ---- CSV ---------------------------------------------------------------------

namespace csv {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace csv

struct RunRow {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string metric;
    int cycle = 0;
    double fraction_remaining = 0, train_acc = 0, val_acc = 0, test_acc = 0;
    double train_loss = 0, val_loss = 0;
    int epochs = 0;
    std::vector<std::size_t> live_per_layer;
};

inline std::string run_csv_header(std::size_t layers) {
    std::string h =
        "run_id,seed,metric,cycle,fraction_remaining,epochs,train_acc,val_acc,test_acc,"
        "train_loss,val_loss";
    for (std::size_t l = 0; l < layers; ++l) h += ",live_layer" + std::to_string(l);
    return h;
}

// Atomic write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << content;
        if (!out) throw std::runtime_error("cannot write " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string run_csv_content(const std::string& run_id, std::uint64_t seed,
                                   const std::string& metric,
                                   const std::vector<CycleRecord>& records, bool diverged,
                                   const std::string& error) {
    std::string out;
    const std::size_t layers = records.empty() ? 0 : records[0].live_per_layer.size();
    out += run_csv_header(layers) + "\n";
    for (const auto& r : records) {
        out += run_id + "," + std::to_string(seed) + "," + metric + "," +
               std::to_string(r.cycle) + "," + csv::fmt(r.fraction_remaining) + "," +
               std::to_string(r.epochs) + "," + csv::fmt(r.train_acc) + "," +
               csv::fmt(r.val_acc) + "," + csv::fmt(r.test_acc) + "," +
               csv::fmt(r.train_loss) + "," + csv::fmt(r.val_loss);
        for (auto v : r.live_per_layer) out += "," + std::to_string(v);
        out += "\n";
    }
    if (diverged) out += "# FAILED: " + error + "\n";
    return out;
}

inline std::vector<RunRow> read_run_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
    const auto header = csv::split(line);
    std::vector<RunRow> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto f = csv::split(line);
        if (f.size() != header.size())
            throw std::runtime_error(path.string() + ": ragged row");
        RunRow r;
        r.run_id = f[0];
        r.seed = std::stoull(f[1]);
        r.metric = f[2];
        r.cycle = std::stoi(f[3]);
        r.fraction_remaining = std::stod(f[4]);
        r.epochs = std::stoi(f[5]);
        r.train_acc = std::stod(f[6]);
        r.val_acc = std::stod(f[7]);
        r.test_acc = std::stod(f[8]);
        r.train_loss = std::stod(f[9]);
        r.val_loss = std::stod(f[10]);
        for (std::size_t i = 11; i < f.size(); ++i)
            r.live_per_layer.push_back(std::stoull(f[i]));
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---- experiment runner ----------------------------------------------------------

struct RunResult {
    std::string run_id;
    std::filesystem::path file;
    bool diverged = false;
};

// Executes every (metric x seed) run and writes one CSV per run. Returns the
// written files. Throws DivergenceError after writing all files if any run
// diverged (its partial CSV carries a failure marker row).
template <class T = float>
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto data = load_experiment_data<T>(cfg);
    const auto spec = cfg.model_spec();
    std::filesystem::create_directories(cfg.out_dir);

    struct Job {
        std::string metric;
        std::uint64_t seed;
        std::string run_id;
    };
    std::vector<Job> jobs;
    if (cfg.oracle) {
        for (int r = 0; r < cfg.runs; ++r) {
            const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(r);
            jobs.push_back({"oracle", seed, "oracle-s" + std::to_string(seed)});
        }
    } else {
        for (Metric m : cfg.metrics)
            for (int r = 0; r < cfg.runs; ++r) {
                const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(r);
                jobs.push_back({metric_name(m), seed,
                                metric_name(m) + "-s" + std::to_string(seed)});
            }
    }

    auto execute = [&](const Job& job) {
        PruneConfig pc = cfg.prune;
        pc.seed = job.seed;
        PruneOutcome<T> out = [&] {
            if (cfg.oracle) {
                OracleConfig oc;
                oc.base = pc;
                oc.eval_budget = cfg.oracle_budget;
                return run_oracle(spec, data, oc);
            }
            pc.metric = metric_from_name(job.metric);
            return run_dropnet(spec, data, pc);
        }();
        RunResult res;
        res.run_id = job.run_id;
        res.diverged = out.diverged;
        res.file = std::filesystem::path(cfg.out_dir) / ("run_" + job.run_id + ".csv");
        write_file_atomic(res.file, run_csv_content(job.run_id, job.seed, job.metric,
                                                    out.records, out.diverged, out.error));
        return res;
    };

    std::vector<RunResult> results(jobs.size());
    const std::size_t workers = static_cast<std::size_t>(cfg.jobs);
    std::size_t next = 0;
    while (next < jobs.size()) {
        std::vector<std::future<RunResult>> batch;
        const std::size_t n = std::min(workers, jobs.size() - next);
        for (std::size_t i = 0; i < n; ++i)
            batch.push_back(std::async(std::launch::async, execute, jobs[next + i]));
        for (std::size_t i = 0; i < n; ++i) results[next + i] = batch[i].get();
        next += n;
    }

    for (const auto& r : results)
        if (r.diverged)
            throw DivergenceError("run " + r.run_id + " diverged (partial CSV retained)");
    return results;
}

// ---- aggregation -----------------------------------------------------------------

struct AggregateRow {
    std::string metric;
    int cycle = 0;
    double fraction_remaining = 0;
    double mean_test_acc = 0;
    double ci95 = 0;  // 1.96 * s / sqrt(n); 0 when n == 1
    int n = 0;
};

// Cycle-aligned aggregation: drop counts are deterministic, so cycle k is
// comparable across seeds. Mixing runs with different cycle->fraction maps
// is rejected.
inline std::vector<AggregateRow> aggregate(std::vector<std::filesystem::path> files) {
    if (files.empty()) throw std::invalid_argument("aggregate: no run files");
    std::sort(files.begin(), files.end());
    std::map<std::pair<std::string, int>, std::vector<RunRow>> groups;
    for (const auto& f : files)
        for (auto& row : read_run_csv(f)) {
            auto key = std::make_pair(row.metric, row.cycle);
            auto& g = groups[key];
            if (!g.empty() && g.front().fraction_remaining != row.fraction_remaining)
                throw std::runtime_error(
                    "aggregate: mixed configs (cycle " + std::to_string(row.cycle) +
                    " has different fractions remaining across runs)");
            g.push_back(std::move(row));
        }

    std::vector<AggregateRow> out;
    for (const auto& [key, rows] : groups) {
        AggregateRow a;
        a.metric = key.first;
        a.cycle = key.second;
        a.fraction_remaining = rows.front().fraction_remaining;
        a.n = static_cast<int>(rows.size());
        double sum = 0;
        for (const auto& r : rows) sum += r.test_acc;
        a.mean_test_acc = sum / a.n;
        if (a.n > 1) {
            double ss = 0;
            for (const auto& r : rows)
                ss += (r.test_acc - a.mean_test_acc) * (r.test_acc - a.mean_test_acc);
            const double s = std::sqrt(ss / (a.n - 1));
            a.ci95 = 1.96 * s / std::sqrt(static_cast<double>(a.n));
        }
        out.push_back(a);
    }
    std::sort(out.begin(), out.end(), [](const AggregateRow& x, const AggregateRow& y) {
        return std::tie(x.metric, x.cycle) < std::tie(y.metric, y.cycle);
    });
    return out;
}

inline std::string aggregate_csv_content(const std::vector<AggregateRow>& rows) {
    std::string out = "metric,cycle,fraction_remaining,mean_test_acc,ci95,n\n";
    for (const auto& r : rows)
        out += r.metric + "," + std::to_string(r.cycle) + "," + csv::fmt(r.fraction_remaining) +
               "," + csv::fmt(r.mean_test_acc) + "," + csv::fmt(r.ci95) + "," +
               std::to_string(r.n) + "\n";
    return out;
}

inline std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<AggregateRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = csv::split(line);
        if (f.size() != 6) throw std::runtime_error(path.string() + ": bad aggregate row");
        rows.push_back({f[0], std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]),
                        std::stod(f[4]), std::stoi(f[5])});
    }
    return rows;
}

// Gnuplot-style series per metric: "fraction mean ci95", whitespace delimited.
inline std::map<std::string, std::string> plot_series(const std::vector<AggregateRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("plot_data: empty aggregate");
    std::map<std::string, std::string> series;
    for (const auto& r : rows)
        series[r.metric] += csv::fmt(r.fraction_remaining) + " " + csv::fmt(r.mean_test_acc) +
                            " " + csv::fmt(r.ci95) + "\n";
    return series;
}

inline std::vector<std::filesystem::path> plot_data(const std::vector<AggregateRow>& rows,
                                                    const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> files;
    for (auto& [metric, content] : plot_series(rows)) {
        auto path = out_dir / (metric + ".dat");
        write_file_atomic(path, content);
        files.push_back(path);
    }
    return files;
}

// ---- p sweep -----------------------------------------------------------------------

// One experiment directory per p value, shared seeds across p for pairing.
// p >= 0.5 runs as a single one-shot cycle; smaller p runs iteratively to
// the configured min_fraction.
template <class T = float>
std::vector<std::filesystem::path> sweep_p(ExperimentConfig cfg, const std::vector<double>& ps) {
    if (ps.empty()) throw ConfigError("sweep-p: empty p list");
    const std::string base_dir = cfg.out_dir;
    std::vector<std::filesystem::path> dirs;
    for (double p : ps) {
        ExperimentConfig sub = cfg;
        char buf[32];
        std::snprintf(buf, sizeof buf, "p_%.2f", p);
        sub.out_dir = (std::filesystem::path(base_dir) / buf).string();
        sub.prune.p = p;
        if (p >= 0.5) {
            sub.prune.max_cycles = 1;
            sub.prune.min_fraction = 0.0;
        }
        auto results = run_experiment<T>(sub);
        std::vector<std::filesystem::path> files;
        for (const auto& r : results) files.push_back(r.file);
        write_file_atomic(std::filesystem::path(sub.out_dir) / "aggregate.csv",
                          aggregate_csv_content(aggregate(files)));
        dirs.push_back(sub.out_dir);
    }
    return dirs;
}

}  // namespace dropnet
