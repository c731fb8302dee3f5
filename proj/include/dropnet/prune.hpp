#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <vector>

#include "dropnet/data.hpp"
#include "dropnet/metrics.hpp"
#include "dropnet/model.hpp"
#include "dropnet/train.hpp"

namespace dropnet {

enum class ReinitMode { OriginalInit, RandomInit };

struct PruneConfig {
    Metric metric = Metric::MinimumLayer;
    double p = 0.2;               // fraction dropped per cycle
    double kappa = 0.9;           // stop once val accuracy <= kappa * baseline
    double min_fraction = 0.0;    // >0: prune to a target fraction instead of the kappa rule
    int max_epochs = 100;
    int patience = 5;
    double lr = 0.1;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    ReinitMode reinit = ReinitMode::OriginalInit;
    std::size_t drop_per_cycle = 0;  // >0: fixed unit count per cycle (oracle comparisons)
    int max_cycles = 0;              // >0: cap on pruning cycles (one-shot studies)

    void validate() const {
        if (p <= 0.0 || p > 1.0) throw std::invalid_argument("config: p must be in (0,1]");
        if (kappa <= 0.0 || kappa > 1.0) throw std::invalid_argument("config: kappa must be in (0,1]");
        if (patience < 1) throw std::invalid_argument("config: patience must be >= 1");
        if (min_fraction < 0.0 || min_fraction >= 1.0)
            throw std::invalid_argument("config: min_fraction must be in [0,1)");
        if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    }
};

struct CycleRecord {
    int cycle = 0;
    double fraction_remaining = 1.0;
    int epochs = 0;
    double train_acc = 0.0, val_acc = 0.0, test_acc = 0.0;
    double train_loss = 0.0, val_loss = 0.0;
    std::vector<std::size_t> live_per_layer;
};

template <class T>
struct PruneOutcome {
    std::vector<CycleRecord> records;
    MaskedModel<T> model;
    bool diverged = false;     // run aborted on non-finite loss
    std::string error;         // diagnostic when diverged
};

// Chooses the set of units to drop for the current cycle, given the model
// in its trained state for that cycle.
template <class T>
using DropChooser =
    std::function<std::set<std::size_t>(MaskedModel<T>&, const Dataset<T>&, Rng&)>;

namespace detail {

template <class T>
CycleRecord measure_cycle(MaskedModel<T>& model, const DatasetTriple<T>& data, int cycle,
                          int epochs) {
    CycleRecord rec;
    rec.cycle = cycle;
    rec.epochs = epochs;
    rec.fraction_remaining = model.mask().fraction_remaining();
    for (std::size_t l = 0; l < model.mask().points.size(); ++l)
        rec.live_per_layer.push_back(model.mask().live_in(l));
    auto tr = evaluate(model, data.train);
    auto va = evaluate(model, data.val);
    auto te = evaluate(model, data.test);
    rec.train_acc = tr.accuracy;
    rec.train_loss = tr.loss;
    rec.val_acc = va.accuracy;
    rec.val_loss = va.loss;
    rec.test_acc = te.accuracy;
    return rec;
}

}  // namespace detail

// The iterative pruning loop: revert to theta_0, apply the mask, train to
// early stop, drop units, repeat until the stop rule fires; then one final
// revert (or fresh reinit) and retrain with the final mask.
template <class T>
PruneOutcome<T> run_prune_loop(const ModelSpec& spec, const DatasetTriple<T>& data,
                               const PruneConfig& cfg, const DropChooser<T>& chooser) {
    cfg.validate();
    Rng root(cfg.seed);
    Rng init_rng = root.fork("init");
    auto model = MaskedModel<T>::build(spec, init_rng);
    std::vector<CycleRecord> records;

    double baseline_val_acc = 0.0;
    int cycle = 0;
    try {
    while (true) {
        model.restore_initial();
        Rng trng = root.fork("train", static_cast<std::uint64_t>(cycle));
        auto tr = train_until_early_stop(model, data.train, data.val, cfg.max_epochs,
                                         cfg.patience, static_cast<T>(cfg.lr), cfg.batch_size,
                                         trng);
        CycleRecord rec = detail::measure_cycle(model, data, cycle, tr.epochs);
        records.push_back(rec);
        if (cycle == 0) baseline_val_acc = rec.val_acc;

        // Step 4: choose and apply the drops for this cycle.
        bool droppable = false;
        for (std::size_t l = 0; l < model.mask().points.size(); ++l)
            if (model.mask().live_in(l) > 1) droppable = true;
        if (!droppable) break;
        Rng srng = root.fork("select", static_cast<std::uint64_t>(cycle));
        auto drops = chooser(model, data.train, srng);
        if (drops.empty()) break;
        apply_drops(model.mask(), drops);

        ++cycle;
        bool stop = false;
        if (cfg.max_cycles > 0 && cycle >= cfg.max_cycles) stop = true;
        if (cfg.min_fraction > 0.0) {
            if (model.mask().fraction_remaining() <= cfg.min_fraction) stop = true;
        } else if (rec.val_acc <= cfg.kappa * baseline_val_acc) {
            stop = true;
        }
        if (!stop) continue;

        // Final run of steps 1-3 with the final mask.
        if (cfg.reinit == ReinitMode::RandomInit) {
            Rng rrng = root.fork("randominit");
            model.reinit(rrng);
        } else {
            model.restore_initial();
        }
        Rng frng = root.fork("train", static_cast<std::uint64_t>(cycle));
        auto ftr = train_until_early_stop(model, data.train, data.val, cfg.max_epochs,
                                          cfg.patience, static_cast<T>(cfg.lr), cfg.batch_size,
                                          frng);
        records.push_back(detail::measure_cycle(model, data, cycle, ftr.epochs));
        break;
    }
    } catch (const DivergenceError& e) {
        PruneOutcome<T> out{std::move(records), std::move(model)};
        out.diverged = true;
        out.error = e.what();
        return out;
    }
    return {std::move(records), std::move(model)};
}

// Metric-driven chooser: inference pass for activation stats, score, select.
template <class T>
DropChooser<T> metric_chooser(const PruneConfig& cfg) {
    return [cfg](MaskedModel<T>& model, const Dataset<T>& train, Rng& rng) {
        auto stats = model.collect_stats(train);
        auto report = score(stats, model.mask(), cfg.metric);
        return select_drops(report, cfg.p, model.mask(), rng, cfg.drop_per_cycle);
    };
}

template <class T>
PruneOutcome<T> run_dropnet(const ModelSpec& spec, const DatasetTriple<T>& data,
                            const PruneConfig& cfg) {
    return run_prune_loop<T>(spec, data, cfg, metric_chooser<T>(cfg));
}

// Single large-p cycle for the one-shot vs iterative comparison.
template <class T>
PruneOutcome<T> one_shot(const ModelSpec& spec, const DatasetTriple<T>& data, PruneConfig cfg) {
    cfg.max_cycles = 1;
    return run_dropnet(spec, data, cfg);
}

}  // namespace dropnet
