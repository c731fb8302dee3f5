#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropnet/model.hpp"
#include "dropnet/rng.hpp"
#include "dropnet/stats.hpp"

namespace dropnet {

// Pruning metrics. Units with the lowest importance scores are dropped;
// *_layer variants apply the drop budget within each layer independently.
enum class Metric {
    Minimum,
    Maximum,
    Random,
    MinimumLayer,
    MaximumLayer,
    RandomLayer,
    Apoz,
    ApozLayer,
};

inline bool metric_is_layerwise(Metric m) {
    return m == Metric::MinimumLayer || m == Metric::MaximumLayer ||
           m == Metric::RandomLayer || m == Metric::ApozLayer;
}

inline std::string metric_name(Metric m) {
    switch (m) {
        case Metric::Minimum: return "minimum";
        case Metric::Maximum: return "maximum";
        case Metric::Random: return "random";
        case Metric::MinimumLayer: return "minimum_layer";
        case Metric::MaximumLayer: return "maximum_layer";
        case Metric::RandomLayer: return "random_layer";
        case Metric::Apoz: return "apoz";
        case Metric::ApozLayer: return "apoz_layer";
    }
    return "?";
}

inline Metric metric_from_name(const std::string& s) {
    for (Metric m : {Metric::Minimum, Metric::Maximum, Metric::Random, Metric::MinimumLayer,
                     Metric::MaximumLayer, Metric::RandomLayer, Metric::Apoz, Metric::ApozLayer})
        if (metric_name(m) == s) return m;
    throw std::invalid_argument("unknown metric: " + s);
}

struct UnitScore {
    std::size_t global_id;
    std::size_t layer_id;
    std::size_t unit_id;
    double score;
};

struct ImportanceReport {
    Metric metric;
    std::vector<UnitScore> units;  // live units only
};

// Importance scores for all live units. minimum -> E, maximum -> -E,
// random -> 0, apoz -> -(zero fraction) so the most-often-zero unit ranks
// lowest and is dropped first.
inline ImportanceReport score(const ActivationStats& stats, const Mask& mask, Metric metric) {
    if (stats.samples == 0) throw std::invalid_argument("score: no samples in stats");
    if (stats.units.size() != mask.total())
        throw std::invalid_argument("score: stats/mask size mismatch");
    ImportanceReport report;
    report.metric = metric;
    for (std::size_t g = 0; g < stats.units.size(); ++g) {
        if (!mask.is_live(g)) continue;
        const auto& u = stats.units[g];
        double s = 0.0;
        switch (metric) {
            case Metric::Minimum:
            case Metric::MinimumLayer:
                s = stats.expected_abs(g);
                break;
            case Metric::Maximum:
            case Metric::MaximumLayer:
                s = -stats.expected_abs(g);
                break;
            case Metric::Random:
            case Metric::RandomLayer:
                s = 0.0;
                break;
            case Metric::Apoz:
            case Metric::ApozLayer:
                s = -stats.zero_fraction(g);
                break;
        }
        report.units.push_back({g, u.layer_id, u.unit_id, s});
    }
    return report;
}

namespace detail {

// Lowest-scored units first, ties in rng-permuted order. Skips any unit
// that would empty its layer given the drops already chosen.
inline std::vector<std::size_t> pick_lowest(const std::vector<UnitScore>& units, std::size_t k,
                                            const Mask& mask, Rng& rng,
                                            std::vector<std::size_t>& live_left) {
    std::vector<std::size_t> order(units.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> tiebreak(units.size());
    for (auto& t : tiebreak) t = rng.uniform();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (units[a].score != units[b].score) return units[a].score < units[b].score;
        return tiebreak[a] < tiebreak[b];
    });
    std::vector<std::size_t> chosen;
    for (std::size_t i : order) {
        if (chosen.size() == k) break;
        const std::size_t layer = units[i].layer_id;
        if (live_left[layer] <= 1) continue;  // never empty a layer
        --live_left[layer];
        chosen.push_back(units[i].global_id);
    }
    (void)mask;
    return chosen;
}

}  // namespace detail

// Chooses the units to drop this cycle. Global scope: k = max(1,
// floor(p * live)) lowest-scored units overall. Layer-wise: the same
// formula per layer. Ties are broken randomly; no layer is ever emptied.
inline std::set<std::size_t> select_drops(const ImportanceReport& report, double p,
                                          const Mask& mask, Rng& rng,
                                          std::size_t drop_count_override = 0) {
    if (p <= 0.0 || p > 1.0) throw std::invalid_argument("select_drops: p must be in (0,1]");
    if (report.units.empty()) throw std::runtime_error("select_drops: no droppable units remain");

    std::vector<std::size_t> live_left(mask.points.size());
    for (std::size_t l = 0; l < mask.points.size(); ++l) live_left[l] = mask.live_in(l);

    std::set<std::size_t> drops;
    if (metric_is_layerwise(report.metric) && drop_count_override == 0) {
        for (std::size_t l = 0; l < mask.points.size(); ++l) {
            std::vector<UnitScore> layer_units;
            for (const auto& u : report.units)
                if (u.layer_id == l) layer_units.push_back(u);
            if (layer_units.empty()) continue;
            std::size_t k = std::max<std::size_t>(
                1, static_cast<std::size_t>(p * static_cast<double>(layer_units.size())));
            k = std::min(k, layer_units.size() > 0 ? layer_units.size() - 1 : 0);
            if (k == 0) continue;
            for (auto g : detail::pick_lowest(layer_units, k, mask, rng, live_left))
                drops.insert(g);
        }
    } else {
        std::size_t k =
            drop_count_override > 0
                ? drop_count_override
                : std::max<std::size_t>(
                      1, static_cast<std::size_t>(p * static_cast<double>(report.units.size())));
        for (auto g : detail::pick_lowest(report.units, k, mask, rng, live_left))
            drops.insert(g);
    }
    if (drops.empty()) throw std::runtime_error("select_drops: no droppable units remain");
    return drops;
}

// Zeroes the selected mask entries. Dropping an already-dead unit is an error.
inline void apply_drops(Mask& mask, const std::set<std::size_t>& drops) {
    for (auto g : drops) {
        if (!mask.is_live(g))
            throw std::invalid_argument("apply_drops: unit " + std::to_string(g) +
                                        " is already dropped");
        mask.set(g, 0);
    }
}

}  // namespace dropnet
