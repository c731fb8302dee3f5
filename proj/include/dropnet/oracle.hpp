#pragma once

#include <limits>
#include <set>
#include <stdexcept>
#include <vector>

#include "dropnet/data.hpp"
#include "dropnet/prune.hpp"

namespace dropnet {

struct OracleConfig {
    PruneConfig base;
    std::size_t eval_budget = 0;  // >0: candidate loss on the first n training samples
};

// Training loss of the current model with one extra unit masked out, no
// retraining. The mask is restored before returning.
template <class T>
double candidate_loss(MaskedModel<T>& model, const Dataset<T>& train, std::size_t unit,
                      std::size_t eval_budget = 0) {
    if (!model.mask().is_live(unit))
        throw std::invalid_argument("oracle: candidate unit is already dropped");
    model.mask().set(unit, 0);
    double loss;
    if (eval_budget > 0 && eval_budget < train.size()) {
        loss = evaluate(model, take(train, eval_budget)).loss;
    } else {
        loss = evaluate(model, train).loss;
    }
    model.mask().set(unit, 1);
    return loss;
}

// Greedy oracle step: evaluate every live candidate and return the unit
// whose removal minimizes training loss. Exact ties are broken randomly.
template <class T>
std::size_t oracle_select(MaskedModel<T>& model, const Dataset<T>& train, Rng& rng,
                          std::size_t eval_budget = 0) {
    std::vector<std::size_t> candidates;
    for (std::size_t g = 0; g < model.mask().total(); ++g) {
        if (!model.mask().is_live(g)) continue;
        auto [layer, unit] = model.mask().locate(g);
        if (model.mask().live_in(layer) <= 1) continue;  // never empty a layer
        candidates.push_back(g);
    }
    if (candidates.empty()) throw std::runtime_error("oracle: no live candidates");

    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> argmins;
    for (std::size_t g : candidates) {
        const double loss = candidate_loss(model, train, g, eval_budget);
        if (loss < best) {
            best = loss;
            argmins.assign(1, g);
        } else if (loss == best) {
            argmins.push_back(g);
        }
    }
    return argmins[argmins.size() == 1 ? 0 : rng.index(argmins.size())];
}

// Algorithm 1 with the greedy oracle as the drop rule, one unit per cycle.
template <class T>
PruneOutcome<T> run_oracle(const ModelSpec& spec, const DatasetTriple<T>& data,
                           const OracleConfig& cfg) {
    const std::size_t budget = cfg.eval_budget;
    DropChooser<T> chooser = [budget](MaskedModel<T>& model, const Dataset<T>& train, Rng& rng) {
        return std::set<std::size_t>{oracle_select(model, train, rng, budget)};
    };
    return run_prune_loop<T>(spec, data, cfg.base, chooser);
}

}  // namespace dropnet
