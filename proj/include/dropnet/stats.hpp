#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace dropnet {

// Accumulators for one maskable unit: an FC node (r = 1) or a conv filter
// (r = spatial positions of its feature map). The derived importance value
// is E = sum_abs / (t * r), the mean absolute post-activation value over
// all samples and constituent positions.
struct UnitStats {
    std::size_t layer_id = 0;  // mask point index
    std::size_t unit_id = 0;   // index within the mask point
    double sum_abs = 0.0;
    std::size_t zero_count = 0;
    std::size_t constituents = 1;  // r
};

struct ActivationStats {
    std::vector<UnitStats> units;  // global unit order (mask point major)
    std::size_t samples = 0;       // t

    double expected_abs(std::size_t global_unit) const {
        const auto& u = units.at(global_unit);
        if (samples == 0) throw std::runtime_error("activation stats: no samples");
        return u.sum_abs / (static_cast<double>(samples) * static_cast<double>(u.constituents));
    }

    double zero_fraction(std::size_t global_unit) const {
        const auto& u = units.at(global_unit);
        if (samples == 0) throw std::runtime_error("activation stats: no samples");
        return static_cast<double>(u.zero_count) /
               (static_cast<double>(samples) * static_cast<double>(u.constituents));
    }

    // Additive merge of shard accumulators from disjoint sample subsets.
    void merge(const ActivationStats& other) {
        if (units.size() != other.units.size())
            throw std::invalid_argument("activation stats: merge size mismatch");
        for (std::size_t i = 0; i < units.size(); ++i) {
            units[i].sum_abs += other.units[i].sum_abs;
            units[i].zero_count += other.units[i].zero_count;
        }
        samples += other.samples;
    }
};

}  // namespace dropnet
