#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropnet/autodiff.hpp"
#include "dropnet/data.hpp"
#include "dropnet/rng.hpp"
#include "dropnet/stats.hpp"
#include "dropnet/tensor.hpp"

namespace dropnet {

enum class LayerKind { FC, Conv, MaxPool, Flatten, Output };

struct LayerSpec {
    LayerKind kind;
    std::size_t width = 0;  // nodes (FC/Output) or filters (Conv)
    bool has_mask = false;
};

struct ModelSpec {
    std::vector<std::size_t> input_shape;  // C, H, W
    std::vector<LayerSpec> layers;
    std::size_t classes = 10;
    std::string name;

    void validate() const {
        if (input_shape.size() != 3) throw std::invalid_argument("model spec: input shape must be CxHxW");
        if (layers.empty() || layers.back().kind != LayerKind::Output)
            throw std::invalid_argument("model spec: last layer must be the output layer");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.kind == LayerKind::Output && i + 1 != layers.size())
                throw std::invalid_argument("model spec: output layer must be last");
            if (l.has_mask && l.kind != LayerKind::FC && l.kind != LayerKind::Conv)
                throw std::invalid_argument("model spec: mask only on FC/Conv layers");
            if (l.kind == LayerKind::Output && l.has_mask)
                throw std::invalid_argument("model spec: output layer cannot be masked");
            if ((l.kind == LayerKind::FC || l.kind == LayerKind::Conv) && l.width == 0)
                throw std::invalid_argument("model spec: zero-width layer");
        }
        if (layers.back().width != classes)
            throw std::invalid_argument("model spec: output width must equal class count");
    }

    // Model A family: masked FC hidden layers, then the output layer.
    static ModelSpec mlp(std::vector<std::size_t> input, std::vector<std::size_t> hidden,
                         std::size_t classes) {
        ModelSpec s;
        s.input_shape = std::move(input);
        s.classes = classes;
        s.name = "mlp";
        for (auto w : hidden) s.layers.push_back({LayerKind::FC, w, true});
        s.layers.push_back({LayerKind::Output, classes, false});
        return s;
    }

    // Model B/C family: each conv layer is masked and followed by 2x2 max
    // pooling while the spatial dims are even; then flatten and output.
    static ModelSpec cnn(std::vector<std::size_t> input, std::vector<std::size_t> filters,
                         std::size_t classes) {
        ModelSpec s;
        s.input_shape = std::move(input);
        s.classes = classes;
        s.name = "cnn";
        std::size_t h = s.input_shape[1], w = s.input_shape[2];
        for (auto f : filters) {
            s.layers.push_back({LayerKind::Conv, f, true});
            if (h % 2 == 0 && w % 2 == 0 && h > 1 && w > 1) {
                s.layers.push_back({LayerKind::MaxPool, 0, false});
                h /= 2;
                w /= 2;
            }
        }
        s.layers.push_back({LayerKind::Flatten, 0, false});
        s.layers.push_back({LayerKind::Output, classes, false});
        return s;
    }
};

// Binary mask over maskable units, one vector per mask point. A unit that
// is dropped never comes back within a pruning run.
struct Mask {
    std::vector<std::vector<std::uint8_t>> points;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& p : points) n += p.size();
        return n;
    }

    std::size_t live() const {
        std::size_t n = 0;
        for (const auto& p : points)
            for (auto v : p) n += v;
        return n;
    }

    std::size_t live_in(std::size_t point) const {
        std::size_t n = 0;
        for (auto v : points[point]) n += v;
        return n;
    }

    double fraction_remaining() const {
        return static_cast<double>(live()) / static_cast<double>(total());
    }

    std::size_t global_index(std::size_t point, std::size_t unit) const {
        std::size_t base = 0;
        for (std::size_t i = 0; i < point; ++i) base += points[i].size();
        return base + unit;
    }

    std::pair<std::size_t, std::size_t> locate(std::size_t global) const {
        for (std::size_t p = 0; p < points.size(); ++p) {
            if (global < points[p].size()) return {p, global};
            global -= points[p].size();
        }
        throw std::out_of_range("mask: global unit index out of range");
    }

    bool is_live(std::size_t global) const {
        auto [p, u] = locate(global);
        return points[p][u] != 0;
    }

    void set(std::size_t global, std::uint8_t v) {
        auto [p, u] = locate(global);
        points[p][u] = v;
    }
};

template <class T>
using ParamSet = std::map<std::string, Tensor<T>>;

inline void throw_param_mismatch(const std::string& key) {
    throw std::invalid_argument("param snapshot mismatch at " + key);
}

// A model instance: parameter nodes, the pruning mask, and the initial
// parameter snapshot theta_0 used by the revert step of the pruning loop.
template <class T>
class MaskedModel {
public:
    struct Layer {
        LayerSpec spec;
        NodePtr<T> W, b;   // null for MaxPool/Flatten
        int mask_point = -1;
    };

    static MaskedModel build(const ModelSpec& spec, Rng& rng) {
        spec.validate();
        MaskedModel m;
        m.spec_ = spec;
        std::size_t c = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
        bool flat = false;
        std::size_t flat_dim = c * h * w;
        for (const auto& ls : spec.layers) {
            Layer layer;
            layer.spec = ls;
            switch (ls.kind) {
                case LayerKind::FC:
                case LayerKind::Output: {
                    if (!flat) {
                        flat_dim = c * h * w;
                        flat = true;
                    }
                    layer.W = leaf(glorot(rng, {flat_dim, ls.width}, flat_dim, ls.width));
                    layer.b = leaf(Tensor<T>({ls.width}));
                    flat_dim = ls.width;
                    break;
                }
                case LayerKind::Conv: {
                    if (flat) throw std::invalid_argument("model spec: conv after flatten");
                    const std::size_t fan_in = c * 9, fan_out = ls.width * 9;
                    layer.W = leaf(glorot(rng, {ls.width, c, 3, 3}, fan_in, fan_out));
                    layer.b = leaf(Tensor<T>({ls.width}));
                    c = ls.width;
                    break;
                }
                case LayerKind::MaxPool:
                    if (flat || h % 2 || w % 2)
                        throw std::invalid_argument("model spec: maxpool needs even spatial dims");
                    h /= 2;
                    w /= 2;
                    break;
                case LayerKind::Flatten:
                    flat_dim = c * h * w;
                    flat = true;
                    break;
            }
            if (ls.has_mask) {
                layer.mask_point = static_cast<int>(m.mask_.points.size());
                m.mask_.points.emplace_back(ls.width, std::uint8_t{1});
            }
            m.layers_.push_back(std::move(layer));
        }
        m.initial_ = m.snapshot();
        return m;
    }

    struct ForwardResult {
        NodePtr<T> logits;
        std::vector<NodePtr<T>> mask_activations;  // post-relu, post-mask, per mask point
    };

    ForwardResult forward_nodes(const Tensor<T>& batch) const {
        if (batch.rank() != 4 || batch.shape[1] != spec_.input_shape[0] ||
            batch.shape[2] != spec_.input_shape[1] || batch.shape[3] != spec_.input_shape[2])
            throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape) +
                                        " does not match model input");
        ForwardResult res;
        NodePtr<T> x = leaf(batch);
        bool flat = false;
        for (const auto& layer : layers_) {
            switch (layer.spec.kind) {
                case LayerKind::FC:
                case LayerKind::Output: {
                    if (!flat) {
                        x = flatten(x);
                        flat = true;
                    }
                    x = add_rowbias(matmul(x, layer.W), layer.b);
                    if (layer.spec.kind == LayerKind::FC) {
                        x = relu(x);
                        if (layer.mask_point >= 0) {
                            x = scale_columns(x, mask_scale(layer.mask_point));
                            res.mask_activations.push_back(x);
                        }
                    }
                    break;
                }
                case LayerKind::Conv: {
                    x = relu(conv2d_same(x, layer.W, layer.b));
                    if (layer.mask_point >= 0) {
                        x = scale_channels(x, mask_scale(layer.mask_point));
                        res.mask_activations.push_back(x);
                    }
                    break;
                }
                case LayerKind::MaxPool:
                    x = maxpool2d(x);
                    break;
                case LayerKind::Flatten:
                    x = flatten(x);
                    flat = true;
                    break;
            }
        }
        res.logits = x;
        return res;
    }

    NodePtr<T> forward(const Tensor<T>& batch) const { return forward_nodes(batch).logits; }

    // Single inference pass over the whole dataset, accumulating per-unit
    // absolute-value sums and zero counts at every mask point.
    ActivationStats collect_stats(const Dataset<T>& data, std::size_t batch_size = 256) const {
        if (data.size() == 0) throw std::invalid_argument("collect_stats: empty dataset");
        ActivationStats stats;
        for (std::size_t p = 0; p < mask_.points.size(); ++p)
            for (std::size_t u = 0; u < mask_.points[p].size(); ++u)
                stats.units.push_back({p, u, 0.0, 0, 1});

        for (std::size_t at = 0; at < data.size(); at += batch_size) {
            std::vector<std::size_t> idx;
            for (std::size_t i = at; i < std::min(at + batch_size, data.size()); ++i)
                idx.push_back(i);
            Tensor<T> images;
            std::vector<int> labels;
            gather(data, idx, images, labels);
            auto res = forward_nodes(images);
            std::size_t base = 0;
            for (std::size_t p = 0; p < res.mask_activations.size(); ++p) {
                const Tensor<T>& act = res.mask_activations[p]->value;
                const std::size_t units = mask_.points[p].size();
                if (act.rank() == 2) {
                    const std::size_t rows = act.shape[0];
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t u = 0; u < units; ++u) {
                            const double v = static_cast<double>(act.data[i * units + u]);
                            auto& us = stats.units[base + u];
                            us.sum_abs += std::abs(v);
                            if (v == 0.0) ++us.zero_count;
                        }
                } else {
                    const std::size_t b = act.shape[0], hw = act.shape[2] * act.shape[3];
                    for (std::size_t u = 0; u < units; ++u) stats.units[base + u].constituents = hw;
                    for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t u = 0; u < units; ++u) {
                            const T* map = act.data.data() + (i * units + u) * hw;
                            auto& us = stats.units[base + u];
                            for (std::size_t k = 0; k < hw; ++k) {
                                const double v = static_cast<double>(map[k]);
                                us.sum_abs += std::abs(v);
                                if (v == 0.0) ++us.zero_count;
                            }
                        }
                }
                base += units;
            }
            stats.samples += idx.size();
        }
        return stats;
    }

    ParamSet<T> snapshot() const {
        ParamSet<T> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (!layers_[i].W) continue;
            const std::string key = "layer" + std::to_string(i);
            out[key + ".W"] = layers_[i].W->value;
            out[key + ".b"] = layers_[i].b->value;
        }
        return out;
    }

    // Restores parameter values only; the mask is untouched.
    void restore(const ParamSet<T>& snap) {
        std::size_t used = 0;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (!layers_[i].W) continue;
            const std::string key = "layer" + std::to_string(i);
            auto wi = snap.find(key + ".W");
            auto bi = snap.find(key + ".b");
            if (wi == snap.end() || bi == snap.end()) throw_param_mismatch(key);
            if (wi->second.shape != layers_[i].W->value.shape ||
                bi->second.shape != layers_[i].b->value.shape)
                throw_param_mismatch(key);
            layers_[i].W->value = wi->second;
            layers_[i].b->value = bi->second;
            used += 2;
        }
        if (used != snap.size()) throw_param_mismatch("(extra entries)");
    }

    void restore_initial() { restore(initial_); }

    // Fresh Glorot draw for the randominit study; theta_0 is left as built.
    // Fan sizes come from the live (unmasked) unit counts: the draw is the
    // initialization of the pruned architecture, not of the full-width net.
    void reinit(Rng& rng) {
        std::size_t h = spec_.input_shape[1], w = spec_.input_shape[2];
        std::size_t live_c = spec_.input_shape[0];
        std::size_t live_flat = live_c * h * w;
        bool flat = false;
        for (auto& layer : layers_) {
            const std::size_t live_out =
                layer.mask_point >= 0
                    ? mask_.live_in(static_cast<std::size_t>(layer.mask_point))
                    : layer.spec.width;
            switch (layer.spec.kind) {
                case LayerKind::FC:
                case LayerKind::Output:
                    if (!flat) {
                        live_flat = live_c * h * w;
                        flat = true;
                    }
                    layer.W->value = glorot(rng, layer.W->value.shape, live_flat, live_out);
                    layer.b->value.fill(T(0));
                    live_flat = live_out;
                    break;
                case LayerKind::Conv:
                    layer.W->value =
                        glorot(rng, layer.W->value.shape, live_c * 9, live_out * 9);
                    layer.b->value.fill(T(0));
                    live_c = live_out;
                    break;
                case LayerKind::MaxPool:
                    h /= 2;
                    w /= 2;
                    break;
                case LayerKind::Flatten:
                    live_flat = live_c * h * w;
                    flat = true;
                    break;
            }
        }
    }

    std::vector<NodePtr<T>> params() const {
        std::vector<NodePtr<T>> out;
        for (const auto& l : layers_)
            if (l.W) {
                out.push_back(l.W);
                out.push_back(l.b);
            }
        return out;
    }

    Mask& mask() { return mask_; }
    const Mask& mask() const { return mask_; }
    const ModelSpec& spec() const { return spec_; }
    const ParamSet<T>& initial_state() const { return initial_; }
    const std::vector<Layer>& layers() const { return layers_; }

private:
    std::vector<T> mask_scale(int point) const {
        const auto& p = mask_.points[static_cast<std::size_t>(point)];
        std::vector<T> s(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) s[i] = static_cast<T>(p[i]);
        return s;
    }

    static Tensor<T> glorot(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                            std::size_t fan_out) {
        Tensor<T> t(std::move(shape));
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
        return t;
    }

    ModelSpec spec_;
    std::vector<Layer> layers_;
    Mask mask_;
    ParamSet<T> initial_;
};

// init_params as a free function: builds and returns just the parameters.
template <class T>
ParamSet<T> init_params(const ModelSpec& spec, Rng& rng) {
    return MaskedModel<T>::build(spec, rng).snapshot();
}

}  // namespace dropnet
