#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "dropnet/tensor.hpp"

namespace dropnet {

// Tape-based reverse mode. Each forward pass builds a fresh graph of
// Node objects; backward() walks it once in reverse topological order.
// Parameters are long-lived leaf nodes whose .grad fields receive the
// accumulated gradients.
template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily by backward()
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // adds into parents' grads

    explicit Node(Tensor<T> v) : value(std::move(v)) {}
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
NodePtr<T> leaf(Tensor<T> v) {
    return std::make_shared<Node<T>>(std::move(v));
}

// ---- matmul -------------------------------------------------------------

template <class T>
void matmul_raw(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out,
                bool accumulate = false) {
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    if (!accumulate) out.fill(T(0));
    const T* pa = a.data.data();
    const T* pb = b.data.data();
    T* po = out.data.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = pa[i * k + kk];
            if (aik == T(0)) continue;
            const T* brow = pb + kk * n;
            T* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
}

// a: [M x K], b: [K x N] -> [M x N]
template <class T>
NodePtr<T> matmul(const NodePtr<T>& a, const NodePtr<T>& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 ||
        a->value.shape[1] != b->value.shape[0])
        throw std::invalid_argument("matmul: shape mismatch " +
                                    shape_str(a->value.shape) + " x " +
                                    shape_str(b->value.shape));
    Tensor<T> out({a->value.shape[0], b->value.shape[1]});
    matmul_raw(a->value, b->value, out);
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->parents = {a, b};
    node->backprop = [](Node<T>& self) {
        auto& a = *self.parents[0];
        auto& b = *self.parents[1];
        const std::size_t m = a.value.shape[0], k = a.value.shape[1],
                          n = b.value.shape[1];
        // dA += dOut * B^T
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
                T acc = 0;
                const T* grow = self.grad.data.data() + i * n;
                const T* brow = b.value.data.data() + kk * n;
                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                a.grad.data[i * k + kk] += acc;
            }
        // dB += A^T * dOut
        for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t i = 0; i < m; ++i) {
                const T aik = a.value.data[i * k + kk];
                if (aik == T(0)) continue;
                const T* grow = self.grad.data.data() + i * n;
                T* brow = b.grad.data.data() + kk * n;
                for (std::size_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
            }
    };
    return node;
}

// ---- bias add over rows: x [B x N] + b [N] ------------------------------

template <class T>
NodePtr<T> add_rowbias(const NodePtr<T>& x, const NodePtr<T>& b) {
    if (x->value.rank() != 2 || b->value.size() != x->value.shape[1])
        throw std::invalid_argument("add_rowbias: shape mismatch");
    Tensor<T> out = x->value;
    const std::size_t rows = out.shape[0], cols = out.shape[1];
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out.data[i * cols + j] += b->value.data[j];
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->parents = {x, b};
    node->backprop = [rows, cols](Node<T>& self) {
        auto& x = *self.parents[0];
        auto& b = *self.parents[1];
        for (std::size_t i = 0; i < rows * cols; ++i) x.grad.data[i] += self.grad.data[i];
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                b.grad.data[j] += self.grad.data[i * cols + j];
    };
    return node;
}

// ---- relu ----------------------------------------------------------------

// Subgradient at exactly 0 is 0.
template <class T>
NodePtr<T> relu(const NodePtr<T>& x) {
    Tensor<T> out = x->value;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->parents = {x};
    node->backprop = [](Node<T>& self) {
        auto& x = *self.parents[0];
        for (std::size_t i = 0; i < x.value.size(); ++i)
            if (x.value.data[i] > T(0)) x.grad.data[i] += self.grad.data[i];
    };
    return node;
}

// ---- mask scaling ---------------------------------------------------------

// Multiply column j of x [B x N] by scale[j]. Used for FC node masks.
template <class T>
NodePtr<T> scale_columns(const NodePtr<T>& x, const std::vector<T>& scale) {
    if (x->value.rank() != 2 || scale.size() != x->value.shape[1])
        throw std::invalid_argument("scale_columns: length mismatch");
    Tensor<T> out = x->value;
    const std::size_t rows = out.shape[0], cols = out.shape[1];
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out.data[i * cols + j] *= scale[j];
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->parents = {x};
    node->backprop = [scale, rows, cols](Node<T>& self) {
        auto& x = *self.parents[0];
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                x.grad.data[i * cols + j] += self.grad.data[i * cols + j] * scale[j];
    };
    return node;
}

// Multiply channel c of x [B x C x H x W] by scale[c]. Used for filter masks.
template <class T>
NodePtr<T> scale_channels(const NodePtr<T>& x, const std::vector<T>& scale) {
    if (x->value.rank() != 4 || scale.size() != x->value.shape[1])
        throw std::invalid_argument("scale_channels: length mismatch");
    Tensor<T> out = x->value;
    const std::size_t b = out.shape[0], c = out.shape[1],
                      hw = out.shape[2] * out.shape[3];
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            T* p = out.data.data() + (i * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) p[k] *= scale[ch];
        }
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->parents = {x};
    node->backprop = [scale, b, c, hw](Node<T>& self) {
        auto& x = *self.parents[0];
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T* g = self.grad.data.data() + (i * c + ch) * hw;
                T* xg = x.grad.data.data() + (i * c + ch) * hw;
                for (std::size_t k = 0; k < hw; ++k) xg[k] += g[k] * scale[ch];
            }
    };
    return node;
}

// ---- conv2d, 3x3 kernels, stride 1, 'same' zero padding -------------------

// input [B x C x H x W], kernels [F x C x 3 x 3], bias [F] -> [B x F x H x W]
template <class T>
NodePtr<T> conv2d_same(const NodePtr<T>& input, const NodePtr<T>& kernels,
                       const NodePtr<T>& bias) {
    const auto& xs = input->value.shape;
    const auto& ks = kernels->value.shape;
    if (xs.size() != 4 || ks.size() != 4 || ks[2] != 3 || ks[3] != 3)
        throw std::invalid_argument("conv2d_same: expects BxCxHxW input and Fx Cx3x3 kernels");
    if (ks[1] != xs[1]) throw std::invalid_argument("conv2d_same: channel mismatch");
    if (bias->value.size() != ks[0]) throw std::invalid_argument("conv2d_same: bias length mismatch");

    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3], F = ks[0];
    Tensor<T> out({B, F, H, W});
    const T* xp = input->value.data.data();
    const T* kp = kernels->value.data.data();
    const T* bp = bias->value.data.data();
    T* op = out.data.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t f = 0; f < F; ++f) {
            T* omap = op + (b * F + f) * H * W;
            for (std::size_t i = 0; i < H * W; ++i) omap[i] = bp[f];
            for (std::size_t c = 0; c < C; ++c) {
                const T* xmap = xp + (b * C + c) * H * W;
                const T* k9 = kp + (f * C + c) * 9;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        T acc = 0;
                        for (int dy = -1; dy <= 1; ++dy) {
                            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
                            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (int dx = -1; dx <= 1; ++dx) {
                                const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
                                if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
                                acc += xmap[yy * W + xx] * k9[(dy + 1) * 3 + (dx + 1)];
                            }
                        }
                        omap[y * W + x] += acc;
                    }
            }
        }
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->parents = {input, kernels, bias};
    node->backprop = [B, C, H, W, F](Node<T>& self) {
        auto& input = *self.parents[0];
        auto& kernels = *self.parents[1];
        auto& bias = *self.parents[2];
        const T* gp = self.grad.data.data();
        const T* xp = input.value.data.data();
        const T* kp = kernels.value.data.data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t f = 0; f < F; ++f) {
                const T* gmap = gp + (b * F + f) * H * W;
                T bacc = 0;
                for (std::size_t i = 0; i < H * W; ++i) bacc += gmap[i];
                bias.grad.data[f] += bacc;
                for (std::size_t c = 0; c < C; ++c) {
                    const T* xmap = xp + (b * C + c) * H * W;
                    const T* k9 = kp + (f * C + c) * 9;
                    T* xg = input.grad.data.data() + (b * C + c) * H * W;
                    T* kg = kernels.grad.data.data() + (f * C + c) * 9;
                    for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t x = 0; x < W; ++x) {
                            const T g = gmap[y * W + x];
                            if (g == T(0)) continue;
                            for (int dy = -1; dy <= 1; ++dy) {
                                const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
                                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (int dx = -1; dx <= 1; ++dx) {
                                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
                                    if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
                                    const std::size_t ki = (dy + 1) * 3 + (dx + 1);
                                    xg[yy * W + xx] += g * k9[ki];
                                    kg[ki] += g * xmap[yy * W + xx];
                                }
                            }
                        }
                }
            }
    };
    return node;
}

// ---- 2x2 max pooling, stride 2 --------------------------------------------

// Gradient routes to the argmax; ties go to the first element in window order.
template <class T>
NodePtr<T> maxpool2d(const NodePtr<T>& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw std::invalid_argument("maxpool2d: expects BxCxHxW");
    if (s[2] % 2 != 0 || s[3] % 2 != 0)
        throw std::invalid_argument("maxpool2d: odd spatial dims " + shape_str(s));
    const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
    const std::size_t OH = H / 2, OW = W / 2;
    Tensor<T> out({B, C, OH, OW});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
    const T* xp = x->value.data.data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* xmap = xp + bc * H * W;
        T* omap = out.data.data() + bc * OH * OW;
        std::uint32_t* amap = argmax->data() + bc * OH * OW;
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
                const std::size_t base = (2 * oy) * W + 2 * ox;
                const std::size_t idx[4] = {base, base + 1, base + W, base + W + 1};
                std::size_t best = idx[0];
                for (int i = 1; i < 4; ++i)
                    if (xmap[idx[i]] > xmap[best]) best = idx[i];
                omap[oy * OW + ox] = xmap[best];
                amap[oy * OW + ox] = static_cast<std::uint32_t>(best);
            }
    }
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->parents = {x};
    node->backprop = [argmax, B, C, H, W, OH, OW](Node<T>& self) {
        auto& x = *self.parents[0];
        for (std::size_t bc = 0; bc < B * C; ++bc) {
            T* xg = x.grad.data.data() + bc * H * W;
            const T* g = self.grad.data.data() + bc * OH * OW;
            const std::uint32_t* amap = argmax->data() + bc * OH * OW;
            for (std::size_t i = 0; i < OH * OW; ++i) xg[amap[i]] += g[i];
        }
    };
    return node;
}

// ---- flatten [B x ...] -> [B x D] ------------------------------------------

template <class T>
NodePtr<T> flatten(const NodePtr<T>& x) {
    const std::size_t b = x->value.shape[0];
    const std::size_t d = x->value.size() / b;
    Tensor<T> out({b, d}, x->value.data);
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->parents = {x};
    node->backprop = [](Node<T>& self) {
        auto& x = *self.parents[0];
        for (std::size_t i = 0; i < x.grad.size(); ++i)
            x.grad.data[i] += self.grad.data[i];
    };
    return node;
}

// ---- softmax + mean cross-entropy ------------------------------------------

template <class T>
struct SoftmaxXent {
    NodePtr<T> loss;      // scalar node
    Tensor<T> probs;      // [B x C], rows sum to 1
};

template <class T>
SoftmaxXent<T> softmax_xent(const NodePtr<T>& logits, const std::vector<int>& labels) {
    if (logits->value.rank() != 2 || logits->value.shape[0] != labels.size())
        throw std::invalid_argument("softmax_xent: logits/labels mismatch");
    const std::size_t B = logits->value.shape[0], C = logits->value.shape[1];
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw std::invalid_argument("softmax_xent: label out of range");

    Tensor<T> probs({B, C});
    double total = 0;
    for (std::size_t i = 0; i < B; ++i) {
        const T* row = logits->value.data.data() + i * C;
        T mx = row[0];
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
        double z = 0;
        for (std::size_t j = 0; j < C; ++j) z += std::exp(static_cast<double>(row[j] - mx));
        const double logz = std::log(z);
        for (std::size_t j = 0; j < C; ++j)
            probs.data[i * C + j] =
                static_cast<T>(std::exp(static_cast<double>(row[j] - mx) - logz));
        total -= static_cast<double>(row[labels[i]] - mx) - logz;
    }
    Tensor<T> lv({1});
    lv.data[0] = static_cast<T>(total / static_cast<double>(B));

    auto node = std::make_shared<Node<T>>(std::move(lv));
    node->parents = {logits};
    Tensor<T> probs_copy = probs;
    node->backprop = [probs_copy, labels, B, C](Node<T>& self) {
        auto& logits = *self.parents[0];
        const T scale = self.grad.data[0] / static_cast<T>(B);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < C; ++j) {
                T p = probs_copy.data[i * C + j];
                if (static_cast<std::size_t>(labels[i]) == j) p -= T(1);
                logits.grad.data[i * C + j] += scale * p;
            }
    };
    return {node, std::move(probs)};
}

// Sum of all elements (test convenience).
template <class T>
NodePtr<T> sum(const NodePtr<T>& x) {
    Tensor<T> out({1});
    for (T v : x->value.data) out.data[0] += v;
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->parents = {x};
    node->backprop = [](Node<T>& self) {
        auto& x = *self.parents[0];
        for (auto& g : x.grad.data) g += self.grad.data[0];
    };
    return node;
}

// ---- backward ---------------------------------------------------------------

// Reverse-mode sweep from a scalar loss node. Gradients accumulate into
// every reachable node's .grad (zeroed first).
template <class T>
void backward(const NodePtr<T>& loss) {
    if (!loss) throw std::invalid_argument("backward: null node");
    if (loss->value.size() != 1) throw std::invalid_argument("backward: loss must be scalar");

    // Iterative post-order DFS for topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order) {
        if (n->grad.shape != n->value.shape) n->grad = Tensor<T>(n->value.shape);
        else n->grad.fill(T(0));
    }
    loss->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace dropnet
