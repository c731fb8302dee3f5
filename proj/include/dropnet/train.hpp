#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropnet/autodiff.hpp"
#include "dropnet/data.hpp"
#include "dropnet/model.hpp"
#include "dropnet/rng.hpp"

namespace dropnet {

// Non-finite loss during training; surfaced to the CLI as exit code 4.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Plain SGD: p <- p - lr * g. No momentum, no weight decay.
template <class T>
void sgd_step(const std::vector<NodePtr<T>>& params, T lr) {
    for (const auto& p : params) {
        if (p->grad.shape != p->value.shape)
            throw std::invalid_argument("sgd_step: gradient shape mismatch");
        for (std::size_t i = 0; i < p->value.size(); ++i)
            p->value.data[i] -= lr * p->grad.data[i];
    }
}

template <class T>
struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

template <class T>
EvalResult<T> evaluate(const MaskedModel<T>& model, const Dataset<T>& data,
                       std::size_t batch_size = 256) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t at = 0; at < data.size(); at += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = at; i < std::min(at + batch_size, data.size()); ++i) idx.push_back(i);
        Tensor<T> images;
        std::vector<int> labels;
        gather(data, idx, images, labels);
        auto logits = model.forward(images);
        auto sx = softmax_xent(logits, labels);
        loss_sum += static_cast<double>(sx.loss->value.data[0]) * static_cast<double>(idx.size());
        const std::size_t C = sx.probs.shape[1];
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < C; ++j)
                if (sx.probs.data[i * C + j] > sx.probs.data[i * C + best]) best = j;
            if (static_cast<int>(best) == labels[i]) ++correct;
        }
    }
    EvalResult<T> r;
    r.loss = loss_sum / static_cast<double>(data.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return r;
}

// Patience counter over validation losses. Stops once the loss has failed
// to improve for `patience` consecutive epochs.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {
        if (patience < 1) throw std::invalid_argument("early stopping: patience must be >= 1");
    }

    // Returns true when training should stop after this epoch.
    bool update(double val_loss, int epoch) {
        if (val_loss < best_) {
            best_ = val_loss;
            best_epoch_ = epoch;
            bad_ = 0;
        } else {
            ++bad_;
        }
        return bad_ >= patience_;
    }

    double best_loss() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    int bad_ = 0;
    int best_epoch_ = -1;
    double best_ = std::numeric_limits<double>::infinity();
};

template <class T>
struct TrainResult {
    int epochs = 0;
    double best_val_loss = 0.0;
};

// Mini-batch SGD until the validation loss stops improving for `patience`
// epochs or `max_epochs` is reached; the parameters are restored to the
// best-validation epoch before returning.
template <class T>
TrainResult<T> train_until_early_stop(MaskedModel<T>& model, const Dataset<T>& train,
                                      const Dataset<T>& val, int max_epochs, int patience,
                                      T lr, std::size_t batch_size, Rng& rng) {
    TrainResult<T> result;
    if (max_epochs <= 0) {
        result.best_val_loss = evaluate(model, val).loss;
        return result;
    }
    EarlyStopper stopper(patience);
    ParamSet<T> best = model.snapshot();
    auto params = model.params();
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        Rng erng = rng.fork("epoch", static_cast<std::uint64_t>(epoch));
        for (const auto& idx : batches(train.size(), batch_size, erng)) {
            Tensor<T> images;
            std::vector<int> labels;
            gather(train, idx, images, labels);
            auto logits = model.forward(images);
            auto sx = softmax_xent(logits, labels);
            const double l = static_cast<double>(sx.loss->value.data[0]);
            if (!std::isfinite(l))
                throw DivergenceError("training loss is non-finite at epoch " +
                                      std::to_string(epoch + 1));
            backward(sx.loss);
            sgd_step(params, lr);
        }
        const double val_loss = evaluate(model, val).loss;
        if (!std::isfinite(val_loss))
            throw DivergenceError("validation loss is non-finite at epoch " +
                                  std::to_string(epoch + 1));
        result.epochs = epoch + 1;
        const bool improved = val_loss < stopper.best_loss();
        const bool stop = stopper.update(val_loss, epoch);
        if (improved) best = model.snapshot();
        if (stop) break;
    }
    model.restore(best);
    result.best_val_loss = stopper.best_loss();
    return result;
}

}  // namespace dropnet
