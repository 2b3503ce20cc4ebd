// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nli/nn/layers.hpp"
#include "nli/nn/tensor.hpp"

namespace nli::nn {

/// Anything train() can fit: maps a batch to logits and back-propagates.
class Model {
public:
    virtual ~Model() = default;

    /// Logits [batch, classes].
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    /// Takes dLoss/dLogits, fills every Param::grad, returns dLoss/dInput.
    virtual Tensor backward(const Tensor& grad_logits) = 0;
    virtual std::vector<Param*> params() = 0;
    /// Called before the first batch of each epoch (1-based).
    virtual void begin_epoch(std::size_t /*epoch*/) {}
};

class Sequential : public Model {
public:
    Sequential() = default;

    Layer& add(std::unique_ptr<Layer> layer);
    template <typename L, typename... Args>
    L& emplace(Args&&... args)
    {
        return static_cast<L&>(add(std::make_unique<L>(std::forward<Args>(args)...)));
    }

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_logits) override;
    std::vector<Param*> params() override;

    void initialize(std::mt19937_64& rng);
    std::size_t parameter_count();
    /// Per-sample output shape, checking every layer along the way.
    Shape output_shape(const Shape& sample_shape) const;

    std::size_t layer_count() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Row-wise softmax of a [batch, classes] tensor.
Tensor softmax(const Tensor& logits);

/// -log(probs[label]) with the probability clamped away from zero.
/// Throws ArgumentError for a bad label or a distribution not summing to 1.
Real cross_entropy(std::span<const Real> probs, std::size_t label);

struct LossAndGrad {
    Real loss = 0.0;     // mean over the batch
    Tensor grad;         // dLoss/dLogits
    std::size_t correct = 0;
};

/// Mean softmax cross-entropy over a batch, computed through log-softmax.
/// The gradient is (softmax(z) - onehot(label)) / batch.
LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers are created on the first step.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::vector<Param*>& params);
    std::size_t timestep() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

/// Fixed-shape labelled samples, stored contiguously.
struct Samples {
    Shape sample_shape;
    std::vector<Real> features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_size() const { return shape_size(sample_shape); }
    Tensor batch(std::span<const std::size_t> indices) const;
    Tensor batch(std::size_t first, std::size_t count) const;
};

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    AdamConfig adam;
    std::uint64_t seed = 0;
    bool shuffle = true;
    bool verbose = false;

    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    Real train_loss = 0.0;
    Real train_acc = 0.0;
    Real val_loss = 0.0;
    Real val_acc = 0.0;
    double wall_seconds = 0.0;
};

enum class StopReason { early_stopping, max_epochs };
std::string to_string(StopReason r);

struct TrainResult {
    std::vector<EpochMetrics> history;
    StopReason stop_reason = StopReason::max_epochs;
    std::size_t best_epoch = 0;
    Real best_val_loss = 0.0;
    double wall_seconds = 0.0;
};

/// Mini-batch Adam with early stopping on validation loss. Stops once
/// val_loss has not improved for `patience` epochs, or at max_epochs, and
/// leaves `model` holding the parameters of the best epoch.
TrainResult train(Model& model, const Samples& train_set, const Samples& val_set,
                  const TrainConfig& cfg);

struct Evaluation {
    Real accuracy = 0.0;
    Real mean_loss = 0.0;
    /// rows = actual class, cols = predicted class
    std::vector<std::vector<std::size_t>> confusion;
    std::vector<int> predictions;
};

Evaluation evaluate(Model& model, const Samples& set, std::size_t n_classes = 2,
                    std::size_t batch_size = 64);

/// Writes `epoch,train_loss,train_acc,val_loss,val_acc,seconds`.
void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::string& path);

} // namespace nli::nn
