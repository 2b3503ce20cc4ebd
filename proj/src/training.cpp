// SPDX-License-Identifier: Apache-2.0
#include "nli/nn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>

#include "nli/error.hpp"

namespace nli::nn {

// --- Sequential -------------------------------------------------------------

Layer& Sequential::add(std::unique_ptr<Layer> layer)
{
    layers_.push_back(std::move(layer));
    return *layers_.back();
}

Tensor Sequential::forward(const Tensor& x, bool training)
{
    Tensor h = x;
    for (auto& layer : layers_) {
        h = layer->forward(h, training);
    }
    return h;
}

Tensor Sequential::backward(const Tensor& grad_logits)
{
    Tensor g = grad_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        g = (*it)->backward(g);
    }
    return g;
}

std::vector<Param*> Sequential::params()
{
    std::vector<Param*> out;
    for (auto& layer : layers_) {
        for (Param* p : layer->params()) {
            out.push_back(p);
        }
    }
    return out;
}

void Sequential::initialize(std::mt19937_64& rng)
{
    for (auto& layer : layers_) {
        layer->initialize(rng);
    }
}

std::size_t Sequential::parameter_count()
{
    std::size_t n = 0;
    for (const Param* p : params()) {
        n += p->value.size();
    }
    return n;
}

Shape Sequential::output_shape(const Shape& sample_shape) const
{
    Shape s = sample_shape;
    for (const auto& layer : layers_) {
        s = layer->output_shape(s);
    }
    return s;
}

// --- losses -----------------------------------------------------------------

Tensor softmax(const Tensor& logits)
{
    Softmax sm;
    return sm.forward(logits, false);
}

Real cross_entropy(std::span<const Real> probs, std::size_t label)
{
    if (label >= probs.size()) {
        throw ArgumentError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                            std::to_string(probs.size()) + " classes");
    }
    const Real total = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-6) {
        throw ArgumentError("cross_entropy: probabilities sum to " + std::to_string(total));
    }
    constexpr Real kMinProb = 1e-15;
    return -std::log(std::max(probs[label], kMinProb));
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels)
{
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ShapeError("softmax_cross_entropy: logits " + shape_string(logits.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
    }
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    LossAndGrad out;
    out.grad = Tensor(logits.shape());
    const auto z = logits.as_matrix();
    auto g = out.grad.as_matrix();
    Real total = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        const auto label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw ArgumentError("label " + std::to_string(label) + " out of range");
        }
        const auto row = z.row(static_cast<Eigen::Index>(r));
        const Real mx = row.maxCoeff();
        const Real log_sum = mx + std::log((row.array() - mx).exp().sum());
        total += log_sum - row(label);
        Eigen::Index arg = 0;
        row.maxCoeff(&arg);
        if (arg == label) {
            ++out.correct;
        }
        for (std::size_t c = 0; c < classes; ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            const Real p = std::exp(row(ci) - log_sum);
            g(static_cast<Eigen::Index>(r), ci) =
                (p - (static_cast<int>(c) == label ? 1.0 : 0.0)) / static_cast<Real>(batch);
        }
    }
    out.loss = total / static_cast<Real>(batch);
    return out;
}

// --- Adam -------------------------------------------------------------------

void Adam::step(const std::vector<Param*>& params)
{
    if (m_.empty()) {
        for (const Param* p : params) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }
    if (m_.size() != params.size()) {
        throw ShapeError("adam: parameter list changed between steps");
    }
    ++t_;
    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k];
        auto m = m_[k].as_vector().array();
        auto v = v_[k].as_vector().array();
        const auto g = p.grad.as_vector().array();
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.square();
        p.value.as_vector().array() -=
            cfg_.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg_.epsilon);
    }
}

// --- Samples ----------------------------------------------------------------

Tensor Samples::batch(std::span<const std::size_t> indices) const
{
    const std::size_t n = sample_size();
    Shape shape = {indices.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    Tensor t(shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Real* src = features.data() + indices[i] * n;
        std::copy(src, src + n, t.data() + i * n);
    }
    return t;
}

Tensor Samples::batch(std::size_t first, std::size_t count) const
{
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), first);
    return batch(idx);
}

// --- training ---------------------------------------------------------------

void TrainConfig::validate() const
{
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (patience < 1) {
        throw ConfigError("patience must be >= 1");
    }
    if (max_epochs < 1) {
        throw ConfigError("max_epochs must be >= 1");
    }
    if (!(adam.learning_rate > 0.0)) {
        throw ConfigError("learning rate must be positive");
    }
}

std::string to_string(StopReason r)
{
    return r == StopReason::early_stopping ? "early_stopping" : "max_epochs";
}

namespace {

std::vector<Tensor> snapshot(const std::vector<Param*>& params)
{
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Param* p : params) {
        out.push_back(p->value);
    }
    return out;
}

void restore(const std::vector<Param*>& params, const std::vector<Tensor>& saved)
{
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value = saved[i];
    }
}

} // namespace

TrainResult train(Model& model, const Samples& train_set, const Samples& val_set,
                  const TrainConfig& cfg)
{
    cfg.validate();
    if (train_set.size() == 0 || val_set.size() == 0) {
        throw DataError("train: training and validation sets must be non-empty");
    }
    if (train_set.sample_shape != val_set.sample_shape) {
        throw ShapeError("train: training samples " + shape_string(train_set.sample_shape) +
                         " and validation samples " + shape_string(val_set.sample_shape) +
                         " differ in shape");
    }

    using Clock = std::chrono::steady_clock;
    const auto run_start = Clock::now();
    const std::vector<Param*> params = model.params();
    Adam optimizer(cfg.adam);
    std::mt19937_64 rng(cfg.seed);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    std::vector<Tensor> best_params = snapshot(params);
    bool have_best = false;
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto epoch_start = Clock::now();
        model.begin_epoch(epoch);
        if (cfg.shuffle) {
            std::shuffle(order.begin(), order.end(), rng);
        }

        Real loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_no = 0;
        for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++batch_no) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - first);
            const std::span<const std::size_t> idx(order.data() + first, count);
            std::vector<int> labels;
            labels.reserve(count);
            for (const std::size_t i : idx) {
                labels.push_back(train_set.labels[i]);
            }
            const Tensor logits = model.forward(train_set.batch(idx), true);
            LossAndGrad lg = softmax_cross_entropy(logits, labels);
            if (!std::isfinite(lg.loss)) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_no));
            }
            model.backward(lg.grad);
            optimizer.step(params);
            loss_sum += lg.loss * static_cast<Real>(count);
            correct += lg.correct;
        }

        const Evaluation val = evaluate(model, val_set, 0, std::max<std::size_t>(cfg.batch_size, 64));
        if (!std::isfinite(val.mean_loss)) {
            throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<Real>(train_set.size());
        m.train_acc = static_cast<Real>(correct) / static_cast<Real>(train_set.size());
        m.val_loss = val.mean_loss;
        m.val_acc = val.accuracy;
        m.wall_seconds = std::chrono::duration<double>(Clock::now() - epoch_start).count();
        result.history.push_back(m);
        if (cfg.verbose) {
            std::cerr << "epoch " << epoch << " loss " << m.train_loss << " acc " << m.train_acc
                      << " val_loss " << m.val_loss << " val_acc " << m.val_acc << " ("
                      << m.wall_seconds << " s)\n";
        }

        if (!have_best || m.val_loss < result.best_val_loss) {
            have_best = true;
            result.best_val_loss = m.val_loss;
            result.best_epoch = epoch;
            best_params = snapshot(params);
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            result.stop_reason = StopReason::early_stopping;
            break;
        }
    }

    restore(params, best_params);
    result.wall_seconds = std::chrono::duration<double>(Clock::now() - run_start).count();
    return result;
}

Evaluation evaluate(Model& model, const Samples& set, std::size_t n_classes,
                    std::size_t batch_size)
{
    if (set.size() == 0) {
        throw DataError("evaluate: empty set");
    }
    batch_size = std::max<std::size_t>(batch_size, 1);
    Evaluation ev;
    ev.predictions.reserve(set.size());
    Real loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t first = 0; first < set.size(); first += batch_size) {
        const std::size_t count = std::min(batch_size, set.size() - first);
        const Tensor logits = model.forward(set.batch(first, count), false);
        const std::span<const int> labels(set.labels.data() + first, count);
        const LossAndGrad lg = softmax_cross_entropy(logits, labels);
        loss_sum += lg.loss * static_cast<Real>(count);
        correct += lg.correct;
        const std::size_t classes = logits.dim(1);
        if (n_classes == 0) {
            n_classes = classes;
        }
        if (ev.confusion.empty()) {
            ev.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
        }
        const auto z = logits.as_matrix();
        for (std::size_t r = 0; r < count; ++r) {
            Eigen::Index arg = 0;
            z.row(static_cast<Eigen::Index>(r)).maxCoeff(&arg);
            ev.predictions.push_back(static_cast<int>(arg));
            const auto actual = static_cast<std::size_t>(labels[r]);
            const auto predicted = static_cast<std::size_t>(arg);
            if (actual < n_classes && predicted < n_classes) {
                ++ev.confusion[actual][predicted];
            }
        }
    }
    ev.accuracy = static_cast<Real>(correct) / static_cast<Real>(set.size());
    ev.mean_loss = loss_sum / static_cast<Real>(set.size());
    return ev;
}

void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::string& path)
{
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream out(p, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write metrics CSV: " + path);
    }
    out << "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
    out << std::setprecision(17);
    for (const EpochMetrics& m : history) {
        out << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.val_loss << ','
            << m.val_acc << ',' << m.wall_seconds << '\n';
    }
}

} // namespace nli::nn
