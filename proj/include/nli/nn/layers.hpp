// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "nli/nn/tensor.hpp"

namespace nli::nn {

/// A differentiable stage. forward() caches what backward() needs; backward()
/// takes dLoss/dOutput, overwrites every Param::grad and returns dLoss/dInput.
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual std::vector<Param*> params() { return {}; }

    /// Per-sample output shape for a per-sample input shape (batch excluded).
    virtual Shape output_shape(const Shape& in) const = 0;

    /// Glorot-uniform weights, zero biases.
    virtual void initialize(std::mt19937_64& /*rng*/) {}
};

/// Glorot-uniform fill with limit sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

/// Throws ShapeError naming the layer and both shapes.
[[noreturn]] void shape_mismatch(const std::string& layer, const Shape& got,
                                 const std::string& expected);

class Dense final : public Layer {
public:
    Dense(std::size_t in, std::size_t out);

    std::string kind() const override { return "dense"; }
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    Shape output_shape(const Shape& in) const override;
    void initialize(std::mt19937_64& rng) override;

    Param& weight() { return weight_; }
    Param& bias() { return bias_; }

private:
    std::size_t in_;
    std::size_t out_;
    Param weight_; // out x in
    Param bias_;   // out
    Tensor input_;
};

class Relu final : public Layer {
public:
    std::string kind() const override { return "relu"; }
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& in) const override { return in; }

private:
    Tensor input_;
};

/// Softmax over the last axis of a [batch, classes] tensor.
class Softmax final : public Layer {
public:
    std::string kind() const override { return "softmax"; }
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& in) const override { return in; }

private:
    Tensor output_;
};

/// Channels-last 2-D convolution, stride 1, "same" zero padding, odd kernels.
/// Input [batch, height, width, in_channels]; kernels [filters, kh, kw, in_channels].
class Conv2D final : public Layer {
public:
    Conv2D(std::size_t in_channels, std::size_t filters, std::size_t kernel_h, std::size_t kernel_w);

    std::string kind() const override { return "conv2d"; }
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override { return {&kernels_, &bias_}; }
    Shape output_shape(const Shape& in) const override;
    void initialize(std::mt19937_64& rng) override;

private:
    std::size_t in_ch_;
    std::size_t filters_;
    std::size_t kh_;
    std::size_t kw_;
    Param kernels_;
    Param bias_;
    Shape input_shape_;
    RowMatrix cols_; // im2col of the last input: [batch*h*w, kh*kw*in_ch]
};

/// 2x2 max pooling with stride 2 over [batch, h, w, c]; odd edges are dropped.
class MaxPool2D final : public Layer {
public:
    std::string kind() const override { return "maxpool2d"; }
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& in) const override;

private:
    Shape input_shape_;
    std::vector<std::size_t> argmax_;
};

class Flatten final : public Layer {
public:
    std::string kind() const override { return "flatten"; }
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }

private:
    Shape input_shape_;
};

/// Reinterprets each sample with a new shape of the same size.
class Reshape final : public Layer {
public:
    explicit Reshape(Shape sample_shape) : target_(std::move(sample_shape)) {}

    std::string kind() const override { return "reshape"; }
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& in) const override;

private:
    Shape target_;
    Shape input_shape_;
};

/// Inverted dropout: at training time each unit is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Identity at evaluation.
class Dropout final : public Layer {
public:
    Dropout(double rate, std::uint64_t seed);

    std::string kind() const override { return "dropout"; }
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    Shape output_shape(const Shape& in) const override { return in; }

    double rate() const { return rate_; }
    void reseed(std::uint64_t seed) { rng_.seed(seed); }

private:
    double rate_;
    std::mt19937_64 rng_;
    std::vector<Real> mask_; // empty when the last forward was at evaluation
};

/// LSTM over [batch, time, features] with gate order i, f, g, o:
///   z_t = W_x x_t + W_h h_{t-1} + b
///   c_t = f * c_{t-1} + i * g,   h_t = o * tanh(c_t)
/// Emits [batch, time, hidden] when return_sequences is set, else the last h.
class Lstm final : public Layer {
public:
    Lstm(std::size_t input_size, std::size_t hidden, bool return_sequences);

    std::string kind() const override { return "lstm"; }
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override { return {&w_x_, &w_h_, &bias_}; }
    Shape output_shape(const Shape& in) const override;
    void initialize(std::mt19937_64& rng) override;

    std::size_t hidden() const { return hidden_; }

private:
    std::size_t input_size_;
    std::size_t hidden_;
    bool return_sequences_;
    Param w_x_;  // 4h x in
    Param w_h_;  // 4h x h
    Param bias_; // 4h

    // Time-major caches from the last forward pass; row t*batch + b.
    std::size_t batch_ = 0;
    std::size_t steps_ = 0;
    RowMatrix x_tm_;    // [T*B, in]
    RowMatrix gates_;   // [T*B, 4h] post-activation i, f, g, o
    RowMatrix cells_;   // [T*B, h]
    RowMatrix hiddens_; // [T*B, h]
};

} // namespace nli::nn
