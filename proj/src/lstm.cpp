// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "nli/error.hpp"
#include "nli/nn/layers.hpp"

namespace nli::nn {

namespace {

inline Real sigmoid(Real v)
{
    return 1.0 / (1.0 + std::exp(-v));
}

} // namespace

Lstm::Lstm(std::size_t input_size, std::size_t hidden, bool return_sequences)
    : input_size_(input_size), hidden_(hidden), return_sequences_(return_sequences),
      w_x_("W_x", {4 * hidden, input_size}), w_h_("W_h", {4 * hidden, hidden}),
      bias_("b", {4 * hidden})
{
}

Shape Lstm::output_shape(const Shape& in) const
{
    if (in.size() != 2 || in[1] != input_size_ || in[0] == 0) {
        shape_mismatch("lstm", in, "[time, " + std::to_string(input_size_) + "]");
    }
    if (return_sequences_) {
        return {in[0], hidden_};
    }
    return {hidden_};
}

void Lstm::initialize(std::mt19937_64& rng)
{
    glorot_uniform(w_x_.value, input_size_, 4 * hidden_, rng);
    glorot_uniform(w_h_.value, hidden_, 4 * hidden_, rng);
    bias_.value.fill(0.0);
    for (std::size_t j = hidden_; j < 2 * hidden_; ++j) {
        bias_.value[j] = 1.0;
    }
}

Tensor Lstm::forward(const Tensor& x, bool /*training*/)
{
    if (x.rank() != 3 || x.dim(2) != input_size_ || x.dim(1) == 0) {
        shape_mismatch("lstm", x.shape(), "[batch, time, " + std::to_string(input_size_) + "]");
    }
    const std::size_t batch = x.dim(0);
    const std::size_t steps = x.dim(1);
    const std::size_t h = hidden_;
    const auto H = static_cast<Eigen::Index>(h);
    const auto B = static_cast<Eigen::Index>(batch);
    batch_ = batch;
    steps_ = steps;

    x_tm_.resize(static_cast<Eigen::Index>(steps * batch), static_cast<Eigen::Index>(input_size_));
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
            const Real* src = x.data() + (b * steps + t) * input_size_;
            std::copy(src, src + input_size_, x_tm_.data() + (t * batch + b) * input_size_);
        }
    }

    const auto wx = w_x_.value.as_matrix(4 * h, input_size_);
    const auto wh = w_h_.value.as_matrix(4 * h, h);
    const auto bias = bias_.value.as_vector();

    // Input contributions for every step at once, then the recurrence.
    gates_.noalias() = x_tm_ * wx.transpose();
    gates_.rowwise() += bias.transpose();
    cells_.resize(static_cast<Eigen::Index>(steps * batch), H);
    hiddens_.resize(static_cast<Eigen::Index>(steps * batch), H);

    RowMatrix h_prev = RowMatrix::Zero(B, H);
    RowMatrix c_prev = RowMatrix::Zero(B, H);
    for (std::size_t t = 0; t < steps; ++t) {
        const auto r0 = static_cast<Eigen::Index>(t * batch);
        auto z = gates_.middleRows(r0, B);
        if (t > 0) {
            z.noalias() += h_prev * wh.transpose();
        }
        auto i_gate = z.leftCols(H).array();
        auto f_gate = z.middleCols(H, H).array();
        auto g_gate = z.middleCols(2 * H, H).array();
        auto o_gate = z.rightCols(H).array();
        const auto logistic = [](Real v) { return sigmoid(v); };
        i_gate = i_gate.unaryExpr(logistic);
        f_gate = f_gate.unaryExpr(logistic);
        g_gate = g_gate.tanh();
        o_gate = o_gate.unaryExpr(logistic);

        auto c = cells_.middleRows(r0, B);
        c.array() = f_gate * c_prev.array() + i_gate * g_gate;
        auto hh = hiddens_.middleRows(r0, B);
        hh.array() = o_gate * c.array().tanh();
        c_prev = c;
        h_prev = hh;
    }

    if (!return_sequences_) {
        Tensor y({batch, h});
        y.as_matrix() = h_prev;
        return y;
    }
    Tensor y({batch, steps, h});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
            const Real* src = hiddens_.data() + (t * batch + b) * h;
            std::copy(src, src + h, y.data() + (b * steps + t) * h);
        }
    }
    return y;
}

Tensor Lstm::backward(const Tensor& grad_out)
{
    const std::size_t batch = batch_;
    const std::size_t steps = steps_;
    const std::size_t h = hidden_;
    const auto H = static_cast<Eigen::Index>(h);
    const auto B = static_cast<Eigen::Index>(batch);
    const auto wx = w_x_.value.as_matrix(4 * h, input_size_);
    const auto wh = w_h_.value.as_matrix(4 * h, h);

    RowMatrix dz(static_cast<Eigen::Index>(steps * batch), 4 * H);
    RowMatrix dh_next = RowMatrix::Zero(B, H);
    RowMatrix dc_next = RowMatrix::Zero(B, H);
    RowMatrix dh(B, H);

    for (std::size_t step = steps; step-- > 0;) {
        const auto r0 = static_cast<Eigen::Index>(step * batch);
        if (return_sequences_) {
            for (std::size_t b = 0; b < batch; ++b) {
                const Real* src = grad_out.data() + (b * steps + step) * h;
                for (std::size_t j = 0; j < h; ++j) {
                    dh(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = src[j];
                }
            }
            dh += dh_next;
        } else if (step + 1 == steps) {
            dh = grad_out.as_matrix(batch, h) + dh_next;
        } else {
            dh = dh_next;
        }

        const auto gates = gates_.middleRows(r0, B);
        const auto i_gate = gates.leftCols(H).array();
        const auto f_gate = gates.middleCols(H, H).array();
        const auto g_gate = gates.middleCols(2 * H, H).array();
        const auto o_gate = gates.rightCols(H).array();
        const auto c = cells_.middleRows(r0, B).array();
        const Eigen::Array<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tanh_c = c.tanh();

        auto dzt = dz.middleRows(r0, B);
        // o
        dzt.rightCols(H).array() = dh.array() * tanh_c * o_gate * (1.0 - o_gate);
        const Eigen::Array<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dc =
            dh.array() * o_gate * (1.0 - tanh_c.square()) + dc_next.array();
        // i, g
        dzt.leftCols(H).array() = dc * g_gate * i_gate * (1.0 - i_gate);
        dzt.middleCols(2 * H, H).array() = dc * i_gate * (1.0 - g_gate.square());
        // f
        if (step > 0) {
            const auto c_prev = cells_.middleRows(r0 - B, B).array();
            dzt.middleCols(H, H).array() = dc * c_prev * f_gate * (1.0 - f_gate);
        } else {
            dzt.middleCols(H, H).setZero();
        }
        dc_next = (dc * f_gate).matrix();
        dh_next.noalias() = dzt * wh;
    }

    w_x_.grad.as_matrix(4 * h, input_size_).noalias() = dz.transpose() * x_tm_;
    auto dwh = w_h_.grad.as_matrix(4 * h, h);
    dwh.setZero();
    if (steps > 1) {
        const auto rows = static_cast<Eigen::Index>((steps - 1) * batch);
        dwh.noalias() = dz.bottomRows(rows).transpose() * hiddens_.topRows(rows);
    }
    bias_.grad.as_vector() = dz.colwise().sum().transpose();

    const RowMatrix dx_tm = dz * wx;
    Tensor dx({batch, steps, input_size_});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
            const Real* src = dx_tm.data() + (t * batch + b) * input_size_;
            std::copy(src, src + input_size_, dx.data() + (b * steps + t) * input_size_);
        }
    }
    return dx;
}

} // namespace nli::nn
