// SPDX-License-Identifier: Apache-2.0
#include "nli/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nli/error.hpp"

namespace nli::nn {

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<Real> dist(-limit, limit);
    for (Real& v : t.values()) {
        v = dist(rng);
    }
}

void shape_mismatch(const std::string& layer, const Shape& got, const std::string& expected)
{
    throw ShapeError(layer + ": input shape " + shape_string(got) + " does not match expected " +
                     expected);
}

// --- Dense ------------------------------------------------------------------

Dense::Dense(std::size_t in, std::size_t out)
    : in_(in), out_(out), weight_("W", {out, in}), bias_("b", {out})
{
}

Shape Dense::output_shape(const Shape& in) const
{
    if (in.size() != 1 || in[0] != in_) {
        shape_mismatch("dense", in, "[" + std::to_string(in_) + "]");
    }
    return {out_};
}

void Dense::initialize(std::mt19937_64& rng)
{
    glorot_uniform(weight_.value, in_, out_, rng);
    bias_.value.fill(0.0);
}

Tensor Dense::forward(const Tensor& x, bool /*training*/)
{
    if (x.rank() != 2 || x.dim(1) != in_) {
        shape_mismatch("dense", x.shape(), "[batch, " + std::to_string(in_) + "]");
    }
    input_ = x;
    Tensor y({x.dim(0), out_});
    auto ym = y.as_matrix();
    ym.noalias() = x.as_matrix() * weight_.value.as_matrix().transpose();
    ym.rowwise() += bias_.value.as_vector().transpose();
    return y;
}

Tensor Dense::backward(const Tensor& grad_out)
{
    const auto g = grad_out.as_matrix(input_.dim(0), out_);
    weight_.grad.as_matrix().noalias() = g.transpose() * input_.as_matrix();
    bias_.grad.as_vector() = g.colwise().sum().transpose();
    Tensor dx(input_.shape());
    dx.as_matrix().noalias() = g * weight_.value.as_matrix();
    return dx;
}

// --- Relu -------------------------------------------------------------------

Tensor Relu::forward(const Tensor& x, bool /*training*/)
{
    input_ = x;
    Tensor y = x;
    for (Real& v : y.values()) {
        v = v < 0.0 ? 0.0 : v; // NaN passes through
    }
    return y;
}

Tensor Relu::backward(const Tensor& grad_out)
{
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(input_[i] > 0.0)) {
            dx[i] = 0.0;
        }
    }
    return dx;
}

// --- Softmax ----------------------------------------------------------------

Tensor Softmax::forward(const Tensor& x, bool /*training*/)
{
    if (x.rank() != 2) {
        shape_mismatch("softmax", x.shape(), "[batch, classes]");
    }
    Tensor y = x;
    auto m = y.as_matrix();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
    output_ = y;
    return y;
}

Tensor Softmax::backward(const Tensor& grad_out)
{
    Tensor dx(output_.shape());
    const auto y = output_.as_matrix();
    const auto g = grad_out.as_matrix(output_.dim(0), output_.dim(1));
    auto d = dx.as_matrix();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const Real dot = y.row(r).dot(g.row(r));
        d.row(r) = y.row(r).array() * (g.row(r).array() - dot);
    }
    return dx;
}

// --- Conv2D -----------------------------------------------------------------

Conv2D::Conv2D(std::size_t in_channels, std::size_t filters, std::size_t kernel_h,
               std::size_t kernel_w)
    : in_ch_(in_channels), filters_(filters), kh_(kernel_h), kw_(kernel_w),
      kernels_("K", {filters, kernel_h, kernel_w, in_channels}), bias_("b", {filters})
{
    if (kh_ % 2 == 0 || kw_ % 2 == 0) {
        throw ConfigError("conv2d: same padding needs odd kernel sizes");
    }
}

Shape Conv2D::output_shape(const Shape& in) const
{
    if (in.size() != 3 || in[2] != in_ch_) {
        shape_mismatch("conv2d", in, "[h, w, " + std::to_string(in_ch_) + "]");
    }
    return {in[0], in[1], filters_};
}

void Conv2D::initialize(std::mt19937_64& rng)
{
    glorot_uniform(kernels_.value, kh_ * kw_ * in_ch_, kh_ * kw_ * filters_, rng);
    bias_.value.fill(0.0);
}

Tensor Conv2D::forward(const Tensor& x, bool /*training*/)
{
    if (x.rank() != 4 || x.dim(3) != in_ch_) {
        shape_mismatch("conv2d", x.shape(), "[batch, h, w, " + std::to_string(in_ch_) + "]");
    }
    input_shape_ = x.shape();
    const std::size_t batch = x.dim(0);
    const std::size_t h = x.dim(1);
    const std::size_t w = x.dim(2);
    const std::size_t patch = kh_ * kw_ * in_ch_;
    const auto ph = static_cast<std::ptrdiff_t>(kh_ / 2);
    const auto pw = static_cast<std::ptrdiff_t>(kw_ / 2);

    cols_.setZero(static_cast<Eigen::Index>(batch * h * w), static_cast<Eigen::Index>(patch));
    const Real* src = x.data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                Real* row = cols_.data() + ((b * h + y) * w + xx) * patch;
                for (std::size_t dy = 0; dy < kh_; ++dy) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - ph;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                        continue;
                    }
                    for (std::size_t dx = 0; dx < kw_; ++dx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) - pw;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) {
                            continue;
                        }
                        const Real* in = src + ((b * h + static_cast<std::size_t>(sy)) * w +
                                                static_cast<std::size_t>(sx)) * in_ch_;
                        std::copy(in, in + in_ch_, row + (dy * kw_ + dx) * in_ch_);
                    }
                }
            }
        }
    }

    Tensor out({batch, h, w, filters_});
    auto om = out.as_matrix(batch * h * w, filters_);
    om.noalias() = cols_ * kernels_.value.as_matrix(filters_, patch).transpose();
    om.rowwise() += bias_.value.as_vector().transpose();
    return out;
}

Tensor Conv2D::backward(const Tensor& grad_out)
{
    const std::size_t batch = input_shape_[0];
    const std::size_t h = input_shape_[1];
    const std::size_t w = input_shape_[2];
    const std::size_t patch = kh_ * kw_ * in_ch_;
    const auto ph = static_cast<std::ptrdiff_t>(kh_ / 2);
    const auto pw = static_cast<std::ptrdiff_t>(kw_ / 2);

    const auto g = grad_out.as_matrix(batch * h * w, filters_);
    kernels_.grad.as_matrix(filters_, patch).noalias() = g.transpose() * cols_;
    bias_.grad.as_vector() = g.colwise().sum().transpose();

    const RowMatrix dcols = g * kernels_.value.as_matrix(filters_, patch);
    Tensor dx(input_shape_);
    Real* dst = dx.data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                const Real* row = dcols.data() + ((b * h + y) * w + xx) * patch;
                for (std::size_t dy = 0; dy < kh_; ++dy) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - ph;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                        continue;
                    }
                    for (std::size_t dx_ = 0; dx_ < kw_; ++dx_) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx_) - pw;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) {
                            continue;
                        }
                        Real* out = dst + ((b * h + static_cast<std::size_t>(sy)) * w +
                                           static_cast<std::size_t>(sx)) * in_ch_;
                        const Real* in = row + (dy * kw_ + dx_) * in_ch_;
                        for (std::size_t c = 0; c < in_ch_; ++c) {
                            out[c] += in[c];
                        }
                    }
                }
            }
        }
    }
    return dx;
}

// --- MaxPool2D --------------------------------------------------------------

Shape MaxPool2D::output_shape(const Shape& in) const
{
    if (in.size() != 3 || in[0] < 2 || in[1] < 2) {
        shape_mismatch("maxpool2d", in, "[h>=2, w>=2, c]");
    }
    return {in[0] / 2, in[1] / 2, in[2]};
}

Tensor MaxPool2D::forward(const Tensor& x, bool /*training*/)
{
    if (x.rank() != 4 || x.dim(1) < 2 || x.dim(2) < 2) {
        shape_mismatch("maxpool2d", x.shape(), "[batch, h>=2, w>=2, c]");
    }
    input_shape_ = x.shape();
    const std::size_t batch = x.dim(0);
    const std::size_t h = x.dim(1);
    const std::size_t w = x.dim(2);
    const std::size_t c = x.dim(3);
    const std::size_t oh = h / 2;
    const std::size_t ow = w / 2;
    Tensor y({batch, oh, ow, c});
    argmax_.assign(y.size(), 0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    Real best = -std::numeric_limits<Real>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t di = 0; di < 2; ++di) {
                        for (std::size_t dj = 0; dj < 2; ++dj) {
                            const std::size_t idx = ((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    const std::size_t o = ((b * oh + i) * ow + j) * c + ch;
                    y[o] = best;
                    argmax_[o] = best_idx;
                }
            }
        }
    }
    return y;
}

Tensor MaxPool2D::backward(const Tensor& grad_out)
{
    Tensor dx(input_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) {
        dx[argmax_[o]] += grad_out[o];
    }
    return dx;
}

// --- Flatten / Reshape ------------------------------------------------------

Tensor Flatten::forward(const Tensor& x, bool /*training*/)
{
    if (x.rank() < 1) {
        shape_mismatch("flatten", x.shape(), "[batch, ...]");
    }
    input_shape_ = x.shape();
    const std::size_t batch = x.dim(0);
    return x.reshaped({batch, batch == 0 ? 0 : x.size() / batch});
}

Tensor Flatten::backward(const Tensor& grad_out)
{
    return grad_out.reshaped(input_shape_);
}

Shape Reshape::output_shape(const Shape& in) const
{
    if (shape_size(in) != shape_size(target_)) {
        shape_mismatch("reshape", in, "a shape with " + std::to_string(shape_size(target_)) +
                                          " elements");
    }
    return target_;
}

Tensor Reshape::forward(const Tensor& x, bool /*training*/)
{
    if (x.rank() < 1) {
        shape_mismatch("reshape", x.shape(), "[batch, ...]");
    }
    Shape sample(x.shape().begin() + 1, x.shape().end());
    output_shape(sample);
    input_shape_ = x.shape();
    Shape out = {x.dim(0)};
    out.insert(out.end(), target_.begin(), target_.end());
    return x.reshaped(out);
}

Tensor Reshape::backward(const Tensor& grad_out)
{
    return grad_out.reshaped(input_shape_);
}

// --- Dropout ----------------------------------------------------------------

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed)
{
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout rate must be in [0, 1)");
    }
}

Tensor Dropout::forward(const Tensor& x, bool training)
{
    if (!training || rate_ == 0.0) {
        mask_.clear();
        return x;
    }
    std::bernoulli_distribution keep(1.0 - rate_);
    const Real scale = 1.0 / (1.0 - rate_);
    mask_.resize(x.size());
    Tensor y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask_[i] = keep(rng_) ? scale : 0.0;
        y[i] *= mask_[i];
    }
    return y;
}

Tensor Dropout::backward(const Tensor& grad_out)
{
    if (mask_.empty()) {
        return grad_out;
    }
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] *= mask_[i];
    }
    return dx;
}

} // namespace nli::nn
