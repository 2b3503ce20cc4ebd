// SPDX-License-Identifier: Apache-2.0
#include "nli/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "nli/error.hpp"

namespace nli::nn {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? ", " : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, Real fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill)
{
}

Tensor::Tensor(Shape shape, std::vector<Real> values)
    : shape_(std::move(shape)), values_(std::move(values))
{
    if (values_.size() != shape_size(shape_)) {
        throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
                         std::to_string(values_.size()) + " values");
    }
}

void Tensor::reshape(Shape shape)
{
    if (shape_size(shape) != values_.size()) {
        throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
}

Tensor Tensor::reshaped(Shape shape) const
{
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
}

MatrixMap Tensor::as_matrix()
{
    const std::size_t rows = shape_.empty() ? 1 : shape_[0];
    return as_matrix(rows, rows == 0 ? 0 : values_.size() / rows);
}

ConstMatrixMap Tensor::as_matrix() const
{
    const std::size_t rows = shape_.empty() ? 1 : shape_[0];
    return as_matrix(rows, rows == 0 ? 0 : values_.size() / rows);
}

MatrixMap Tensor::as_matrix(std::size_t rows, std::size_t cols)
{
    return {values_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

ConstMatrixMap Tensor::as_matrix(std::size_t rows, std::size_t cols) const
{
    return {values_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

VectorMap Tensor::as_vector()
{
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
}

ConstVectorMap Tensor::as_vector() const
{
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
}

void Tensor::fill(Real v)
{
    std::fill(values_.begin(), values_.end(), v);
}

bool Tensor::all_finite() const
{
    return std::all_of(values_.begin(), values_.end(), [](Real v) { return std::isfinite(v); });
}

} // namespace nli::nn
