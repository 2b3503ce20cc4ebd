// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nli::nn {

using Real = double;
using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. The leading dimension is the batch wherever a
/// tensor flows between layers.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = 0.0);
    Tensor(Shape shape, std::vector<Real> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    Real* data() { return values_.data(); }
    const Real* data() const { return values_.data(); }
    std::span<Real> values() { return values_; }
    std::span<const Real> values() const { return values_; }
    std::vector<Real>& storage() { return values_; }

    Real& operator[](std::size_t i) { return values_[i]; }
    Real operator[](std::size_t i) const { return values_[i]; }

    /// Same data, new shape; sizes must agree.
    void reshape(Shape shape);
    Tensor reshaped(Shape shape) const;

    /// View as rows x cols where rows = dim(0) and cols = size / rows.
    MatrixMap as_matrix();
    ConstMatrixMap as_matrix() const;
    MatrixMap as_matrix(std::size_t rows, std::size_t cols);
    ConstMatrixMap as_matrix(std::size_t rows, std::size_t cols) const;
    VectorMap as_vector();
    ConstVectorMap as_vector() const;

    void fill(Real v);
    bool all_finite() const;

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<Real> values_;
};

/// A trainable array and the gradient of the current loss with respect to it.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
};

} // namespace nli::nn
