#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "touchformer/errors.hpp"

namespace touchformer {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

// Dense row-major tensor. Storage is always a 2-D matrix view: the last axis
// maps to columns and every leading axis is folded into rows, so a rank-0
// tensor is 1x1, rank-1 [n] is 1xn and rank-3 [a,b,c] is (a*b)xc.
template <typename Scalar>
class Tensor {
   public:
    using scalar_type = Scalar;

    Tensor() : Tensor(Shape{}) {}

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_ = Matrix<Scalar>::Zero(view_rows(), view_cols());
    }

    Tensor(Shape shape, std::span<const Scalar> values) : shape_(std::move(shape)) {
        validate_shape();
        if (static_cast<Index>(values.size()) != shape_size(shape_)) {
            throw ShapeError("Tensor", "data length " + std::to_string(values.size()) +
                                           " does not match shape " + to_string(shape_));
        }
        data_ = Eigen::Map<const Matrix<Scalar>>(values.data(), view_rows(), view_cols());
    }

    Tensor(Shape shape, std::initializer_list<Scalar> values)
        : Tensor(std::move(shape), std::span<const Scalar>(values.begin(), values.size())) {}

    Tensor(Shape shape, Matrix<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.rows() != view_rows() || data_.cols() != view_cols()) {
            throw ShapeError("Tensor", "matrix " + std::to_string(data_.rows()) + "x" +
                                           std::to_string(data_.cols()) +
                                           " does not match shape " + to_string(shape_));
        }
    }

    static Tensor scalar(Scalar value) { return Tensor(Shape{}, {value}); }

    static Tensor from_matrix(Matrix<Scalar> m) {
        Shape shape{m.rows(), m.cols()};
        return Tensor(std::move(shape), std::move(m));
    }

    static Tensor vector(std::span<const Scalar> values) {
        return Tensor(Shape{static_cast<Index>(values.size())}, values);
    }

    static Tensor constant(Shape shape, Scalar value) {
        Tensor t(std::move(shape));
        t.data_.setConstant(value);
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
    Index size() const noexcept { return data_.size(); }
    Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

    // 2-D view dimensions.
    Index rows() const noexcept { return data_.rows(); }
    Index cols() const noexcept { return data_.cols(); }

    Matrix<Scalar>& matrix() noexcept { return data_; }
    const Matrix<Scalar>& matrix() const noexcept { return data_; }

    std::span<Scalar> data() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
    std::span<const Scalar> data() const noexcept {
        return {data_.data(), static_cast<std::size_t>(data_.size())};
    }

    Scalar& operator[](Index i) { return data_.data()[i]; }
    Scalar operator[](Index i) const { return data_.data()[i]; }

    Scalar item() const {
        if (size() != 1) throw ShapeError("item", "tensor of shape " + to_string(shape_) + " is not a scalar");
        return data_(0, 0);
    }

    bool all_finite() const { return data_.allFinite(); }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != size()) throw ShapeError("reshape", shape_, shape);
        Tensor out(std::move(shape));
        std::copy(data_.data(), data_.data() + size(), out.data_.data());
        return out;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(shape_, Matrix<Other>(data_.template cast<Other>()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

   private:
    void validate_shape() const {
        for (Index d : shape_) {
            if (d <= 0) throw ShapeError("Tensor", "non-positive dimension in shape " + to_string(shape_));
        }
    }

    Index view_cols() const { return shape_.empty() ? 1 : shape_.back(); }
    Index view_rows() const { return shape_.empty() ? 1 : shape_size(shape_) / shape_.back(); }

    Shape shape_;
    Matrix<Scalar> data_;
};

}  // namespace touchformer
