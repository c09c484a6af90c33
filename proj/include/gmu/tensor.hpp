// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmu {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

/// Thrown when operand shapes do not conform to an operation's signature.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a NaN or Inf is found where finite values are required.
class NonFiniteError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);
    explicit Tensor(Shape shape, double fill = 0.0);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    /// Rows and columns of a rank-2 tensor (throws otherwise).
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

    double item() const;
    bool all_finite() const;
    /// Throws NonFiniteError naming `what` if any entry is NaN or Inf.
    const Tensor& require_finite(const std::string& what) const;

    Tensor reshaped(Shape shape) const;
    /// Rows [begin, begin + count) of a rank-2 tensor.
    Tensor row_slice(std::size_t begin, std::size_t count) const;
    /// Rows listed in `index`, in that order.
    Tensor gather_rows(std::span<const std::size_t> index) const;

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace gmu
