// SPDX-License-Identifier: Apache-2.0
#include "gmu/tensor.hpp"

#include <cmath>
#include <cstring>

namespace gmu {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
        throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor Tensor::vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("tensor: ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("tensor: expected a matrix, got shape " + shape_str(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("tensor: expected a matrix, got shape " + shape_str(shape_));
    return shape_[1];
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("tensor: item() on shape " + shape_str(shape_));
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

const Tensor& Tensor::require_finite(const std::string& what) const {
    for (std::size_t i = 0; i < data_.size(); ++i)
        if (!std::isfinite(data_[i]))
            throw NonFiniteError(what + ": non-finite value at flat index " + std::to_string(i));
    return *this;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::row_slice(std::size_t begin, std::size_t count) const {
    const std::size_t c = cols();
    if (begin + count > rows()) throw ShapeError("row_slice: out of range");
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                            data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
    return Tensor({count, c}, std::move(out));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> index) const {
    const std::size_t c = cols();
    std::vector<double> out(index.size() * c);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= rows()) throw ShapeError("gather_rows: row index out of range");
        if (c) std::memcpy(&out[i * c], &data_[index[i] * c], c * sizeof(double));
    }
    return Tensor({index.size(), c}, std::move(out));
}

}  // namespace gmu
