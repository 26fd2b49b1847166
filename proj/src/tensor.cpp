// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "moses/errors.hpp"

namespace moses {

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape) {
        n *= extent;
    }
    return n;
}

namespace {

void check_extents(const Shape& shape) {
    if (shape.empty()) {
        throw DimensionError("tensor shape must have at least one extent");
    }
    for (std::size_t extent : shape) {
        if (extent == 0) {
            throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
        }
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents(shape_);
    if (values_.size() != shape_size(shape_)) {
        throw DimensionError("value count " + std::to_string(values_.size()) +
                             " does not match shape " + shape_string(shape_));
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) {
        throw DimensionError("from_rows needs a non-empty rectangular input");
    }
    const std::size_t cols = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * cols);
    for (const auto& row : rows) {
        if (row.size() != cols) {
            throw DimensionError("from_rows: ragged rows");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.size() == 1) {
        return 1;
    }
    if (shape_.size() == 2) {
        return shape_[0];
    }
    throw DimensionError("rows() needs rank 1 or 2, got " + shape_string(shape_));
}

std::size_t Tensor::cols() const {
    if (shape_.size() == 1) {
        return shape_[0];
    }
    if (shape_.size() == 2) {
        return shape_[1];
    }
    throw DimensionError("cols() needs rank 1 or 2, got " + shape_string(shape_));
}

void Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on) {
        grad_.assign(values_.size(), 0.0);
    } else {
        grad_.clear();
    }
}

void Tensor::zero_grad() {
    std::fill(grad_.begin(), grad_.end(), 0.0);
}

bool Tensor::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

bool Tensor::same_values(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (values_.empty() ||
            std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

}  // namespace moses
