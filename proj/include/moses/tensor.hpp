// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace moses {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major tensor of 64-bit reals. Rank-1 tensors behave as a single row
// in matrix contexts. The gradient buffer exists only when requires_grad is set.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool empty() const { return values_.empty(); }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    const std::vector<double>& storage() const { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on);
    std::span<double> grad() { return grad_; }
    std::span<const double> grad() const { return grad_; }
    void zero_grad();

    bool all_finite() const;

    // Bitwise equality of shape and values; gradients are ignored.
    bool same_values(const Tensor& other) const;

private:
    Shape shape_;
    std::vector<double> values_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
};

// Largest absolute elementwise difference; throws DimensionError on shape mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace moses
