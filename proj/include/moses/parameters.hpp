// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>

#include "moses/rng.hpp"
#include "moses/tensor.hpp"

namespace moses {

// Trainable matrix drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_parameter(std::size_t fan_in, std::size_t fan_out, Rng& rng);
// Trainable tensor filled with a constant (biases, layer-norm gains).
Tensor constant_parameter(Shape shape, double value);

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
    return prefix.empty() ? leaf : prefix + "." + leaf;
}

}  // namespace moses
