// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/parameters.hpp"

#include <cmath>

namespace moses {

Tensor uniform_parameter(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor t({fan_in, fan_out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.values()) {
        v = rng.uniform(-bound, bound);
    }
    t.set_requires_grad(true);
    return t;
}

Tensor constant_parameter(Shape shape, double value) {
    Tensor t(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

}  // namespace moses
