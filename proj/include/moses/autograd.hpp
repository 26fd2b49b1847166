// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "moses/tensor.hpp"

namespace moses {

class Graph;

// Handle to a value recorded on a Graph.
struct Var {
    Graph* graph = nullptr;
    std::uint32_t id = 0;

    bool valid() const { return graph != nullptr; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

// Define-by-run tape. Nodes are appended in evaluation order, so the recording
// order is a topological order and backward walks it in reverse. A graph and
// its values belong to one thread.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::uint32_t)>;

    Graph() = default;
    // With record_gradients off, parameters enter as plain values and no
    // backward closures are kept. For inference.
    explicit Graph(bool record_gradients) : record_gradients_(record_gradients) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Value without gradient.
    Var constant(Tensor value);
    // Graph-owned leaf that receives a gradient.
    Var input(Tensor value);
    // Leaf aliasing an external parameter. Repeated calls with the same tensor
    // return the same node. Gradient flows only if the tensor requires_grad.
    Var param(const Tensor& parameter);

    Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
        return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                      std::move(backward));
    }

    const Tensor& value(Var v) const;
    const Tensor& value(std::uint32_t id) const;
    bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
    // Gradient buffer of a node; empty until backward has reached it.
    std::span<const double> grad(Var v) const;
    // Mutable gradient buffer, allocated on first use. For op implementations.
    std::span<double> grad_buffer(std::uint32_t id);

    // Reverse pass from a scalar loss. Allowed once per graph.
    void backward(Var loss);
    bool backward_done() const { return backward_done_; }

    // Adds the gradient collected for `parameter` into its grad buffer. Returns
    // false when the parameter never received a gradient on this graph.
    bool accumulate_into(Tensor& parameter) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        std::vector<double> grad;
        BackwardFn backward;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor*, std::uint32_t> param_nodes_;
    bool backward_done_ = false;
    bool record_gradients_ = true;
};

// ---- differentiable primitives -------------------------------------------------

Var matmul(Var a, Var b);
// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Adds a length-d bias row to every row of an n×d operand.
Var add_row(Var x, Var bias);
Var mul(Var a, Var b);
// Multiplies row i of an n×d operand by column entry i of an n×1 operand.
Var mul_col(Var x, Var column);
Var scale(Var x, double factor);
// alpha * x + beta, elementwise.
Var affine(Var x, double alpha, double beta);
Var sigmoid(Var x);
Var gelu(Var x);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t width);
Var gather_rows(Var table, std::span<const int> ids);
Var mean_rows(Var x);
Var sum(Var x);
// Summed token cross-entropy of row-wise softmax(logits) against targets;
// rows whose target equals ignore_id contribute nothing.
Var cross_entropy_sum(Var logits, std::span<const int> targets, int ignore_id);

inline constexpr double kLayerNormEpsilon = 1e-5;

// ---- verification harness ------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
};

// Central differences of a scalar function of `x` against its reverse-mode gradient:
// max over coordinates of |analytic - numeric| / max(1, |analytic|).
GradCheckReport grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double h);

// Same check against a parameter that `f` reads through Graph::param. When
// `coordinates` is empty every coordinate is checked.
GradCheckReport grad_check_parameter(const std::function<Var(Graph&)>& f, Tensor& parameter,
                                     double h, std::span<const std::size_t> coordinates = {});

}  // namespace moses
