// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "moses/errors.hpp"

namespace moses {

const Tensor& Var::value() const {
    return graph->value(*this);
}

Var Graph::constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::input(Tensor value) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = record_gradients_;
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::param(const Tensor& parameter) {
    if (auto it = param_nodes_.find(&parameter); it != param_nodes_.end()) {
        return Var{this, it->second};
    }
    Node node;
    node.external = &parameter;
    node.needs_grad = record_gradients_ && parameter.requires_grad();
    nodes_.push_back(std::move(node));
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    param_nodes_.emplace(&parameter, id);
    return Var{this, id};
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (const Var& in : inputs) {
        if (in.graph != this) {
            throw ContractError("operand belongs to a different graph");
        }
        node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
    }
    if (node.needs_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::value(Var v) const {
    return value(v.id);
}

const Tensor& Graph::value(std::uint32_t id) const {
    const Node& node = nodes_[id];
    return node.external != nullptr ? *node.external : node.value;
}

std::span<const double> Graph::grad(Var v) const {
    return nodes_[v.id].grad;
}

std::span<double> Graph::grad_buffer(std::uint32_t id) {
    Node& node = nodes_[id];
    if (node.grad.empty()) {
        node.grad.assign(value(id).size(), 0.0);
    }
    return node.grad;
}

void Graph::backward(Var loss) {
    if (loss.graph != this) {
        throw ContractError("backward: loss was not recorded on this graph");
    }
    if (backward_done_) {
        throw ContractError("backward: already run on this graph");
    }
    if (value(loss).size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_string(value(loss).shape()));
    }
    if (!nodes_[loss.id].needs_grad) {
        throw ContractError("backward: loss is detached from every differentiable leaf");
    }
    backward_done_ = true;
    grad_buffer(loss.id)[0] = 1.0;
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (node.needs_grad && node.backward && !node.grad.empty()) {
            node.backward(*this, i);
        }
    }
}

bool Graph::accumulate_into(Tensor& parameter) const {
    auto it = param_nodes_.find(&parameter);
    if (it == param_nodes_.end()) {
        return false;
    }
    const auto& g = nodes_[it->second].grad;
    if (g.empty() || !parameter.requires_grad()) {
        return false;
    }
    auto target = parameter.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        target[i] += g[i];
    }
    return true;
}

namespace {

Graph& graph_of(Var a) {
    if (a.graph == nullptr) {
        throw ContractError("operation on an empty variable");
    }
    return *a.graph;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.size() != b.size() || a.rows() != b.rows()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()) + " differ");
    }
}

// Applies a unary elementwise op whose derivative is expressed through (input, output).
template <class Forward, class Derivative>
Var unary(Var x, Forward forward, Derivative derivative) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = forward(xv[i]);
    }
    return g.record(std::move(out), {x}, [x, derivative](Graph& g, std::uint32_t self) {
        const Tensor& xv = g.value(x.id);
        const Tensor& yv = g.value(self);
        auto dy = g.grad_buffer(self);
        auto dx = g.grad_buffer(x.id);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dx[i] += dy[i] * derivative(xv[i], yv[i]);
        }
    });
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t m = av.rows();
    const std::size_t k = av.cols();
    const std::size_t p = bv.cols();
    if (bv.rows() != k) {
        throw DimensionError("matmul: inner extents disagree for " + shape_string(av.shape()) +
                             " and " + shape_string(bv.shape()));
    }
    Tensor out({m, p});
    const double* A = av.values().data();
    const double* B = bv.values().data();
    double* C = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double s = A[i * k + kk];
            const double* brow = B + kk * p;
            double* crow = C + i * p;
            for (std::size_t j = 0; j < p; ++j) {
                crow[j] += s * brow[j];
            }
        }
    }
    return g.record(std::move(out), {a, b}, [a, b, m, k, p](Graph& g, std::uint32_t self) {
        auto dc = g.grad_buffer(self);
        const double* A = g.value(a.id).values().data();
        const double* B = g.value(b.id).values().data();
        if (g.needs_grad(a.id)) {
            auto da = g.grad_buffer(a.id);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    const double* brow = B + kk * p;
                    const double* dcrow = dc.data() + i * p;
                    for (std::size_t j = 0; j < p; ++j) {
                        acc += dcrow[j] * brow[j];
                    }
                    da[i * k + kk] += acc;
                }
            }
        }
        if (g.needs_grad(b.id)) {
            auto db = g.grad_buffer(b.id);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double s = A[i * k + kk];
                    double* dbrow = db.data() + kk * p;
                    const double* dcrow = dc.data() + i * p;
                    for (std::size_t j = 0; j < p; ++j) {
                        dbrow[j] += s * dcrow[j];
                    }
                }
            }
        }
    });
}

Var matmul_nt(Var a, Var b) {
    Graph& g = graph_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t m = av.rows();
    const std::size_t k = av.cols();
    const std::size_t p = bv.rows();
    if (bv.cols() != k) {
        throw DimensionError("matmul_nt: widths disagree for " + shape_string(av.shape()) +
                             " and " + shape_string(bv.shape()));
    }
    Tensor out({m, p});
    const double* A = av.values().data();
    const double* B = bv.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                acc += A[i * k + kk] * B[j * k + kk];
            }
            out(i, j) = acc;
        }
    }
    return g.record(std::move(out), {a, b}, [a, b, m, k, p](Graph& g, std::uint32_t self) {
        auto dc = g.grad_buffer(self);
        const double* A = g.value(a.id).values().data();
        const double* B = g.value(b.id).values().data();
        const bool need_a = g.needs_grad(a.id);
        const bool need_b = g.needs_grad(b.id);
        std::span<double> da;
        std::span<double> db;
        if (need_a) {
            da = g.grad_buffer(a.id);
        }
        if (need_b) {
            db = g.grad_buffer(b.id);
        }
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < p; ++j) {
                const double s = dc[i * p + j];
                if (need_a) {
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        da[i * k + kk] += s * B[j * k + kk];
                    }
                }
                if (need_b) {
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        db[j * k + kk] += s * A[i * k + kk];
                    }
                }
            }
        }
    });
}

Var add(Var a, Var b) {
    Graph& g = graph_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape("add", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    return g.record(std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
        auto dy = g.grad_buffer(self);
        for (Var in : {a, b}) {
            if (g.needs_grad(in.id)) {
                auto dx = g.grad_buffer(in.id);
                for (std::size_t i = 0; i < dx.size(); ++i) {
                    dx[i] += dy[i];
                }
            }
        }
    });
}

Var sub(Var a, Var b) {
    Graph& g = graph_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape("sub", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] - bv[i];
    }
    return g.record(std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
        auto dy = g.grad_buffer(self);
        if (g.needs_grad(a.id)) {
            auto da = g.grad_buffer(a.id);
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += dy[i];
            }
        }
        if (g.needs_grad(b.id)) {
            auto db = g.grad_buffer(b.id);
            for (std::size_t i = 0; i < db.size(); ++i) {
                db[i] -= dy[i];
            }
        }
    });
}

Var add_row(Var x, Var bias) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    if (bv.size() != d) {
        throw DimensionError("add_row: bias " + shape_string(bv.shape()) + " against " +
                             shape_string(xv.shape()));
    }
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out[i * d + j] = xv[i * d + j] + bv[j];
        }
    }
    return g.record(std::move(out), {x, bias}, [x, bias, n, d](Graph& g, std::uint32_t self) {
        auto dy = g.grad_buffer(self);
        if (g.needs_grad(x.id)) {
            auto dx = g.grad_buffer(x.id);
            for (std::size_t i = 0; i < dx.size(); ++i) {
                dx[i] += dy[i];
            }
        }
        if (g.needs_grad(bias.id)) {
            auto db = g.grad_buffer(bias.id);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    db[j] += dy[i * d + j];
                }
            }
        }
    });
}

Var mul(Var a, Var b) {
    Graph& g = graph_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape("mul", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return g.record(std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
        auto dy = g.grad_buffer(self);
        const Tensor& av = g.value(a.id);
        const Tensor& bv = g.value(b.id);
        if (g.needs_grad(a.id)) {
            auto da = g.grad_buffer(a.id);
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += dy[i] * bv[i];
            }
        }
        if (g.needs_grad(b.id)) {
            auto db = g.grad_buffer(b.id);
            for (std::size_t i = 0; i < db.size(); ++i) {
                db[i] += dy[i] * av[i];
            }
        }
    });
}

Var mul_col(Var x, Var column) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const Tensor& cv = column.value();
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    if (cv.size() != n || cv.cols() != 1) {
        throw DimensionError("mul_col: column " + shape_string(cv.shape()) + " against " +
                             shape_string(xv.shape()));
    }
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out[i * d + j] = cv[i] * xv[i * d + j];
        }
    }
    return g.record(std::move(out), {x, column}, [x, column, n, d](Graph& g, std::uint32_t self) {
        auto dy = g.grad_buffer(self);
        const Tensor& xv = g.value(x.id);
        const Tensor& cv = g.value(column.id);
        if (g.needs_grad(x.id)) {
            auto dx = g.grad_buffer(x.id);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    dx[i * d + j] += dy[i * d + j] * cv[i];
                }
            }
        }
        if (g.needs_grad(column.id)) {
            auto dc = g.grad_buffer(column.id);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    acc += dy[i * d + j] * xv[i * d + j];
                }
                dc[i] += acc;
            }
        }
    });
}

Var scale(Var x, double factor) {
    return affine(x, factor, 0.0);
}

Var affine(Var x, double alpha, double beta) {
    return unary(
        x, [alpha, beta](double v) { return alpha * v + beta; },
        [alpha](double, double) { return alpha; });
}

Var sigmoid(Var x) {
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_derivative(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

Var gelu(Var x) {
    return unary(x, gelu_value, [](double v, double) { return gelu_derivative(v); });
}

Var softmax_rows(Var x) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = xv.values().data() + i * d;
        double* orow = out.values().data() + i * d;
        const double mx = *std::max_element(row, row + d);
        double total = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            orow[j] = std::exp(row[j] - mx);
            total += orow[j];
        }
        for (std::size_t j = 0; j < d; ++j) {
            orow[j] /= total;
        }
    }
    return g.record(std::move(out), {x}, [x, n, d](Graph& g, std::uint32_t self) {
        auto dy = g.grad_buffer(self);
        auto dx = g.grad_buffer(x.id);
        const Tensor& y = g.value(self);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dot += dy[i * d + j] * y[i * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
                dx[i * d + j] += y[i * d + j] * (dy[i * d + j] - dot);
            }
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    if (gv.size() != d || bv.size() != d) {
        throw DimensionError("layer_norm: gain/bias width must equal " + std::to_string(d));
    }
    Tensor out(xv.shape());
    // normalized rows and inverse deviations are saved for the reverse pass
    Tensor normalized(xv.shape());
    std::vector<double> inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = xv.values().data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mean += row[j];
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (row[j] - mean) * (row[j] - mean);
        }
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (row[j] - mean) * inv_std[i];
            normalized[i * d + j] = xhat;
            out[i * d + j] = xhat * gv[j] + bv[j];
        }
    }
    return g.record(
        std::move(out), {x, gain, bias},
        [x, gain, bias, n, d, normalized = std::move(normalized),
         inv_std = std::move(inv_std)](Graph& g, std::uint32_t self) {
            auto dy = g.grad_buffer(self);
            const Tensor& gv = g.value(gain.id);
            if (g.needs_grad(gain.id)) {
                auto dg = g.grad_buffer(gain.id);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                        dg[j] += dy[i * d + j] * normalized[i * d + j];
                    }
                }
            }
            if (g.needs_grad(bias.id)) {
                auto db = g.grad_buffer(bias.id);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                        db[j] += dy[i * d + j];
                    }
                }
            }
            if (g.needs_grad(x.id)) {
                auto dx = g.grad_buffer(x.id);
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t i = 0; i < n; ++i) {
                    double sum_dxhat = 0.0;
                    double sum_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxhat = dy[i * d + j] * gv[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * normalized[i * d + j];
                    }
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxhat = dy[i * d + j] * gv[j];
                        dx[i * d + j] += inv_std[i] * (dxhat - inv_d * sum_dxhat -
                                                       normalized[i * d + j] * inv_d * sum_dxhat_xhat);
                    }
                }
            }
        });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ContractError("concat_cols: no operands");
    }
    Graph& g = graph_of(parts.front());
    const std::size_t n = parts.front().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.graph != &g) {
            throw ContractError("concat_cols: operands from different graphs");
        }
        if (p.rows() != n) {
            throw DimensionError("concat_cols: row counts differ (" + std::to_string(n) + " vs " +
                                 std::to_string(p.rows()) + ")");
        }
        widths.push_back(p.cols());
        total += p.cols();
    }
    Tensor out({n, total});
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(pv.values().data() + i * widths[k], widths[k],
                        out.values().data() + i * total + offset);
        }
        offset += widths[k];
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return g.record(std::move(out), parts,
                    [inputs = std::move(inputs), widths = std::move(widths), n, total](
                        Graph& g, std::uint32_t self) {
                        auto dy = g.grad_buffer(self);
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < inputs.size(); ++k) {
                            if (g.needs_grad(inputs[k].id)) {
                                auto dx = g.grad_buffer(inputs[k].id);
                                for (std::size_t i = 0; i < n; ++i) {
                                    for (std::size_t j = 0; j < widths[k]; ++j) {
                                        dx[i * widths[k] + j] += dy[i * total + offset + j];
                                    }
                                }
                            }
                            offset += widths[k];
                        }
                    });
}

Var slice_cols(Var x, std::size_t begin, std::size_t width) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    if (width == 0 || begin + width > d) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                             std::to_string(begin + width) + ") outside width " + std::to_string(d));
    }
    Tensor out({n, width});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(xv.values().data() + i * d + begin, width, out.values().data() + i * width);
    }
    return g.record(std::move(out), {x}, [x, begin, width, n, d](Graph& g, std::uint32_t self) {
        auto dy = g.grad_buffer(self);
        auto dx = g.grad_buffer(x.id);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < width; ++j) {
                dx[i * d + begin + j] += dy[i * width + j];
            }
        }
    });
}

Var gather_rows(Var table, std::span<const int> ids) {
    Graph& g = graph_of(table);
    const Tensor& tv = table.value();
    const std::size_t rows = tv.rows();
    const std::size_t d = tv.cols();
    if (ids.empty()) {
        throw DimensionError("gather_rows: empty id list");
    }
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
            throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                                 std::to_string(rows) + " rows");
        }
        std::copy_n(tv.values().data() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.values().data() + i * d);
    }
    std::vector<int> saved(ids.begin(), ids.end());
    return g.record(std::move(out), {table}, [table, saved = std::move(saved), d](Graph& g, std::uint32_t self) {
        auto dy = g.grad_buffer(self);
        auto dt = g.grad_buffer(table.id);
        for (std::size_t i = 0; i < saved.size(); ++i) {
            const std::size_t r = static_cast<std::size_t>(saved[i]);
            for (std::size_t j = 0; j < d; ++j) {
                dt[r * d + j] += dy[i * d + j];
            }
        }
    });
}

Var mean_rows(Var x) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    Tensor out({1, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out[j] += xv[i * d + j];
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        out[j] /= static_cast<double>(n);
    }
    return g.record(std::move(out), {x}, [x, n, d](Graph& g, std::uint32_t self) {
        auto dy = g.grad_buffer(self);
        auto dx = g.grad_buffer(x.id);
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                dx[i * d + j] += dy[j] * inv;
            }
        }
    });
}

Var sum(Var x) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    double total = 0.0;
    for (double v : xv.values()) {
        total += v;
    }
    return g.record(Tensor({1, 1}, total), {x}, [x](Graph& g, std::uint32_t self) {
        const double dy = g.grad_buffer(self)[0];
        auto dx = g.grad_buffer(x.id);
        for (double& v : dx) {
            v += dy;
        }
    });
}

Var cross_entropy_sum(Var logits, std::span<const int> targets, int ignore_id) {
    Graph& g = graph_of(logits);
    const Tensor& lv = logits.value();
    const std::size_t n = lv.rows();
    const std::size_t v = lv.cols();
    if (targets.size() != n) {
        throw DimensionError("cross_entropy_sum: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(n) + " rows");
    }
    Tensor probs(lv.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = lv.values().data() + i * v;
        double* prow = probs.values().data() + i * v;
        const double mx = *std::max_element(row, row + v);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            prow[j] = std::exp(row[j] - mx);
            z += prow[j];
        }
        for (std::size_t j = 0; j < v; ++j) {
            prow[j] /= z;
        }
        if (targets[i] == ignore_id) {
            continue;
        }
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
            throw DimensionError("cross_entropy_sum: target " + std::to_string(targets[i]) +
                                 " outside " + std::to_string(v) + " classes");
        }
        total += std::log(z) + mx - row[targets[i]];
    }
    std::vector<int> saved(targets.begin(), targets.end());
    return g.record(Tensor({1, 1}, total), {logits},
                    [logits, saved = std::move(saved), probs = std::move(probs), n, v,
                     ignore_id](Graph& g, std::uint32_t self) {
                        const double dy = g.grad_buffer(self)[0];
                        auto dl = g.grad_buffer(logits.id);
                        for (std::size_t i = 0; i < n; ++i) {
                            if (saved[i] == ignore_id) {
                                continue;
                            }
                            for (std::size_t j = 0; j < v; ++j) {
                                dl[i * v + j] += dy * probs[i * v + j];
                            }
                            dl[i * v + static_cast<std::size_t>(saved[i])] -= dy;
                        }
                    });
}

namespace {

double evaluate_scalar(const std::function<Var(Graph&)>& f, std::size_t coordinate) {
    Graph g;
    const Var out = f(g);
    const Tensor& v = out.value();
    if (v.size() != 1) {
        throw ContractError("grad_check: function must return a scalar");
    }
    if (!std::isfinite(v[0])) {
        throw NumericError("grad_check: non-finite value while perturbing coordinate " +
                           std::to_string(coordinate));
    }
    return v[0];
}

void update_report(GradCheckReport& report, double analytic, double numeric, std::size_t index) {
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_index = index;
    }
}

}  // namespace

GradCheckReport grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) {
        throw ContractError("grad_check: step must be positive");
    }
    std::vector<double> analytic;
    {
        Graph g;
        const Var xin = g.input(x);
        const Var out = f(g, xin);
        g.backward(out);
        auto gx = g.grad(xin);
        analytic.assign(x.size(), 0.0);
        std::copy(gx.begin(), gx.end(), analytic.begin());
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            if (!std::isfinite(analytic[i])) {
                throw NumericError("grad_check: non-finite gradient at coordinate " + std::to_string(i));
            }
        }
    }
    GradCheckReport report;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double original = probe[i];
        probe[i] = original + h;
        const double plus = evaluate_scalar([&](Graph& g) { return f(g, g.constant(probe)); }, i);
        probe[i] = original - h;
        const double minus = evaluate_scalar([&](Graph& g) { return f(g, g.constant(probe)); }, i);
        probe[i] = original;
        update_report(report, analytic[i], (plus - minus) / (2.0 * h), i);
    }
    return report;
}

GradCheckReport grad_check_parameter(const std::function<Var(Graph&)>& f, Tensor& parameter,
                                     double h, std::span<const std::size_t> coordinates) {
    if (!(h > 0.0)) {
        throw ContractError("grad_check: step must be positive");
    }
    const bool had_grad = parameter.requires_grad();
    std::vector<double> saved_grad(parameter.grad().begin(), parameter.grad().end());
    parameter.set_requires_grad(true);
    std::vector<double> analytic(parameter.size(), 0.0);
    {
        Graph g;
        const Var out = f(g);
        g.backward(out);
        g.accumulate_into(parameter);
        std::copy(parameter.grad().begin(), parameter.grad().end(), analytic.begin());
    }
    std::vector<std::size_t> all;
    if (coordinates.empty()) {
        all.resize(parameter.size());
        for (std::size_t i = 0; i < all.size(); ++i) {
            all[i] = i;
        }
        coordinates = all;
    }
    GradCheckReport report;
    for (std::size_t i : coordinates) {
        if (!std::isfinite(analytic[i])) {
            throw NumericError("grad_check: non-finite gradient at coordinate " + std::to_string(i));
        }
        const double original = parameter[i];
        parameter[i] = original + h;
        const double plus = evaluate_scalar(f, i);
        parameter[i] = original - h;
        const double minus = evaluate_scalar(f, i);
        parameter[i] = original;
        update_report(report, analytic[i], (plus - minus) / (2.0 * h), i);
    }
    parameter.set_requires_grad(had_grad);
    if (had_grad) {
        std::copy(saved_grad.begin(), saved_grad.end(), parameter.grad().begin());
    }
    return report;
}

}  // namespace moses
