// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/attention.hpp"

#include <cmath>
#include <tuple>

#include "moses/errors.hpp"

namespace moses {

namespace {

void expect_shape(const char* what, const Tensor& t, std::size_t rows, std::size_t cols) {
    if (t.rank() != 2 || t.rows() != rows || t.cols() != cols) {
        throw DimensionError(std::string(what) + ": expected [" + std::to_string(rows) + "x" +
                             std::to_string(cols) + "], got " + shape_string(t.shape()));
    }
}

void expect_width(const char* what, Var x, std::size_t width) {
    if (x.cols() != width) {
        throw DimensionError(std::string(what) + ": expected width " + std::to_string(width) +
                             ", got " + shape_string(x.shape()));
    }
}

void expect_rows(const char* what, Var x, std::size_t rows) {
    if (x.rows() != rows) {
        throw DimensionError(std::string(what) + ": expected " + std::to_string(rows) +
                             " rows, got " + shape_string(x.shape()));
    }
}

std::pair<Var, Var> gates_from_projected(Var k, Var v, Var mu_k, Var mu_v,
                                         const ContextAttentionParams& p) {
    Graph& g = *k.graph;
    const Var lambda_k =
        sigmoid(add(matmul(k, g.param(p.w_k1)), matmul(mu_k, g.param(p.w_k2))));
    const Var lambda_v =
        sigmoid(add(matmul(v, g.param(p.w_v1)), matmul(mu_v, g.param(p.w_v2))));
    return {lambda_k, lambda_v};
}

// (1 - lambda) * x + lambda * context
Var convex_mix(Var x, Var context, Var lambda) {
    return add(mul_col(x, affine(lambda, -1.0, 1.0)), mul_col(context, lambda));
}

}  // namespace

ContextAttentionParams ContextAttentionParams::init(std::size_t d, std::size_t d_c, std::size_t heads,
                                                   Rng& rng) {
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("context attention: width " + std::to_string(d) +
                          " is not divisible by head count " + std::to_string(heads));
    }
    ContextAttentionParams p;
    p.d = d;
    p.d_c = d_c;
    p.head_count = heads;
    p.w_q = uniform_parameter(d, d, rng);
    p.w_k = uniform_parameter(d, d, rng);
    p.w_v = uniform_parameter(d, d, rng);
    p.u_k = uniform_parameter(d_c, d, rng);
    p.u_v = uniform_parameter(d_c, d, rng);
    p.w_k1 = uniform_parameter(d, 1, rng);
    p.w_v1 = uniform_parameter(d, 1, rng);
    p.w_k2 = uniform_parameter(d, 1, rng);
    p.w_v2 = uniform_parameter(d, 1, rng);
    return p;
}

void ContextAttentionParams::validate() const {
    if (head_count == 0 || d % head_count != 0) {
        throw ConfigError("context attention: width " + std::to_string(d) +
                          " is not divisible by head count " + std::to_string(head_count));
    }
    expect_shape("W_q", w_q, d, d);
    expect_shape("W_k", w_k, d, d);
    expect_shape("W_v", w_v, d, d);
    expect_shape("U_k", u_k, d_c, d);
    expect_shape("U_v", u_v, d_c, d);
    expect_shape("W_k1", w_k1, d, 1);
    expect_shape("W_v1", w_v1, d, 1);
    expect_shape("W_k2", w_k2, d, 1);
    expect_shape("W_v2", w_v2, d, 1);
}

Tensor AttentionOutput::weights() const {
    if (head_weights.empty()) {
        throw ContractError("attention output carries no weights");
    }
    const Tensor& first = head_weights.front().value();
    const std::size_t n = first.rows();
    const std::size_t m = first.cols();
    Tensor out({head_weights.size(), n, m});
    for (std::size_t h = 0; h < head_weights.size(); ++h) {
        const Tensor& w = head_weights[h].value();
        std::copy(w.values().begin(), w.values().end(), out.values().begin() + h * n * m);
    }
    return out;
}

QueryKeyValue project_qkv(Var h, const ContextAttentionParams& p) {
    expect_width("project_qkv: H", h, p.d);
    Graph& g = *h.graph;
    return {matmul(h, g.param(p.w_q)), matmul(h, g.param(p.w_k)), matmul(h, g.param(p.w_v))};
}

std::pair<Var, Var> context_gate_lambda(Var k, Var v, Var m, const ContextAttentionParams& p) {
    expect_width("context_gate_lambda: M", m, p.d_c);
    expect_width("context_gate_lambda: k", k, p.d);
    expect_width("context_gate_lambda: v", v, p.d);
    expect_rows("context_gate_lambda: M", m, k.rows());
    expect_rows("context_gate_lambda: v", v, k.rows());
    Graph& g = *k.graph;
    return gates_from_projected(k, v, matmul(m, g.param(p.u_k)), matmul(m, g.param(p.u_v)), p);
}

std::pair<Var, Var> contextual_kv(Var k, Var v, Var m, Var lambda_k, Var lambda_v,
                                  const ContextAttentionParams& p) {
    expect_width("contextual_kv: M", m, p.d_c);
    expect_rows("contextual_kv: M", m, k.rows());
    expect_rows("contextual_kv: lambda_k", lambda_k, k.rows());
    expect_rows("contextual_kv: lambda_v", lambda_v, v.rows());
    if (lambda_k.cols() != 1 || lambda_v.cols() != 1) {
        throw DimensionError("contextual_kv: gates must be n x 1");
    }
    Graph& g = *k.graph;
    const Var mu_k = matmul(m, g.param(p.u_k));
    const Var mu_v = matmul(m, g.param(p.u_v));
    return {convex_mix(k, mu_k, lambda_k), convex_mix(v, mu_v, lambda_v)};
}

AttentionOutput scaled_dot_attention(Var q, Var k, Var v, std::size_t heads, bool causal) {
    const std::size_t d = q.cols();
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("scaled_dot_attention: width " + std::to_string(d) +
                          " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (k.cols() != d || v.cols() != d) {
        throw DimensionError("scaled_dot_attention: q " + shape_string(q.shape()) + ", k " +
                             shape_string(k.shape()) + ", v " + shape_string(v.shape()));
    }
    if (k.rows() != v.rows()) {
        throw DimensionError("scaled_dot_attention: key/value row counts differ");
    }
    Graph& g = *q.graph;
    const std::size_t n = q.rows();
    const std::size_t m = k.rows();
    const std::size_t head_width = d / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_width));

    std::optional<Var> mask;
    if (causal) {
        Tensor mask_values({n, m});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < m; ++j) {
                mask_values(i, j) = kMaskValue;
            }
        }
        mask = g.constant(std::move(mask_values));
    }

    AttentionOutput out;
    std::vector<Var> head_outputs;
    for (std::size_t h = 0; h < heads; ++h) {
        const Var qh = heads == 1 ? q : slice_cols(q, h * head_width, head_width);
        const Var kh = heads == 1 ? k : slice_cols(k, h * head_width, head_width);
        const Var vh = heads == 1 ? v : slice_cols(v, h * head_width, head_width);
        Var scores = scale(matmul_nt(qh, kh), scale_factor);
        if (mask) {
            scores = add(scores, *mask);
        }
        const Var weights = softmax_rows(scores);
        out.head_weights.push_back(weights);
        head_outputs.push_back(matmul(weights, vh));
    }
    out.fused = heads == 1 ? head_outputs.front() : concat_cols(head_outputs);
    return out;
}

AttentionOutput mca2_attend(Var h, Var m, const ContextAttentionParams& p, const Mca2Options& options) {
    expect_width("mca2_attend: M", m, p.d_c);
    expect_rows("mca2_attend: M", m, h.rows());
    Graph& g = *h.graph;
    const QueryKeyValue qkv = project_qkv(h, p);
    const Var mu_k = matmul(m, g.param(p.u_k));
    const Var mu_v = matmul(m, g.param(p.u_v));
    Var lambda_k;
    Var lambda_v;
    if (options.forced_lambda) {
        lambda_k = g.constant(Tensor({h.rows(), 1}, *options.forced_lambda));
        lambda_v = g.constant(Tensor({h.rows(), 1}, *options.forced_lambda));
    } else {
        std::tie(lambda_k, lambda_v) = gates_from_projected(qkv.k, qkv.v, mu_k, mu_v, p);
    }
    const Var k_m = convex_mix(qkv.k, mu_k, lambda_k);
    const Var v_m = convex_mix(qkv.v, mu_v, lambda_v);
    AttentionOutput out = scaled_dot_attention(qkv.q, k_m, v_m, p.head_count, false);
    out.lambda_k = lambda_k;
    out.lambda_v = lambda_v;
    out.k_m = k_m;
    out.v_m = v_m;
    return out;
}

AttentionOutput dot_product_cross_attend(Var h, Var m, const ContextAttentionParams& p) {
    expect_width("dot_product_cross_attend: H", h, p.d);
    expect_width("dot_product_cross_attend: M", m, p.d_c);
    Graph& g = *h.graph;
    const Var q = matmul(h, g.param(p.w_q));
    const Var k = matmul(m, g.param(p.u_k));
    const Var v = matmul(m, g.param(p.u_v));
    return scaled_dot_attention(q, k, v, p.head_count, false);
}

}  // namespace moses
