// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "moses/attention.hpp"
#include "moses/errors.hpp"
#include "oracles.hpp"

using namespace moses;

namespace {

ContextAttentionParams scalar_params(double value) {
    ContextAttentionParams p;
    p.d = 1;
    p.d_c = 1;
    p.head_count = 1;
    for (Tensor* t : {&p.w_q, &p.w_k, &p.w_v, &p.u_k, &p.u_v, &p.w_k1, &p.w_v1, &p.w_k2, &p.w_v2}) {
        *t = Tensor::matrix(1, 1, {value});
    }
    return p;
}

void zero_gate_weights(ContextAttentionParams& p) {
    for (Tensor* t : {&p.w_k1, &p.w_v1, &p.w_k2, &p.w_v2}) {
        *t = Tensor(t->shape(), 0.0);
    }
}

// Single-head attention written out with loops.
Tensor reference_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const std::size_t n = q.rows();
    const std::size_t m = k.rows();
    const std::size_t d = q.cols();
    Tensor out({n, v.cols()});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(m);
        double hi = -1e300;
        for (std::size_t j = 0; j < m; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                dot += q(i, c) * k(j, c);
            }
            s[j] = dot / std::sqrt(static_cast<double>(d));
            hi = std::max(hi, s[j]);
        }
        double z = 0.0;
        for (double& x : s) {
            x = std::exp(x - hi);
            z += x;
        }
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t c = 0; c < v.cols(); ++c) {
                out(i, c) += s[j] / z * v(j, c);
            }
        }
    }
    return out;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(i, c) = x(perm[i], c);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("project_qkv with identity projections returns H three times") {
    Rng rng(1);
    auto p = ContextAttentionParams::init(3, 2, 1, rng);
    p.w_q = p.w_k = p.w_v = Tensor::identity(3);
    const Tensor h = oracle::random_tensor({4, 3}, rng);
    Graph g;
    const auto qkv = project_qkv(g.constant(h), p);
    CHECK(qkv.q.value().same_values(h));
    CHECK(qkv.k.value().same_values(h));
    CHECK(qkv.v.value().same_values(h));

    const auto zero = project_qkv(g.constant(Tensor({4, 3}, 0.0)), p);
    for (const Var& x : {zero.q, zero.k, zero.v}) {
        for (double value : x.value().values()) {
            CHECK(value == 0.0);
        }
    }
}

TEST_CASE("project_qkv 2x2 hand product") {
    Rng rng(2);
    auto p = ContextAttentionParams::init(2, 2, 1, rng);
    p.w_q = Tensor::matrix(2, 2, {1, 2, 3, 4});
    p.w_k = Tensor::matrix(2, 2, {0, 1, 1, 0});
    p.w_v = Tensor::matrix(2, 2, {2, 0, 0, -1});
    Graph g;
    const auto qkv = project_qkv(g.constant(Tensor::matrix(2, 2, {1, 1, 2, -1})), p);
    CHECK(qkv.q.value().same_values(Tensor::matrix(2, 2, {4, 6, -1, 0})));
    CHECK(qkv.k.value().same_values(Tensor::matrix(2, 2, {1, 1, -1, 2})));
    CHECK(qkv.v.value().same_values(Tensor::matrix(2, 2, {2, -1, 4, 1})));

    CHECK_THROWS_AS(project_qkv(g.constant(Tensor({2, 3})), p), DimensionError);
}

TEST_CASE("context gate lambda closed forms") {
    Rng rng(3);
    auto p = ContextAttentionParams::init(4, 3, 2, rng);
    zero_gate_weights(p);
    Graph g;
    const Var k = g.constant(oracle::random_tensor({5, 4}, rng));
    const Var v = g.constant(oracle::random_tensor({5, 4}, rng));
    const Var m = g.constant(oracle::random_tensor({5, 3}, rng));
    const auto [lk, lv] = context_gate_lambda(k, v, m, p);
    CHECK(lk.shape() == Shape{5, 1});
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(lk.value()[i] == 0.5);
        CHECK(lv.value()[i] == 0.5);
    }
    CHECK_THROWS_AS(context_gate_lambda(k, v, g.constant(Tensor({5, 4})), p), DimensionError);
    CHECK_THROWS_AS(context_gate_lambda(k, v, g.constant(Tensor({4, 3})), p), DimensionError);

    const auto one = scalar_params(1.0);
    Graph s;
    const Var unit = s.constant(Tensor::matrix(1, 1, {1.0}));
    const auto [sk, sv] = context_gate_lambda(unit, unit, unit, one);
    const double expected = 1.0 / (1.0 + std::exp(-2.0));
    CHECK(sk.value()[0] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(sv.value()[0] == doctest::Approx(0.880797).epsilon(1e-6));
}

TEST_CASE("lambda gradient wrt W_k1 matches finite differences") {
    Rng rng(4);
    auto p = ContextAttentionParams::init(4, 3, 1, rng);
    const Tensor k = oracle::random_tensor({3, 4}, rng);
    const Tensor v = oracle::random_tensor({3, 4}, rng);
    const Tensor m = oracle::random_tensor({3, 3}, rng);
    const auto report = grad_check_parameter(
        [&](Graph& g) {
            return sum(context_gate_lambda(g.constant(k), g.constant(v), g.constant(m), p).first);
        },
        p.w_k1, 1e-5);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("contextual_kv degenerate and scalar cases") {
    Rng rng(5);
    auto p = ContextAttentionParams::init(3, 2, 1, rng);
    Graph g;
    const Tensor kt = oracle::random_tensor({4, 3}, rng);
    const Tensor vt = oracle::random_tensor({4, 3}, rng);
    const Tensor mt = oracle::random_tensor({4, 2}, rng);
    const Var k = g.constant(kt);
    const Var v = g.constant(vt);
    const Var m = g.constant(mt);
    const Var zeros = g.constant(Tensor({4, 1}, 0.0));
    const Var ones = g.constant(Tensor({4, 1}, 1.0));

    const auto [k0, v0] = contextual_kv(k, v, m, zeros, zeros, p);
    CHECK(k0.value().same_values(kt));
    CHECK(v0.value().same_values(vt));

    const auto [k1, v1] = contextual_kv(k, v, m, ones, ones, p);
    CHECK(max_abs_diff(k1.value(), oracle::naive_matmul(mt, p.u_k)) < 1e-15);
    CHECK(max_abs_diff(v1.value(), oracle::naive_matmul(mt, p.u_v)) < 1e-15);

    auto s = scalar_params(1.0);
    s.u_k = Tensor::matrix(1, 1, {4.0});
    Graph h;
    const Var half = h.constant(Tensor::matrix(1, 1, {0.5}));
    const auto [km, vm] = contextual_kv(h.constant(Tensor::matrix(1, 1, {2.0})), h.constant(Tensor::matrix(1, 1, {2.0})),
                                        h.constant(Tensor::matrix(1, 1, {1.0})), half, half, s);
    CHECK(km.value()[0] == 3.0);
    CHECK(vm.value()[0] == 1.5);

    CHECK_THROWS_AS(contextual_kv(k, v, m, g.constant(Tensor({3, 1})), zeros, p), DimensionError);
    CHECK_THROWS_AS(contextual_kv(k, v, m, g.constant(Tensor({4, 2})), zeros, p), DimensionError);
}

TEST_CASE("scaled_dot_attention single key and identical keys") {
    Rng rng(6);
    Graph g;
    const Tensor v1 = oracle::random_tensor({1, 4}, rng);
    const auto single = scaled_dot_attention(g.constant(oracle::random_tensor({1, 4}, rng)),
                                             g.constant(oracle::random_tensor({1, 4}, rng)),
                                             g.constant(v1), 2, false);
    CHECK(single.fused.value().same_values(v1));
    CHECK(single.weights().same_values(Tensor({2, 1, 1}, 1.0)));

    const Tensor row = oracle::random_tensor({1, 4}, rng);
    const Tensor keys = Tensor::from_rows({{row[0], row[1], row[2], row[3]},
                                           {row[0], row[1], row[2], row[3]},
                                           {row[0], row[1], row[2], row[3]}});
    const auto uniform = scaled_dot_attention(g.constant(oracle::random_tensor({3, 4}, rng)), g.constant(keys),
                                              g.constant(oracle::random_tensor({3, 4}, rng)), 1, false);
    const Tensor weights = uniform.weights();
    for (double w : weights.values()) {
        CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    CHECK_THROWS_AS(scaled_dot_attention(g.constant(keys), g.constant(keys), g.constant(keys), 3, false),
                    ConfigError);
}

TEST_CASE("scaled_dot_attention n=2 d=1 brute force") {
    Graph g;
    const auto out = scaled_dot_attention(g.constant(Tensor::matrix(2, 1, {0.5, -1.0})),
                                          g.constant(Tensor::matrix(2, 1, {2.0, 1.0})),
                                          g.constant(Tensor::matrix(2, 1, {3.0, -2.0})), 1, false);
    for (std::size_t i = 0; i < 2; ++i) {
        const double q = i == 0 ? 0.5 : -1.0;
        const double e0 = std::exp(q * 2.0);
        const double e1 = std::exp(q * 1.0);
        const double w0 = e0 / (e0 + e1);
        CHECK(std::abs(out.weights()[i * 2] - w0) <= 1e-12);
        CHECK(std::abs(out.fused.value()[i] - (w0 * 3.0 + (1.0 - w0) * -2.0)) <= 1e-12);
    }
}

TEST_CASE("multi-head attention equals per-head reference") {
    Rng rng(7);
    const Tensor q = oracle::random_tensor({3, 6}, rng);
    const Tensor k = oracle::random_tensor({5, 6}, rng);
    const Tensor v = oracle::random_tensor({5, 6}, rng);
    Graph g;
    const auto out = scaled_dot_attention(g.constant(q), g.constant(k), g.constant(v), 3, false);
    CHECK(out.weights().shape() == Shape{3, 3, 5});
    for (std::size_t h = 0; h < 3; ++h) {
        Tensor qh({3, 2}), kh({5, 2}), vh({5, 2});
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t i = 0; i < 3; ++i) {
                qh(i, c) = q(i, 2 * h + c);
            }
            for (std::size_t j = 0; j < 5; ++j) {
                kh(j, c) = k(j, 2 * h + c);
                vh(j, c) = v(j, 2 * h + c);
            }
        }
        const Tensor ref = reference_attention(qh, kh, vh);
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t c = 0; c < 2; ++c) {
                CHECK(std::abs(out.fused.value()(i, 2 * h + c) - ref(i, c)) <= 1e-12);
            }
        }
    }
}

TEST_CASE("attention rows sum to one and causal mask zeroes the future") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.below(6);
        Graph g;
        const auto out = scaled_dot_attention(g.constant(oracle::random_tensor({n, 4}, rng, -3, 3)),
                                              g.constant(oracle::random_tensor({n, 4}, rng, -3, 3)),
                                              g.constant(oracle::random_tensor({n, 4}, rng)), 2, true);
        const Tensor w = out.weights();
        for (std::size_t h = 0; h < 2; ++h) {
            for (std::size_t i = 0; i < n; ++i) {
                double total = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double x = w[(h * n + i) * n + j];
                    total += x;
                    if (j > i) {
                        CHECK(x == 0.0);
                    }
                }
                CHECK(std::abs(total - 1.0) <= 1e-9);
            }
        }
    }
}

TEST_CASE("mca2 with forced zero lambda degenerates to dot-product attention") {
    Rng rng(9);
    const auto p = ContextAttentionParams::init(6, 4, 2, rng);
    const Tensor h = oracle::random_tensor({5, 6}, rng);
    const Tensor m = oracle::random_tensor({5, 4}, rng);
    Graph g;
    const auto out = mca2_attend(g.constant(h), g.constant(m), p, {.forced_lambda = 0.0});
    const auto qkv = project_qkv(g.constant(h), p);
    const auto plain = scaled_dot_attention(qkv.q, qkv.k, qkv.v, 2, false);
    CHECK(max_abs_diff(out.fused.value(), plain.fused.value()) <= 1e-12);
    CHECK(max_abs_diff(out.weights(), plain.weights()) <= 1e-12);
}

TEST_CASE("mca2 with forced unit lambda ignores W_k and W_v") {
    Rng rng(10);
    auto p = ContextAttentionParams::init(4, 3, 2, rng);
    const Tensor h = oracle::random_tensor({4, 4}, rng);
    const Tensor m = oracle::random_tensor({4, 3}, rng);
    Graph g;
    const Tensor before = mca2_attend(g.constant(h), g.constant(m), p, {.forced_lambda = 1.0}).fused.value();
    p.w_k = oracle::random_tensor({4, 4}, rng, -3, 3);
    p.w_v = oracle::random_tensor({4, 4}, rng, -3, 3);
    Graph g2;
    const Tensor after = mca2_attend(g2.constant(h), g2.constant(m), p, {.forced_lambda = 1.0}).fused.value();
    CHECK(max_abs_diff(before, after) <= 1e-12);
}

TEST_CASE("mca2 with zero context matches the composed components") {
    Rng rng(11);
    const auto p = ContextAttentionParams::init(4, 3, 1, rng);
    const Tensor h = oracle::random_tensor({3, 4}, rng);
    Graph g;
    const auto out = mca2_attend(g.constant(h), g.constant(Tensor({3, 3}, 0.0)), p);

    const Tensor q = oracle::naive_matmul(h, p.w_q);
    const Tensor k = oracle::naive_matmul(h, p.w_k);
    const Tensor v = oracle::naive_matmul(h, p.w_v);
    const Tensor zk = oracle::naive_matmul(k, p.w_k1);
    const Tensor zv = oracle::naive_matmul(v, p.w_v1);
    Tensor km(k.shape()), vm(v.shape());
    for (std::size_t i = 0; i < 3; ++i) {
        const double lk = 1.0 / (1.0 + std::exp(-zk[i]));
        const double lv = 1.0 / (1.0 + std::exp(-zv[i]));
        CHECK(std::abs(out.lambda_k->value()[i] - lk) <= 1e-14);
        CHECK(std::abs(out.lambda_v->value()[i] - lv) <= 1e-14);
        for (std::size_t c = 0; c < 4; ++c) {
            km(i, c) = (1.0 - lk) * k(i, c);
            vm(i, c) = (1.0 - lv) * v(i, c);
        }
    }
    CHECK(max_abs_diff(out.k_m->value(), km) <= 1e-14);
    CHECK(max_abs_diff(out.fused.value(), reference_attention(q, km, vm)) <= 1e-12);
}

TEST_CASE("mca2 lambdas lie strictly inside (0, 1)") {
    Rng rng(12);
    const auto p = ContextAttentionParams::init(4, 2, 2, rng);
    Graph g;
    const auto out = mca2_attend(g.constant(oracle::random_tensor({6, 4}, rng, -2, 2)),
                                 g.constant(oracle::random_tensor({6, 2}, rng, -2, 2)), p);
    for (const auto& lam : {out.lambda_k, out.lambda_v}) {
        for (double x : lam->value().values()) {
            CHECK(x > 0.0);
            CHECK(x < 1.0);
        }
    }
}

TEST_CASE("mca2 is equivariant to joint row permutations of H and M") {
    Rng rng(13);
    const auto p = ContextAttentionParams::init(4, 3, 2, rng);
    const Tensor h = oracle::random_tensor({5, 4}, rng);
    const Tensor m = oracle::random_tensor({5, 3}, rng);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    Graph g;
    const Tensor base = mca2_attend(g.constant(h), g.constant(m), p).fused.value();
    const Tensor moved =
        mca2_attend(g.constant(permute_rows(h, perm)), g.constant(permute_rows(m, perm)), p).fused.value();
    CHECK(max_abs_diff(moved, permute_rows(base, perm)) <= 1e-12);
}

TEST_CASE("mca2 gradients of every parameter match finite differences") {
    Rng rng(14);
    auto p = ContextAttentionParams::init(4, 3, 2, rng);
    const Tensor h = oracle::random_tensor({3, 4}, rng);
    const Tensor m = oracle::random_tensor({3, 3}, rng);
    const auto f = [&](Graph& g) { return sum(mca2_attend(g.constant(h), g.constant(m), p).fused); };
    visit_parameters(p, "mca2", [&](const std::string& name, Tensor& t) {
        CAPTURE(name);
        CHECK(grad_check_parameter(f, t, 1e-5).max_rel_error < 1e-4);
    });
    CHECK(grad_check([&](Graph& g, Var x) { return sum(mca2_attend(x, g.constant(m), p).fused); }, h, 1e-5)
              .max_rel_error < 1e-4);
    CHECK(grad_check([&](Graph& g, Var x) { return sum(mca2_attend(g.constant(h), x, p).fused); }, m, 1e-5)
              .max_rel_error < 1e-4);
}

TEST_CASE("dot-product cross attention takes keys and values from the context") {
    Rng rng(15);
    const auto p = ContextAttentionParams::init(4, 3, 1, rng);
    const Tensor h = oracle::random_tensor({3, 4}, rng);
    const Tensor m = oracle::random_tensor({3, 3}, rng);
    Graph g;
    const auto out = dot_product_cross_attend(g.constant(h), g.constant(m), p);
    const Tensor ref = reference_attention(oracle::naive_matmul(h, p.w_q), oracle::naive_matmul(m, p.u_k),
                                           oracle::naive_matmul(m, p.u_v));
    CHECK(max_abs_diff(out.fused.value(), ref) <= 1e-12);
}

TEST_CASE("parameter validation") {
    Rng rng(16);
    CHECK_THROWS_AS(ContextAttentionParams::init(6, 4, 4, rng), ConfigError);
    auto p = ContextAttentionParams::init(4, 3, 2, rng);
    CHECK_NOTHROW(p.validate());
    p.u_k = Tensor({4, 4});
    CHECK_THROWS_AS(p.validate(), DimensionError);
}
