// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "moses/autograd.hpp"
#include "moses/parameters.hpp"

namespace moses {

// Masked attention logits. exp(-1e9 - max) underflows to exactly zero.
inline constexpr double kMaskValue = -1e9;

// Projections of the multimodal context-aware attention block. `d` is the width
// of the primary stream, `d_c` the width of the context stream.
struct ContextAttentionParams {
    std::size_t d = 0;
    std::size_t d_c = 0;
    std::size_t head_count = 1;
    Tensor w_q, w_k, w_v;     // d x d
    Tensor u_k, u_v;          // d_c x d
    Tensor w_k1, w_v1;        // d x 1, gate weights on the primary key/value
    Tensor w_k2, w_v2;        // d x 1, gate weights on the projected context

    static ContextAttentionParams init(std::size_t d, std::size_t d_c, std::size_t heads, Rng& rng);
    void validate() const;
};

template <class Params, class Fn>
void visit_parameters(Params& p, const std::string& prefix, Fn&& fn)
    requires std::is_same_v<std::remove_const_t<Params>, ContextAttentionParams>
{
    fn(join_name(prefix, "w_q"), p.w_q);
    fn(join_name(prefix, "w_k"), p.w_k);
    fn(join_name(prefix, "w_v"), p.w_v);
    fn(join_name(prefix, "u_k"), p.u_k);
    fn(join_name(prefix, "u_v"), p.u_v);
    fn(join_name(prefix, "w_k1"), p.w_k1);
    fn(join_name(prefix, "w_v1"), p.w_v1);
    fn(join_name(prefix, "w_k2"), p.w_k2);
    fn(join_name(prefix, "w_v2"), p.w_v2);
}

struct AttentionOutput {
    Var fused;                       // n x d, heads concatenated
    std::vector<Var> head_weights;   // one n x m matrix per head
    std::optional<Var> lambda_k;     // n x 1, context-aware attention only
    std::optional<Var> lambda_v;
    std::optional<Var> k_m;          // n x d, keys actually attended to
    std::optional<Var> v_m;

    // Attention weights stacked as heads x n x m.
    Tensor weights() const;
};

struct QueryKeyValue {
    Var q, k, v;
};

QueryKeyValue project_qkv(Var h, const ContextAttentionParams& p);

// lambda = sigmoid(k W_k1 + (M U_k) W_k2), and the same for values.
std::pair<Var, Var> context_gate_lambda(Var k, Var v, Var m, const ContextAttentionParams& p);

// k_m = (1 - lambda_k) * k + lambda_k * (M U_k); lambda broadcasts along rows.
std::pair<Var, Var> contextual_kv(Var k, Var v, Var m, Var lambda_k, Var lambda_v,
                                  const ContextAttentionParams& p);

// Multi-head softmax(q k^T / sqrt(d / heads)) v. With `causal`, key j > i is masked for query i.
AttentionOutput scaled_dot_attention(Var q, Var k, Var v, std::size_t heads, bool causal);

struct Mca2Options {
    // Replaces both gates with this constant, bypassing the learned sigmoid.
    std::optional<double> forced_lambda;
};

// Context-aware attention of a primary stream `h` (n x d) conditioned on `m` (n x d_c).
// The gates are computed once on full-width keys/values and shared by all heads.
AttentionOutput mca2_attend(Var h, Var m, const ContextAttentionParams& p, const Mca2Options& options = {});

// Plain cross-attention baseline: queries from `h`, keys/values projected from `m`
// through U_k and U_v. Uses the same parameter block; gate weights and W_k/W_v stay idle.
AttentionOutput dot_product_cross_attend(Var h, Var m, const ContextAttentionParams& p);

}  // namespace moses
