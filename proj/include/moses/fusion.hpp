// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "moses/attention.hpp"

namespace moses {

// One gate of the global information fusion: g = [H_ref (+) H_x] W_gate + b_gate.
struct GifParams {
    Tensor w_gate;  // 2d x d
    Tensor b_gate;  // d

    static GifParams init(std::size_t d, Rng& rng);
    std::size_t width() const { return b_gate.size(); }
};

template <class Params, class Fn>
void visit_parameters(Params& p, const std::string& prefix, Fn&& fn)
    requires std::is_same_v<std::remove_const_t<Params>, GifParams>
{
    fn(join_name(prefix, "w_gate"), p.w_gate);
    fn(join_name(prefix, "b_gate"), p.b_gate);
}

// Affine gate, optionally squashed by a sigmoid.
Var gif_gate(Var reference, Var stream, const GifParams& p, bool gate_sigmoid = false);

// H + g (.) H_x
Var gif_fuse_bimodal(Var h, Var stream, const GifParams& p, bool gate_sigmoid = false);

// H + g1 (.) H_c1 + g2 (.) H_c2, both gates referenced on H.
Var gif_fuse_trimodal(Var h, Var first, Var second, const GifParams& first_gate,
                      const GifParams& second_gate, bool gate_sigmoid = false);

// (primary, context) pairs the spotlight attends over. Audio and video are
// each conditioned on the other only inside the trimodal members.
enum class CrossPair : std::size_t { TextAudio, AudioText, TextVideo, VideoText, AudioVideo, VideoAudio };
inline constexpr std::size_t kCrossPairs = 6;

// Members of the fused bundle: the text stream plus seven spotlight vectors.
enum class Member : std::size_t {
    Text,
    TextAudio,      // text primary, audio context
    AudioText,      // audio primary, text context
    TextVideo,
    VideoText,
    TextTrimodal,   // text primary, audio + video context
    AudioTrimodal,  // audio primary, text + video context
    VideoTrimodal,  // video primary, text + audio context
};
inline constexpr std::size_t kBundleMembers = 8;

// Gates used while building the seven spotlight vectors.
enum class SpotlightGate : std::size_t {
    TextAudio,
    AudioText,
    TextVideo,
    VideoText,
    TextTrimodalAudio,
    TextTrimodalVideo,
    AudioTrimodalText,
    AudioTrimodalVideo,
    VideoTrimodalText,
    VideoTrimodalAudio,
};
inline constexpr std::size_t kSpotlightGates = 10;

std::string_view member_name(Member m);
std::string_view cross_pair_name(CrossPair p);
std::string_view spotlight_gate_name(SpotlightGate g);

struct SpotlightParams {
    std::array<ContextAttentionParams, kCrossPairs> attention;
    std::array<GifParams, kSpotlightGates> gates;

    static SpotlightParams init(std::size_t d, std::size_t heads, Rng& rng);
    ContextAttentionParams& operator[](CrossPair p) { return attention[static_cast<std::size_t>(p)]; }
    const ContextAttentionParams& operator[](CrossPair p) const { return attention[static_cast<std::size_t>(p)]; }
    GifParams& operator[](SpotlightGate g) { return gates[static_cast<std::size_t>(g)]; }
    const GifParams& operator[](SpotlightGate g) const { return gates[static_cast<std::size_t>(g)]; }
};

template <class Params, class Fn>
void visit_parameters(Params& p, const std::string& prefix, Fn&& fn)
    requires std::is_same_v<std::remove_const_t<Params>, SpotlightParams>
{
    for (std::size_t i = 0; i < kCrossPairs; ++i) {
        visit_parameters(p.attention[i],
                         join_name(prefix, "attn_" + std::string(cross_pair_name(static_cast<CrossPair>(i)))),
                         fn);
    }
    for (std::size_t i = 0; i < kSpotlightGates; ++i) {
        visit_parameters(p.gates[i],
                         join_name(prefix, "gate_" + std::string(spotlight_gate_name(static_cast<SpotlightGate>(i)))),
                         fn);
    }
}

struct GlobalFuseParams {
    std::array<GifParams, kBundleMembers> gates;

    static GlobalFuseParams init(std::size_t d, Rng& rng);
    GifParams& operator[](Member m) { return gates[static_cast<std::size_t>(m)]; }
    const GifParams& operator[](Member m) const { return gates[static_cast<std::size_t>(m)]; }
};

template <class Params, class Fn>
void visit_parameters(Params& p, const std::string& prefix, Fn&& fn)
    requires std::is_same_v<std::remove_const_t<Params>, GlobalFuseParams>
{
    for (std::size_t i = 0; i < kBundleMembers; ++i) {
        visit_parameters(p.gates[i], join_name(prefix, "gate_" + std::string(member_name(static_cast<Member>(i)))), fn);
    }
}

// Fused representations; members the active modalities cannot produce stay empty.
struct SpotlightBundle {
    std::array<std::optional<Var>, kBundleMembers> members;

    std::optional<Var>& operator[](Member m) { return members[static_cast<std::size_t>(m)]; }
    const std::optional<Var>& operator[](Member m) const { return members[static_cast<std::size_t>(m)]; }
    std::size_t present() const;
};

enum class ContextAttention { Mca2, DotProduct };

struct FusionOptions {
    bool gate_sigmoid = false;
    ContextAttention attention = ContextAttention::Mca2;
    Mca2Options mca2;
};

// Fused stream of `primary` conditioned on `context` for one cross pair.
Var cross_context(Var primary, Var context, const ContextAttentionParams& p, const FusionOptions& options);

// Builds every member the supplied streams allow. With both audio and video all
// eight members are produced; with one of them only the text/that-modality
// bimodal pair is. No audio-video bimodal member exists.
SpotlightBundle spotlight(Var text, std::optional<Var> audio, std::optional<Var> video,
                          const SpotlightParams& p, const FusionOptions& options = {});

// Gates for every present member, each referenced on the text stream.
std::array<std::optional<Var>, kBundleMembers> global_fuse_gates(const SpotlightBundle& bundle,
                                                                 const GlobalFuseParams& p,
                                                                 bool gate_sigmoid = false);

// Sum of gate (.) member over present members, in member order.
Var combine_gated(const SpotlightBundle& bundle, const std::array<std::optional<Var>, kBundleMembers>& gates);

// H_all. There is no ungated residual: zero gates give a zero output.
Var global_fuse(const SpotlightBundle& bundle, const GlobalFuseParams& p, bool gate_sigmoid = false);

}  // namespace moses
