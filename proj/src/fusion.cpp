// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/fusion.hpp"

#include "moses/errors.hpp"

namespace moses {

namespace {

void expect_same(const char* what, Var a, Var b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(what) + ": " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

}  // namespace

GifParams GifParams::init(std::size_t d, Rng& rng) {
    GifParams p;
    p.w_gate = uniform_parameter(2 * d, d, rng);
    p.b_gate = constant_parameter({d}, 0.0);
    return p;
}

Var gif_gate(Var reference, Var stream, const GifParams& p, bool gate_sigmoid) {
    expect_same("gif_gate", reference, stream);
    if (p.w_gate.rows() != 2 * reference.cols() || p.w_gate.cols() != reference.cols() ||
        p.b_gate.size() != reference.cols()) {
        throw DimensionError("gif_gate: parameters " + shape_string(p.w_gate.shape()) + "/" +
                             shape_string(p.b_gate.shape()) + " against stream " +
                             shape_string(reference.shape()));
    }
    Graph& g = *reference.graph;
    const Var parts[] = {reference, stream};
    const Var gate = add_row(matmul(concat_cols(parts), g.param(p.w_gate)), g.param(p.b_gate));
    return gate_sigmoid ? sigmoid(gate) : gate;
}

Var gif_fuse_bimodal(Var h, Var stream, const GifParams& p, bool gate_sigmoid) {
    return add(h, mul(gif_gate(h, stream, p, gate_sigmoid), stream));
}

Var gif_fuse_trimodal(Var h, Var first, Var second, const GifParams& first_gate,
                      const GifParams& second_gate, bool gate_sigmoid) {
    expect_same("gif_fuse_trimodal", first, second);
    const Var g1 = gif_gate(h, first, first_gate, gate_sigmoid);
    const Var g2 = gif_gate(h, second, second_gate, gate_sigmoid);
    return add(add(h, mul(g1, first)), mul(g2, second));
}

std::string_view member_name(Member m) {
    switch (m) {
        case Member::Text: return "text";
        case Member::TextAudio: return "text_audio";
        case Member::AudioText: return "audio_text";
        case Member::TextVideo: return "text_video";
        case Member::VideoText: return "video_text";
        case Member::TextTrimodal: return "text_trimodal";
        case Member::AudioTrimodal: return "audio_trimodal";
        case Member::VideoTrimodal: return "video_trimodal";
    }
    return "?";
}

std::string_view cross_pair_name(CrossPair p) {
    switch (p) {
        case CrossPair::TextAudio: return "text_audio";
        case CrossPair::AudioText: return "audio_text";
        case CrossPair::TextVideo: return "text_video";
        case CrossPair::VideoText: return "video_text";
        case CrossPair::AudioVideo: return "audio_video";
        case CrossPair::VideoAudio: return "video_audio";
    }
    return "?";
}

std::string_view spotlight_gate_name(SpotlightGate g) {
    switch (g) {
        case SpotlightGate::TextAudio: return "text_audio";
        case SpotlightGate::AudioText: return "audio_text";
        case SpotlightGate::TextVideo: return "text_video";
        case SpotlightGate::VideoText: return "video_text";
        case SpotlightGate::TextTrimodalAudio: return "text_trimodal_audio";
        case SpotlightGate::TextTrimodalVideo: return "text_trimodal_video";
        case SpotlightGate::AudioTrimodalText: return "audio_trimodal_text";
        case SpotlightGate::AudioTrimodalVideo: return "audio_trimodal_video";
        case SpotlightGate::VideoTrimodalText: return "video_trimodal_text";
        case SpotlightGate::VideoTrimodalAudio: return "video_trimodal_audio";
    }
    return "?";
}

SpotlightParams SpotlightParams::init(std::size_t d, std::size_t heads, Rng& rng) {
    SpotlightParams p;
    for (auto& a : p.attention) {
        a = ContextAttentionParams::init(d, d, heads, rng);
    }
    for (auto& gate : p.gates) {
        gate = GifParams::init(d, rng);
    }
    return p;
}

GlobalFuseParams GlobalFuseParams::init(std::size_t d, Rng& rng) {
    GlobalFuseParams p;
    for (auto& gate : p.gates) {
        gate = GifParams::init(d, rng);
    }
    return p;
}

std::size_t SpotlightBundle::present() const {
    std::size_t n = 0;
    for (const auto& m : members) {
        n += m.has_value() ? 1 : 0;
    }
    return n;
}

Var cross_context(Var primary, Var context, const ContextAttentionParams& p, const FusionOptions& options) {
    if (options.attention == ContextAttention::DotProduct) {
        return dot_product_cross_attend(primary, context, p).fused;
    }
    return mca2_attend(primary, context, p, options.mca2).fused;
}

SpotlightBundle spotlight(Var text, std::optional<Var> audio, std::optional<Var> video,
                          const SpotlightParams& p, const FusionOptions& options) {
    if (audio) {
        expect_same("spotlight: audio stream", text, *audio);
    }
    if (video) {
        expect_same("spotlight: video stream", text, *video);
    }
    const bool sig = options.gate_sigmoid;
    const auto ctx = [&](Var primary, Var context, CrossPair pair) {
        return cross_context(primary, context, p[pair], options);
    };

    SpotlightBundle b;
    b[Member::Text] = text;
    std::optional<Var> text_on_audio, audio_on_text, text_on_video, video_on_text;
    if (audio) {
        text_on_audio = ctx(text, *audio, CrossPair::TextAudio);
        audio_on_text = ctx(*audio, text, CrossPair::AudioText);
        b[Member::TextAudio] = gif_fuse_bimodal(text, *text_on_audio, p[SpotlightGate::TextAudio], sig);
        b[Member::AudioText] = gif_fuse_bimodal(*audio, *audio_on_text, p[SpotlightGate::AudioText], sig);
    }
    if (video) {
        text_on_video = ctx(text, *video, CrossPair::TextVideo);
        video_on_text = ctx(*video, text, CrossPair::VideoText);
        b[Member::TextVideo] = gif_fuse_bimodal(text, *text_on_video, p[SpotlightGate::TextVideo], sig);
        b[Member::VideoText] = gif_fuse_bimodal(*video, *video_on_text, p[SpotlightGate::VideoText], sig);
    }
    if (audio && video) {
        const Var audio_on_video = ctx(*audio, *video, CrossPair::AudioVideo);
        const Var video_on_audio = ctx(*video, *audio, CrossPair::VideoAudio);
        b[Member::TextTrimodal] =
            gif_fuse_trimodal(text, *text_on_audio, *text_on_video, p[SpotlightGate::TextTrimodalAudio],
                              p[SpotlightGate::TextTrimodalVideo], sig);
        b[Member::AudioTrimodal] =
            gif_fuse_trimodal(*audio, *audio_on_text, audio_on_video, p[SpotlightGate::AudioTrimodalText],
                              p[SpotlightGate::AudioTrimodalVideo], sig);
        b[Member::VideoTrimodal] =
            gif_fuse_trimodal(*video, *video_on_text, video_on_audio, p[SpotlightGate::VideoTrimodalText],
                              p[SpotlightGate::VideoTrimodalAudio], sig);
    }
    return b;
}

std::array<std::optional<Var>, kBundleMembers> global_fuse_gates(const SpotlightBundle& bundle,
                                                                 const GlobalFuseParams& p,
                                                                 bool gate_sigmoid) {
    const auto& text = bundle[Member::Text];
    if (!text) {
        throw ContractError("global_fuse: bundle has no text member");
    }
    std::array<std::optional<Var>, kBundleMembers> gates;
    for (std::size_t i = 0; i < kBundleMembers; ++i) {
        if (bundle.members[i]) {
            gates[i] = gif_gate(*text, *bundle.members[i], p.gates[i], gate_sigmoid);
        }
    }
    return gates;
}

Var combine_gated(const SpotlightBundle& bundle, const std::array<std::optional<Var>, kBundleMembers>& gates) {
    std::optional<Var> total;
    for (std::size_t i = 0; i < kBundleMembers; ++i) {
        if (!bundle.members[i]) {
            continue;
        }
        if (!gates[i]) {
            throw ContractError("combine_gated: missing gate for member " +
                                std::string(member_name(static_cast<Member>(i))));
        }
        const Var term = mul(*gates[i], *bundle.members[i]);
        total = total ? add(*total, term) : term;
    }
    if (!total) {
        throw ContractError("combine_gated: empty bundle");
    }
    return *total;
}

Var global_fuse(const SpotlightBundle& bundle, const GlobalFuseParams& p, bool gate_sigmoid) {
    return combine_gated(bundle, global_fuse_gates(bundle, p, gate_sigmoid));
}

}  // namespace moses
