// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "moses/errors.hpp"

namespace moses {

namespace {

LayerNormParams layer_norm_params(std::size_t d) {
    return {constant_parameter({d}, 1.0), constant_parameter({d}, 0.0)};
}

SelfAttentionParams attention_params(std::size_t d, Rng& rng) {
    return {uniform_parameter(d, d, rng), uniform_parameter(d, d, rng), uniform_parameter(d, d, rng),
            uniform_parameter(d, d, rng)};
}

FeedForwardParams ffn_params(std::size_t d, std::size_t width, Rng& rng) {
    return {uniform_parameter(d, width, rng), constant_parameter({width}, 0.0), uniform_parameter(width, d, rng),
            constant_parameter({d}, 0.0)};
}

EncoderLayerParams encoder_layer_params(std::size_t d, std::size_t heads, std::size_t ffn, Rng& rng) {
    EncoderLayerParams p;
    p.heads = heads;
    p.attention = attention_params(d, rng);
    p.norm1 = layer_norm_params(d);
    p.ffn = ffn_params(d, ffn, rng);
    p.norm2 = layer_norm_params(d);
    return p;
}

DecoderLayerParams decoder_layer_params(std::size_t d, std::size_t heads, std::size_t ffn, Rng& rng) {
    DecoderLayerParams p;
    p.heads = heads;
    p.self_attention = attention_params(d, rng);
    p.norm1 = layer_norm_params(d);
    p.cross_attention = attention_params(d, rng);
    p.norm2 = layer_norm_params(d);
    p.ffn = ffn_params(d, ffn, rng);
    p.norm3 = layer_norm_params(d);
    return p;
}

std::vector<EncoderLayerParams> modality_stack(const ModalityConfig& c, std::size_t ffn_mult, Rng& rng) {
    std::vector<EncoderLayerParams> stack;
    for (std::size_t i = 0; i < c.layers; ++i) {
        stack.push_back(encoder_layer_params(c.d_c, c.heads, ffn_mult * c.d_c, rng));
    }
    return stack;
}

Tensor sinusoidal_table(std::size_t rows, std::size_t d) {
    Tensor t({rows, d});
    for (std::size_t pos = 0; pos < rows; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            t(pos, i) = std::sin(angle);
            if (i + 1 < d) {
                t(pos, i + 1) = std::cos(angle);
            }
        }
    }
    return t;
}

template <class Fn>
void visit_norm(LayerNormParams& p, const std::string& prefix, Fn& fn) {
    fn(join_name(prefix, "gain"), p.gain);
    fn(join_name(prefix, "bias"), p.bias);
}

template <class Fn>
void visit_attention(SelfAttentionParams& p, const std::string& prefix, Fn& fn) {
    fn(join_name(prefix, "w_q"), p.w_q);
    fn(join_name(prefix, "w_k"), p.w_k);
    fn(join_name(prefix, "w_v"), p.w_v);
    fn(join_name(prefix, "w_o"), p.w_o);
}

template <class Fn>
void visit_ffn(FeedForwardParams& p, const std::string& prefix, Fn& fn) {
    fn(join_name(prefix, "w1"), p.w1);
    fn(join_name(prefix, "b1"), p.b1);
    fn(join_name(prefix, "w2"), p.w2);
    fn(join_name(prefix, "b2"), p.b2);
}

template <class Fn>
void visit_encoder_stack(std::vector<EncoderLayerParams>& stack, const std::string& prefix, Fn& fn) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
        const std::string base = join_name(prefix, std::to_string(i));
        visit_attention(stack[i].attention, join_name(base, "attn"), fn);
        visit_norm(stack[i].norm1, join_name(base, "norm1"), fn);
        visit_ffn(stack[i].ffn, join_name(base, "ffn"), fn);
        visit_norm(stack[i].norm2, join_name(base, "norm2"), fn);
    }
}

// Single traversal shared by the const and mutable visitors.
template <class Fn>
void visit_all(ModelState& s, Fn& fn) {
    fn("token_embedding", s.token_embedding);
    visit_encoder_stack(s.encoder, "encoder", fn);
    for (std::size_t i = 0; i < s.decoder.size(); ++i) {
        const std::string base = "decoder." + std::to_string(i);
        auto& l = s.decoder[i];
        visit_attention(l.self_attention, join_name(base, "self_attn"), fn);
        visit_norm(l.norm1, join_name(base, "norm1"), fn);
        visit_attention(l.cross_attention, join_name(base, "cross_attn"), fn);
        visit_norm(l.norm2, join_name(base, "norm2"), fn);
        visit_ffn(l.ffn, join_name(base, "ffn"), fn);
        visit_norm(l.norm3, join_name(base, "norm3"), fn);
    }
    visit_encoder_stack(s.audio_encoder, "audio_encoder", fn);
    visit_encoder_stack(s.video_encoder, "video_encoder", fn);
    visit_encoder_stack(s.pe_encoder, "pe_encoder", fn);
    fn("pe_embedding", s.pe_embedding);
    fn("audio_proj", s.audio_proj);
    fn("video_proj", s.video_proj);
    fn("pe_proj", s.pe_proj);
    visit_parameters(s.pe_gate, "pe_gate", fn);
    for (auto& [index, block] : s.fusion) {
        const std::string base = "fusion." + std::to_string(index);
        visit_parameters(block.spotlight, join_name(base, "spotlight"), fn);
        visit_parameters(block.global, join_name(base, "global"), fn);
        fn(join_name(base, "concat_w"), block.concat_w);
        fn(join_name(base, "concat_b"), block.concat_b);
    }
    fn("out_w", s.out_w);
    fn("out_b", s.out_b);
    for (LabelTask t : {LabelTask::Sarcasm, LabelTask::Humour, LabelTask::Emotion}) {
        const std::string base = "head_" + std::string(label_task_name(t));
        fn(join_name(base, "w"), s.head(t).w);
        fn(join_name(base, "b"), s.head(t).b);
    }
}

void expect_positive(const char* what, std::size_t v) {
    if (v == 0) {
        throw ConfigError(fmt::format("model config: {} must be positive", what));
    }
}

void expect_divisible(const char* what, std::size_t width, std::size_t heads) {
    if (heads == 0 || width % heads != 0) {
        throw ConfigError(fmt::format("model config: {} width {} is not divisible by {} heads", what, width, heads));
    }
}

Var attend(Var x, Var memory, const SelfAttentionParams& p, std::size_t heads, bool causal) {
    Graph& g = *x.graph;
    const Var q = matmul(x, g.param(p.w_q));
    const Var k = matmul(memory, g.param(p.w_k));
    const Var v = matmul(memory, g.param(p.w_v));
    return matmul(scaled_dot_attention(q, k, v, heads, causal).fused, g.param(p.w_o));
}

Var feed_forward(Var x, const FeedForwardParams& p) {
    Graph& g = *x.graph;
    const Var hidden = gelu(add_row(matmul(x, g.param(p.w1)), g.param(p.b1)));
    return add_row(matmul(hidden, g.param(p.w2)), g.param(p.b2));
}

Var norm(Var x, const LayerNormParams& p) {
    Graph& g = *x.graph;
    return layer_norm(x, g.param(p.gain), g.param(p.bias));
}

int argmax_lowest(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) {
            best = j;
        }
    }
    return static_cast<int>(best);
}

std::size_t encoder_layer_count(std::size_t d, std::size_t ffn) {
    return 4 * d * d + 4 * d + 2 * d * ffn + ffn + d;
}

Var pe_fuse(Graph& g, const ModelState& s, Var x, std::span<const int> tokens) {
    return gif_fuse_bimodal(x, phonetic_stream(g, s, tokens), s.pe_gate, s.config.gate_sigmoid);
}

}  // namespace

// ---- configuration ---------------------------------------------------------------

std::string_view fusion_mode_name(FusionMode mode) {
    switch (mode) {
        case FusionMode::T: return "T";
        case FusionMode::TA: return "TA";
        case FusionMode::TV: return "TV";
        case FusionMode::TAV: return "TAV";
        case FusionMode::Concat: return "concat";
        case FusionMode::DPA: return "DPA";
    }
    return "?";
}

FusionMode parse_fusion_mode(std::string_view name) {
    for (FusionMode m : {FusionMode::T, FusionMode::TA, FusionMode::TV, FusionMode::TAV, FusionMode::Concat,
                         FusionMode::DPA}) {
        if (fusion_mode_name(m) == name) {
            return m;
        }
    }
    throw ConfigError("unknown mode '" + std::string(name) + "' (expected T, TA, TV, TAV, concat or DPA)");
}

bool mode_uses_audio(FusionMode mode) {
    return mode == FusionMode::TA || mode == FusionMode::TAV || mode == FusionMode::Concat || mode == FusionMode::DPA;
}

bool mode_uses_video(FusionMode mode) {
    return mode == FusionMode::TV || mode == FusionMode::TAV || mode == FusionMode::Concat || mode == FusionMode::DPA;
}

void ModelConfig::validate() const {
    expect_positive("d", d);
    expect_positive("n_max", n_max);
    expect_positive("encoder_layers", encoder_layers);
    expect_positive("decoder_layers", decoder_layers);
    expect_positive("ffn_mult", ffn_mult);
    expect_positive("max_decode_len", max_decode_len);
    expect_divisible("text", d, heads_text);
    for (const auto& [name, m] : {std::pair{"audio", audio}, std::pair{"video", video}, std::pair{"pe", pe}}) {
        expect_positive(name, m.d_c);
        expect_positive(name, m.layers);
        expect_divisible(name, m.d_c, m.heads);
    }
    // Zero sizes mean "not bound to a vocabulary yet"; init_model fills them in.
    if (vocab_size != 0 && vocab_size <= Vocabulary::kReserved) {
        throw ConfigError(fmt::format("model config: vocab_size {} leaves no room beyond the reserved tokens", vocab_size));
    }
    if (phonetic_vocab_size != 0 && phonetic_vocab_size < Vocabulary::kReserved) {
        throw ConfigError("model config: phonetic_vocab_size below the reserved block");
    }
    for (std::size_t i : fusion_insert) {
        if (i >= encoder_layers) {
            throw ConfigError(fmt::format("model config: fusion index {} outside [0, {})", i, encoder_layers));
        }
    }
    if (spotlight && !gif) {
        throw ConfigError("model config: the spotlight requires gated fusion (gif = true)");
    }
}

std::vector<std::size_t> ModelConfig::insert_points() const {
    if (fusion_insert.empty()) {
        return {encoder_layers - 1};
    }
    std::set<std::size_t> unique(fusion_insert.begin(), fusion_insert.end());
    return {unique.begin(), unique.end()};
}

std::size_t ModelConfig::position_table_size() const {
    return std::max(n_max, max_decode_len + 1);
}

nlohmann::ordered_json ModelConfig::to_json() const {
    const auto modality = [](const ModalityConfig& m) {
        return nlohmann::ordered_json{{"layers", m.layers}, {"heads", m.heads}, {"d_c", m.d_c}};
    };
    nlohmann::ordered_json j;
    j["vocab_size"] = vocab_size;
    j["phonetic_vocab_size"] = phonetic_vocab_size;
    j["d"] = d;
    j["n_max"] = n_max;
    j["encoder_layers"] = encoder_layers;
    j["decoder_layers"] = decoder_layers;
    j["heads_text"] = heads_text;
    j["ffn_mult"] = ffn_mult;
    j["audio"] = modality(audio);
    j["video"] = modality(video);
    j["pe"] = modality(pe);
    j["fusion_insert"] = fusion_insert;
    j["mode"] = fusion_mode_name(mode);
    j["use_pe"] = use_pe;
    j["spotlight"] = spotlight;
    j["gif"] = gif;
    j["gate_sigmoid"] = gate_sigmoid;
    j["max_decode_len"] = max_decode_len;
    j["seed"] = seed;
    return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("model config must be a JSON object");
    }
    ModelConfig c;
    const auto size = [](const nlohmann::json& v, const std::string& key) {
        if (!v.is_number_unsigned()) {
            throw ConfigError("model config: '" + key + "' must be a non-negative integer");
        }
        return v.get<std::size_t>();
    };
    const auto flag = [](const nlohmann::json& v, const std::string& key) {
        if (!v.is_boolean()) {
            throw ConfigError("model config: '" + key + "' must be true or false");
        }
        return v.get<bool>();
    };
    const auto modality = [&](const nlohmann::json& v, const std::string& key, ModalityConfig& out) {
        if (!v.is_object()) {
            throw ConfigError("model config: '" + key + "' must be an object");
        }
        for (const auto& [k, x] : v.items()) {
            if (k == "layers") {
                out.layers = size(x, key + ".layers");
            } else if (k == "heads") {
                out.heads = size(x, key + ".heads");
            } else if (k == "d_c") {
                out.d_c = size(x, key + ".d_c");
            } else {
                throw ConfigError("model config: unknown key '" + key + "." + k + "'");
            }
        }
    };
    for (const auto& [k, v] : j.items()) {
        if (k == "vocab_size") c.vocab_size = size(v, k);
        else if (k == "phonetic_vocab_size") c.phonetic_vocab_size = size(v, k);
        else if (k == "d") c.d = size(v, k);
        else if (k == "n_max") c.n_max = size(v, k);
        else if (k == "encoder_layers") c.encoder_layers = size(v, k);
        else if (k == "decoder_layers") c.decoder_layers = size(v, k);
        else if (k == "heads_text") c.heads_text = size(v, k);
        else if (k == "ffn_mult") c.ffn_mult = size(v, k);
        else if (k == "audio") modality(v, k, c.audio);
        else if (k == "video") modality(v, k, c.video);
        else if (k == "pe") modality(v, k, c.pe);
        else if (k == "fusion_insert") {
            if (!v.is_array()) {
                throw ConfigError("model config: 'fusion_insert' must be an array");
            }
            c.fusion_insert.clear();
            for (const auto& x : v) {
                c.fusion_insert.push_back(size(x, k));
            }
        } else if (k == "mode") {
            if (!v.is_string()) {
                throw ConfigError("model config: 'mode' must be a string");
            }
            c.mode = parse_fusion_mode(v.get<std::string>());
        } else if (k == "use_pe") c.use_pe = flag(v, k);
        else if (k == "spotlight") c.spotlight = flag(v, k);
        else if (k == "gif") c.gif = flag(v, k);
        else if (k == "gate_sigmoid") c.gate_sigmoid = flag(v, k);
        else if (k == "max_decode_len") c.max_decode_len = size(v, k);
        else if (k == "seed") c.seed = size(v, k);
        else throw ConfigError("model config: unknown key '" + k + "'");
    }
    return c;
}

ModelConfig model_preset(std::string_view name) {
    ModelConfig c;
    if (name == "toy") {
        c.d = 64;
        c.n_max = 64;
        c.encoder_layers = 2;
        c.decoder_layers = 2;
        c.heads_text = 4;
        c.audio = {1, 2, 16};
        c.video = {1, 2, 32};
        c.pe = {1, 2, 16};
        c.max_decode_len = 16;
        return c;
    }
    if (name == "paper-defaults") {
        c.d = 768;
        c.n_max = 256;
        c.encoder_layers = 6;
        c.decoder_layers = 6;
        c.heads_text = 12;
        c.ffn_mult = 4;
        c.audio = {4, 2, 154};
        c.video = {4, 8, 2048};
        c.pe = {4, 2, 154};
        c.max_decode_len = 64;
        return c;
    }
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected toy or paper-defaults)");
}

// ---- state -----------------------------------------------------------------------

void ModelState::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_all(*this, fn);
}

void ModelState::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const auto adapter = [&](const std::string& name, Tensor& t) { fn(name, t); };
    visit_all(const_cast<ModelState&>(*this), adapter);
}

std::size_t ModelState::parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

ClassifierHead& ModelState::head(LabelTask task) {
    switch (task) {
        case LabelTask::Sarcasm: return sarcasm_head;
        case LabelTask::Humour: return humour_head;
        case LabelTask::Emotion: break;
    }
    return emotion_head;
}

const ClassifierHead& ModelState::head(LabelTask task) const {
    return const_cast<ModelState&>(*this).head(task);
}

ModelState init_model(ModelConfig config, const Vocabulary& vocab) {
    ModelState s;
    s.vocab = vocab;
    s.phonetic = PhoneticIndex::build(vocab);
    config.vocab_size = vocab.size();
    config.phonetic_vocab_size = s.phonetic.key_count();
    config.validate();
    s.config = config;

    const std::size_t d = config.d;
    const std::size_t ffn = config.ffn_mult * d;
    Rng rng(config.seed);
    s.token_embedding = [&] {
        Tensor t({config.vocab_size, d});
        for (double& x : t.values()) {
            x = rng.uniform(-1.0, 1.0);
        }
        t.set_requires_grad(true);
        return t;
    }();
    s.positions = sinusoidal_table(config.position_table_size(), d);
    for (std::size_t i = 0; i < config.encoder_layers; ++i) {
        s.encoder.push_back(encoder_layer_params(d, config.heads_text, ffn, rng));
    }
    for (std::size_t i = 0; i < config.decoder_layers; ++i) {
        s.decoder.push_back(decoder_layer_params(d, config.heads_text, ffn, rng));
    }
    s.audio_encoder = modality_stack(config.audio, config.ffn_mult, rng);
    s.video_encoder = modality_stack(config.video, config.ffn_mult, rng);
    s.pe_encoder = modality_stack(config.pe, config.ffn_mult, rng);
    s.pe_embedding = [&] {
        Tensor t({config.phonetic_vocab_size, config.pe.d_c});
        for (double& x : t.values()) {
            x = rng.uniform(-1.0, 1.0);
        }
        t.set_requires_grad(true);
        return t;
    }();
    s.audio_proj = uniform_parameter(config.audio.d_c, d, rng);
    s.video_proj = uniform_parameter(config.video.d_c, d, rng);
    s.pe_proj = uniform_parameter(config.pe.d_c, d, rng);
    s.pe_gate = GifParams::init(d, rng);
    for (std::size_t index : config.insert_points()) {
        FusionBlockParams block;
        block.spotlight = SpotlightParams::init(d, config.heads_text, rng);
        block.global = GlobalFuseParams::init(d, rng);
        block.concat_w = uniform_parameter(3 * d, d, rng);
        block.concat_b = constant_parameter({d}, 0.0);
        s.fusion.emplace(index, std::move(block));
    }
    s.out_w = uniform_parameter(d, config.vocab_size, rng);
    s.out_b = constant_parameter({config.vocab_size}, 0.0);
    for (LabelTask t : {LabelTask::Sarcasm, LabelTask::Humour, LabelTask::Emotion}) {
        s.head(t) = {uniform_parameter(d, class_count(t), rng), constant_parameter({class_count(t)}, 0.0)};
    }
    return s;
}

std::size_t parameter_count(const ModelConfig& c) {
    c.validate();
    const std::size_t d = c.d;
    const std::size_t ffn = c.ffn_mult * d;
    std::size_t n = c.vocab_size * d;
    n += c.encoder_layers * encoder_layer_count(d, ffn);
    n += c.decoder_layers * (encoder_layer_count(d, ffn) + 4 * d * d + 2 * d);
    for (const auto& m : {c.audio, c.video, c.pe}) {
        n += m.layers * encoder_layer_count(m.d_c, c.ffn_mult * m.d_c);
    }
    n += c.phonetic_vocab_size * c.pe.d_c;
    n += (c.audio.d_c + c.video.d_c + c.pe.d_c) * d;
    const std::size_t gate = 2 * d * d + d;
    n += gate;
    const std::size_t attention_block = 5 * d * d + 4 * d;
    const std::size_t block = kCrossPairs * attention_block + kSpotlightGates * gate + kBundleMembers * gate + 3 * d * d + d;
    n += c.insert_points().size() * block;
    n += d * c.vocab_size + c.vocab_size;
    for (LabelTask t : {LabelTask::Sarcasm, LabelTask::Humour, LabelTask::Emotion}) {
        n += (d + 1) * class_count(t);
    }
    return n;
}

// ---- forward ---------------------------------------------------------------------

EncodedInstance encode_instance(const ModelState& s, const MultimodalInstance& instance,
                                const std::vector<std::string>* explanation) {
    std::vector<std::string> words = dialogue_words(instance);
    if (explanation && !explanation->empty()) {
        words.push_back(Vocabulary::reserved_tokens()[Vocabulary::kSep]);
        words.insert(words.end(), explanation->begin(), explanation->end());
    }
    EncodedInstance out;
    if (words.size() > s.config.n_max) {
        out.truncated = words.size() - s.config.n_max;
        words.erase(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(out.truncated));
    }
    out.tokens = s.vocab.encode(words);
    if (!instance.audio.empty()) {
        out.audio = instance.audio;
    }
    if (!instance.video.empty()) {
        out.video = instance.video;
    }
    return out;
}

Var embed_tokens(Graph& g, const ModelState& s, std::span<const int> tokens) {
    if (tokens.empty()) {
        throw InputError("embed_tokens: empty token sequence");
    }
    if (tokens.size() > s.positions.rows()) {
        throw InputError(fmt::format("embed_tokens: {} tokens exceed the position table of {}", tokens.size(),
                                     s.positions.rows()));
    }
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= s.token_embedding.rows()) {
            throw VocabularyError(fmt::format("token id {} outside vocabulary of {}", t, s.token_embedding.rows()));
        }
    }
    const std::size_t d = s.token_embedding.cols();
    Tensor pos({tokens.size(), d});
    std::copy(s.positions.values().begin(), s.positions.values().begin() + static_cast<std::ptrdiff_t>(tokens.size() * d),
              pos.values().begin());
    return add(gather_rows(g.param(s.token_embedding), tokens), g.constant(std::move(pos)));
}

Var encoder_layer(Var x, const EncoderLayerParams& p) {
    const Var h = norm(add(x, attend(x, x, p.attention, p.heads, false)), p.norm1);
    return norm(add(h, feed_forward(h, p.ffn)), p.norm2);
}

Var encode_text(Graph& g, const ModelState& s, std::span<const int> tokens) {
    if (tokens.size() > s.config.n_max) {
        throw InputError(fmt::format("encode_text: {} tokens exceed n_max {}", tokens.size(), s.config.n_max));
    }
    Var x = embed_tokens(g, s, tokens);
    for (const auto& layer : s.encoder) {
        x = encoder_layer(x, layer);
    }
    return x;
}

Var encode_modality(Var features, const std::vector<EncoderLayerParams>& stack) {
    if (stack.empty()) {
        return features;
    }
    const std::size_t width = stack.front().attention.w_q.rows();
    if (features.cols() != width) {
        throw DimensionError(fmt::format("encode_modality: features are {} wide, encoder expects {}", features.cols(),
                                         width));
    }
    Var x = features;
    for (const auto& layer : stack) {
        x = encoder_layer(x, layer);
    }
    return x;
}

Tensor interpolation_matrix(std::size_t frames, std::size_t n) {
    if (frames == 0 || n == 0) {
        throw DimensionError("interpolation_matrix: frame and row counts must be positive");
    }
    Tensor p({n, frames});
    if (frames == 1 || n == 1) {
        for (double& x : p.values()) {
            x = 1.0 / static_cast<double>(frames);
        }
        return p;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i * (frames - 1)) / static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(lo);
        p(i, lo) += 1.0 - frac;
        if (frac > 0.0) {
            p(i, lo + 1) += frac;
        }
    }
    return p;
}

Var align_modality(Var features, std::size_t n, const Tensor& proj) {
    Graph& g = *features.graph;
    if (features.cols() != proj.rows()) {
        throw DimensionError(fmt::format("align_modality: features are {} wide, projection expects {}", features.cols(),
                                         proj.rows()));
    }
    const Var resampled = matmul(g.constant(interpolation_matrix(features.rows(), n)), features);
    return matmul(resampled, g.param(proj));
}

Var phonetic_stream(Graph& g, const ModelState& s, std::span<const int> tokens) {
    std::vector<int> keys;
    keys.reserve(tokens.size());
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= s.phonetic.key_of_token.size()) {
            throw VocabularyError(fmt::format("token id {} has no phonetic key", t));
        }
        keys.push_back(s.phonetic.key_of_token[static_cast<std::size_t>(t)]);
    }
    const Var stream = encode_modality(gather_rows(g.param(s.pe_embedding), keys), s.pe_encoder);
    return matmul(stream, g.param(s.pe_proj));
}

Var fuse_streams(Var text, std::optional<Var> audio, std::optional<Var> video, const FusionBlockParams& block,
                 const ModelConfig& config, FusionMode mode) {
    Graph& g = *text.graph;
    if (mode == FusionMode::T) {
        return text;
    }
    if ((mode_uses_audio(mode) && !audio) || (mode_uses_video(mode) && !video)) {
        throw InputError(fmt::format("fusion mode {} needs streams that are missing", fusion_mode_name(mode)));
    }
    if (!mode_uses_audio(mode)) {
        audio.reset();
    }
    if (!mode_uses_video(mode)) {
        video.reset();
    }
    if (mode == FusionMode::Concat) {
        const Var parts[] = {text, *audio, *video};
        return add_row(matmul(concat_cols(parts), g.param(block.concat_w)), g.param(block.concat_b));
    }
    FusionOptions options;
    options.gate_sigmoid = config.gate_sigmoid;
    options.attention = mode == FusionMode::DPA ? ContextAttention::DotProduct : ContextAttention::Mca2;
    if (config.spotlight) {
        return global_fuse(spotlight(text, audio, video, block.spotlight, options), block.global, config.gate_sigmoid);
    }
    const auto& sp = block.spotlight;
    std::optional<Var> with_audio, with_video;
    if (audio) {
        with_audio = cross_context(text, *audio, sp[CrossPair::TextAudio], options);
    }
    if (video) {
        with_video = cross_context(text, *video, sp[CrossPair::TextVideo], options);
    }
    if (!config.gif) {
        Var out = text;
        for (const auto& c : {with_audio, with_video}) {
            if (c) {
                out = add(out, *c);
            }
        }
        return out;
    }
    if (with_audio && with_video) {
        return gif_fuse_trimodal(text, *with_audio, *with_video, sp[SpotlightGate::TextTrimodalAudio],
                                 sp[SpotlightGate::TextTrimodalVideo], config.gate_sigmoid);
    }
    if (with_audio) {
        return gif_fuse_bimodal(text, *with_audio, sp[SpotlightGate::TextAudio], config.gate_sigmoid);
    }
    return gif_fuse_bimodal(text, *with_video, sp[SpotlightGate::TextVideo], config.gate_sigmoid);
}

Var fuse_forward(Graph& g, const ModelState& s, const EncodedInstance& instance, FusionMode mode) {
    const auto& tokens = instance.tokens;
    if (tokens.size() > s.config.n_max) {
        throw InputError(fmt::format("fuse_forward: {} tokens exceed n_max {}", tokens.size(), s.config.n_max));
    }
    if (mode_uses_audio(mode) && !instance.audio) {
        throw InputError(fmt::format("mode {} needs audio features", fusion_mode_name(mode)));
    }
    if (mode_uses_video(mode) && !instance.video) {
        throw InputError(fmt::format("mode {} needs video features", fusion_mode_name(mode)));
    }
    const std::size_t n = tokens.size();
    std::optional<Var> audio, video;
    if (mode != FusionMode::T) {
        if (mode_uses_audio(mode)) {
            audio = align_modality(encode_modality(g.constant(*instance.audio), s.audio_encoder), n, s.audio_proj);
        }
        if (mode_uses_video(mode)) {
            video = align_modality(encode_modality(g.constant(*instance.video), s.video_encoder), n, s.video_proj);
        }
    }
    Var x = embed_tokens(g, s, tokens);
    const std::size_t last = s.encoder.size() - 1;
    for (std::size_t l = 0; l < s.encoder.size(); ++l) {
        x = encoder_layer(x, s.encoder[l]);
        if (l == last && s.config.use_pe) {
            x = pe_fuse(g, s, x, tokens);
        }
        if (mode != FusionMode::T) {
            if (const auto it = s.fusion.find(l); it != s.fusion.end()) {
                x = fuse_streams(x, audio, video, it->second, s.config, mode);
            }
        }
    }
    return x;
}

Var fuse_forward(Graph& g, const ModelState& s, const EncodedInstance& instance) {
    return fuse_forward(g, s, instance, s.config.mode);
}

Var decoder_logits(Graph& g, const ModelState& s, Var memory, std::span<const int> inputs) {
    Var x = embed_tokens(g, s, inputs);
    for (const auto& layer : s.decoder) {
        const Var h1 = norm(add(x, attend(x, x, layer.self_attention, layer.heads, true)), layer.norm1);
        const Var h2 = norm(add(h1, attend(h1, memory, layer.cross_attention, layer.heads, false)), layer.norm2);
        x = norm(add(h2, feed_forward(h2, layer.ffn)), layer.norm3);
    }
    return add_row(matmul(x, g.param(s.out_w)), g.param(s.out_b));
}

std::vector<int> decode_greedy(const ModelState& s, const Tensor& memory) {
    Graph g(false);
    const Var mem = g.constant(memory);
    std::vector<int> inputs = {Vocabulary::kStart};
    std::vector<int> out;
    while (out.size() < s.config.max_decode_len) {
        const Var logits = decoder_logits(g, s, mem, inputs);
        const Tensor& v = logits.value();
        const std::size_t width = v.cols();
        const int next = argmax_lowest(v.values().subspan((v.rows() - 1) * width, width));
        if (next == Vocabulary::kEnd) {
            break;
        }
        out.push_back(next);
        inputs.push_back(next);
    }
    return out;
}

std::vector<int> explanation_targets(const ModelState& s, const std::vector<std::string>& explanation) {
    std::vector<int> ids = s.vocab.encode(explanation);
    ids.push_back(Vocabulary::kEnd);
    return ids;
}

std::vector<int> teacher_inputs(std::span<const int> targets) {
    std::vector<int> in = {Vocabulary::kStart};
    in.insert(in.end(), targets.begin(), targets.end());
    in.pop_back();
    return in;
}

LossTerm explanation_loss(Graph& g, const ModelState& s, const EncodedInstance& instance, std::span<const int> targets,
                          FusionMode mode) {
    if (targets.empty()) {
        throw InputError("explanation_loss: no target tokens");
    }
    const Var memory = fuse_forward(g, s, instance, mode);
    const std::vector<int> inputs = teacher_inputs(targets);
    const Var logits = decoder_logits(g, s, memory, inputs);
    std::size_t count = 0;
    for (int t : targets) {
        count += t != Vocabulary::kPad ? 1 : 0;
    }
    return {cross_entropy_sum(logits, targets, Vocabulary::kPad), count};
}

// ---- optimisation ----------------------------------------------------------------

void AdamW::step(ModelState& s, const std::vector<bool>& touched) {
    std::vector<Tensor*> params;
    s.visit([&](const std::string&, Tensor& t) { params.push_back(&t); });
    if (touched.size() != params.size()) {
        throw ContractError("AdamW::step: touched mask does not match the parameter list");
    }
    if (m.empty()) {
        for (Tensor* p : params) {
            m.emplace_back(p->shape(), 0.0);
            v.emplace_back(p->shape(), 0.0);
        }
    }
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (touched[i]) {
            auto w = p.values();
            const auto grad = p.grad();
            auto mi = m[i].values();
            auto vi = v[i].values();
            for (std::size_t k = 0; k < w.size(); ++k) {
                mi[k] = beta1 * mi[k] + (1.0 - beta1) * grad[k];
                vi[k] = beta2 * vi[k] + (1.0 - beta2) * grad[k] * grad[k];
                const double update = (mi[k] / c1) / (std::sqrt(vi[k] / c2) + eps);
                w[k] -= lr * (update + weight_decay * w[k]);
            }
        }
        p.zero_grad();
    }
}

double train_step(ModelState& s, AdamW& opt, std::span<const EncodedInstance> inputs,
                  std::span<const std::vector<int>> targets, FusionMode mode) {
    if (inputs.empty() || inputs.size() != targets.size()) {
        throw InputError("train_step: batch must be nonempty with one target per input");
    }
    Graph g;
    std::optional<Var> total;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const LossTerm term = explanation_loss(g, s, inputs[i], targets[i], mode);
        total = total ? add(*total, term.total) : term.total;
        tokens += term.tokens;
    }
    if (tokens == 0) {
        throw InputError("train_step: batch has no target tokens");
    }
    const Var loss = scale(*total, 1.0 / static_cast<double>(tokens));
    g.backward(loss);
    std::vector<bool> touched;
    s.visit([&](const std::string&, Tensor& t) { touched.push_back(g.accumulate_into(t)); });
    opt.step(s, touched);
    return loss.value()[0];
}

double train_step(ModelState& s, AdamW& opt, std::span<const MultimodalInstance> batch) {
    std::vector<EncodedInstance> inputs;
    std::vector<std::vector<int>> targets;
    for (const auto& inst : batch) {
        if (inst.explanation.empty()) {
            throw InputError("train_step: instance without an explanation");
        }
        inputs.push_back(encode_instance(s, inst));
        targets.push_back(explanation_targets(s, inst.explanation));
    }
    return train_step(s, opt, inputs, targets, s.config.mode);
}

TokenAccuracy teacher_forced_accuracy(const ModelState& s, std::span<const MultimodalInstance> instances) {
    TokenAccuracy acc;
    for (const auto& inst : instances) {
        Graph g(false);
        const auto targets = explanation_targets(s, inst.explanation);
        const Var memory = fuse_forward(g, s, encode_instance(s, inst));
        const Var logits = decoder_logits(g, s, memory, teacher_inputs(targets));
        const Tensor& v = logits.value();
        for (std::size_t t = 0; t < targets.size(); ++t) {
            if (targets[t] == Vocabulary::kPad) {
                continue;
            }
            ++acc.total;
            acc.correct += argmax_lowest(v.values().subspan(t * v.cols(), v.cols())) == targets[t] ? 1 : 0;
        }
    }
    return acc;
}

double mean_loss(const ModelState& s, std::span<const MultimodalInstance> instances) {
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& inst : instances) {
        Graph g(false);
        const auto term = explanation_loss(g, s, encode_instance(s, inst), explanation_targets(s, inst.explanation),
                                           s.config.mode);
        total += term.total.value()[0];
        tokens += term.tokens;
    }
    return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

std::vector<std::string> generate_explanation(const ModelState& s, const MultimodalInstance& instance) {
    Graph g(false);
    const Var memory = fuse_forward(g, s, encode_instance(s, instance));
    return s.vocab.decode(decode_greedy(s, memory.value()));
}

// ---- affect classification -------------------------------------------------------

std::size_t class_count(LabelTask task) {
    return task == LabelTask::Emotion ? kEmotions.size() : 2;
}

int label_of(const MultimodalInstance& instance, LabelTask task) {
    switch (task) {
        case LabelTask::Sarcasm: return instance.sarcasm;
        case LabelTask::Humour: return instance.humour;
        case LabelTask::Emotion: break;
    }
    return static_cast<int>(instance.emotion);
}

Var affect_logits(Graph& g, const ModelState& s, const EncodedInstance& instance, LabelTask task) {
    Var x = encode_text(g, s, instance.tokens);
    if (s.config.use_pe) {
        x = pe_fuse(g, s, x, instance.tokens);
    }
    const ClassifierHead& h = s.head(task);
    return add_row(matmul(mean_rows(x), g.param(h.w)), g.param(h.b));
}

AffectPrediction classify_affect(const ModelState& s, const MultimodalInstance& instance,
                                 const std::vector<std::string>* explanation, LabelTask task) {
    Graph g(false);
    const EncodedInstance input = encode_instance(s, instance, explanation);
    const Var logits = affect_logits(g, s, input, task);
    AffectPrediction out;
    out.logits.assign(logits.value().values().begin(), logits.value().values().end());
    out.label = argmax_lowest(out.logits);
    out.truncated = input.truncated;
    return out;
}

double train_classifier_step(ModelState& s, AdamW& opt, std::span<const AffectExample> batch, LabelTask task) {
    if (batch.empty()) {
        throw InputError("train_classifier_step: empty batch");
    }
    Graph g;
    std::optional<Var> total;
    for (const auto& ex : batch) {
        if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= class_count(task)) {
            throw InputError(fmt::format("label {} outside the {} classes of {}", ex.label, class_count(task),
                                         label_task_name(task)));
        }
        const int target[] = {ex.label};
        const Var term = cross_entropy_sum(affect_logits(g, s, ex.input, task), target, -1);
        total = total ? add(*total, term) : term;
    }
    const Var loss = scale(*total, 1.0 / static_cast<double>(batch.size()));
    g.backward(loss);
    std::vector<bool> touched;
    s.visit([&](const std::string&, Tensor& t) { touched.push_back(g.accumulate_into(t)); });
    opt.step(s, touched);
    return loss.value()[0];
}

}  // namespace moses
