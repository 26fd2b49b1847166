// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moses/data.hpp"
#include "moses/fusion.hpp"

namespace moses {

// Which fusion runs at the insertion points.
enum class FusionMode { T, TA, TV, TAV, Concat, DPA };

std::string_view fusion_mode_name(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view name);
bool mode_uses_audio(FusionMode mode);
bool mode_uses_video(FusionMode mode);

struct ModalityConfig {
    std::size_t layers = 4;
    std::size_t heads = 2;
    std::size_t d_c = 154;

    bool operator==(const ModalityConfig&) const = default;
};

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t phonetic_vocab_size = 0;
    std::size_t d = 64;
    std::size_t n_max = 64;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t heads_text = 4;
    std::size_t ffn_mult = 2;
    ModalityConfig audio{4, 2, 154};
    ModalityConfig video{4, 8, 2048};
    ModalityConfig pe{4, 2, 154};
    // Encoder layer indices after which fusion runs; empty means the last layer.
    std::vector<std::size_t> fusion_insert;
    FusionMode mode = FusionMode::TAV;
    bool use_pe = true;
    // Off: only the text-primary context streams are fused (no audio/video primary members).
    bool spotlight = true;
    // Off: context streams are added without gates.
    bool gif = true;
    bool gate_sigmoid = false;
    std::size_t max_decode_len = 16;
    std::uint64_t seed = 1;

    bool operator==(const ModelConfig&) const = default;

    // Fills fusion_insert when empty and checks every invariant; throws ConfigError.
    void validate() const;
    std::vector<std::size_t> insert_points() const;
    std::size_t position_table_size() const;

    nlohmann::ordered_json to_json() const;
    // Unknown keys are rejected with ConfigError; missing keys keep their defaults.
    static ModelConfig from_json(const nlohmann::json& j);
};

// Named presets: "toy" (desk scale) and "paper-defaults".
ModelConfig model_preset(std::string_view name);

struct LayerNormParams {
    Tensor gain, bias;
};

struct SelfAttentionParams {
    Tensor w_q, w_k, w_v, w_o;  // d x d
};

struct FeedForwardParams {
    Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
    std::size_t heads = 1;
    SelfAttentionParams attention;
    LayerNormParams norm1;
    FeedForwardParams ffn;
    LayerNormParams norm2;
};

struct DecoderLayerParams {
    std::size_t heads = 1;
    SelfAttentionParams self_attention;
    LayerNormParams norm1;
    SelfAttentionParams cross_attention;
    LayerNormParams norm2;
    FeedForwardParams ffn;
    LayerNormParams norm3;
};

struct FusionBlockParams {
    SpotlightParams spotlight;
    GlobalFuseParams global;
    Tensor concat_w;  // 3d x d
    Tensor concat_b;  // d
};

struct ClassifierHead {
    Tensor w, b;
};

// Every trainable tensor of the generator and the affect heads.
struct ModelState {
    ModelConfig config;
    Vocabulary vocab;
    PhoneticIndex phonetic;

    Tensor token_embedding;  // V x d
    Tensor positions;        // fixed sinusoidal table, not trained
    std::vector<EncoderLayerParams> encoder;
    std::vector<DecoderLayerParams> decoder;

    std::vector<EncoderLayerParams> audio_encoder;
    std::vector<EncoderLayerParams> video_encoder;
    std::vector<EncoderLayerParams> pe_encoder;
    Tensor pe_embedding;  // phonetic keys x pe.d_c
    Tensor audio_proj, video_proj, pe_proj;
    GifParams pe_gate;

    std::map<std::size_t, FusionBlockParams> fusion;  // by encoder layer index

    Tensor out_w, out_b;
    ClassifierHead sarcasm_head, humour_head, emotion_head;

    // Visits every trainable tensor under a unique dotted name, in a fixed order.
    void visit(const std::function<void(const std::string&, Tensor&)>& fn);
    void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    std::size_t parameter_count() const;
    ClassifierHead& head(LabelTask task);
    const ClassifierHead& head(LabelTask task) const;
};

// Draws a fresh model. Config vocabulary sizes are taken from `vocab`.
ModelState init_model(ModelConfig config, const Vocabulary& vocab);
// Parameter count implied by a config, without building the model.
std::size_t parameter_count(const ModelConfig& config);

// ---- forward pieces --------------------------------------------------------------

struct EncodedInstance {
    std::vector<int> tokens;
    std::optional<Tensor> audio;
    std::optional<Tensor> video;
    std::size_t truncated = 0;  // words dropped from the left to fit n_max
};

// Dialogue words (and, when given, a separator plus the explanation) as ids.
// Longer inputs lose context words from the left.
EncodedInstance encode_instance(const ModelState& s, const MultimodalInstance& instance,
                                const std::vector<std::string>* explanation = nullptr);

Var embed_tokens(Graph& g, const ModelState& s, std::span<const int> tokens);
Var encoder_layer(Var x, const EncoderLayerParams& p);
// Embedding plus positions through the text encoder layers.
Var encode_text(Graph& g, const ModelState& s, std::span<const int> tokens);
Var encode_modality(Var features, const std::vector<EncoderLayerParams>& stack);
// n x L linear interpolation weights; L == 1 or n == 1 averages all frames.
Tensor interpolation_matrix(std::size_t frames, std::size_t n);
Var align_modality(Var features, std::size_t n, const Tensor& proj);
// Pronunciation stream for the tokens, n x d.
Var phonetic_stream(Graph& g, const ModelState& s, std::span<const int> tokens);

// Fusion applied to a text stream at one insertion point.
Var fuse_streams(Var text, std::optional<Var> audio, std::optional<Var> video, const FusionBlockParams& block,
                 const ModelConfig& config, FusionMode mode);

// H_all for the instance.
Var fuse_forward(Graph& g, const ModelState& s, const EncodedInstance& instance, FusionMode mode);
Var fuse_forward(Graph& g, const ModelState& s, const EncodedInstance& instance);

// Decoder logits (T x V) for decoder inputs attending to `memory`.
Var decoder_logits(Graph& g, const ModelState& s, Var memory, std::span<const int> inputs);

// Greedy decoding; ties go to the lowest id. The end token is not returned.
std::vector<int> decode_greedy(const ModelState& s, const Tensor& memory);

// Decoder targets: explanation ids followed by the end token.
std::vector<int> explanation_targets(const ModelState& s, const std::vector<std::string>& explanation);
// Teacher-forced inputs: start token then targets shifted right.
std::vector<int> teacher_inputs(std::span<const int> targets);

struct LossTerm {
    Var total;          // summed token cross-entropy
    std::size_t tokens;  // non-pad targets
};

LossTerm explanation_loss(Graph& g, const ModelState& s, const EncodedInstance& instance,
                          std::span<const int> targets, FusionMode mode);

// ---- optimisation ----------------------------------------------------------------

struct AdamW {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t steps = 0;
    std::vector<Tensor> m, v;

    // Updates tensors whose gradient was touched in this step and clears every gradient.
    void step(ModelState& s, const std::vector<bool>& touched);
};

// Forward, backward and one update on a batch; returns the pre-update mean token loss.
double train_step(ModelState& s, AdamW& opt, std::span<const MultimodalInstance> batch);
double train_step(ModelState& s, AdamW& opt, std::span<const EncodedInstance> inputs,
                  std::span<const std::vector<int>> targets, FusionMode mode);

struct TokenAccuracy {
    std::size_t correct = 0;
    std::size_t total = 0;
    double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

TokenAccuracy teacher_forced_accuracy(const ModelState& s, std::span<const MultimodalInstance> instances);
double mean_loss(const ModelState& s, std::span<const MultimodalInstance> instances);
std::vector<std::string> generate_explanation(const ModelState& s, const MultimodalInstance& instance);

// ---- affect classification -------------------------------------------------------

std::size_t class_count(LabelTask task);
int label_of(const MultimodalInstance& instance, LabelTask task);

struct AffectPrediction {
    int label = 0;
    std::vector<double> logits;
    std::size_t truncated = 0;
};

// Text path (with pronunciation fusion when enabled), mean-pooled, affine head.
Var affect_logits(Graph& g, const ModelState& s, const EncodedInstance& instance, LabelTask task);
AffectPrediction classify_affect(const ModelState& s, const MultimodalInstance& instance,
                                 const std::vector<std::string>* explanation, LabelTask task);

struct AffectExample {
    EncodedInstance input;
    int label = 0;
};

double train_classifier_step(ModelState& s, AdamW& opt, std::span<const AffectExample> batch, LabelTask task);

}  // namespace moses
