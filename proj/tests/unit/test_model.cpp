// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "moses/errors.hpp"
#include "moses/model.hpp"
#include "oracles.hpp"

using namespace moses;

namespace {

CorpusSpec tiny_corpus_spec() {
    CorpusSpec spec;
    spec.counts = {24, 4, 4};
    spec.audio_dim = 4;
    spec.video_dim = 6;
    spec.audio_frames = 3;
    spec.video_frames = 2;
    spec.context_min = 1;
    spec.context_max = 1;
    spec.seed = 5;
    return spec;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.d = 8;
    c.n_max = 48;
    c.encoder_layers = 2;
    c.decoder_layers = 1;
    c.heads_text = 2;
    c.audio = {1, 2, 4};
    c.video = {1, 2, 6};
    c.pe = {1, 2, 4};
    c.max_decode_len = 8;
    c.seed = 3;
    return c;
}

struct Fixture {
    std::vector<MultimodalInstance> corpus = generate_corpus(tiny_corpus_spec());
    Vocabulary vocab = build_vocab(corpus);
};

void zero(Tensor& t) {
    for (double& v : t.values()) {
        v = 0.0;
    }
}

// Reference post-norm encoder layer in plain loops.
Tensor reference_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            mean += x(i, j);
        }
        mean /= static_cast<double>(x.cols());
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            var += (x(i, j) - mean) * (x(i, j) - mean);
        }
        var /= static_cast<double>(x.cols());
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out(i, j) = (x(i, j) - mean) / std::sqrt(var + 1e-5) * gain[j] + bias[j];
        }
    }
    return out;
}

Tensor reference_encoder_layer(const Tensor& x, const EncoderLayerParams& p) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    const std::size_t dh = d / p.heads;
    const Tensor q = oracle::naive_matmul(x, p.attention.w_q);
    const Tensor k = oracle::naive_matmul(x, p.attention.w_k);
    const Tensor v = oracle::naive_matmul(x, p.attention.w_v);
    Tensor ctx({n, d});
    for (std::size_t h = 0; h < p.heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> s(n);
            double top = -1e300;
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                    dot += q(i, h * dh + c) * k(j, h * dh + c);
                }
                s[j] = dot / std::sqrt(static_cast<double>(dh));
                top = std::max(top, s[j]);
            }
            double z = 0.0;
            for (double& e : s) {
                e = std::exp(e - top);
                z += e;
            }
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t c = 0; c < dh; ++c) {
                    ctx(i, h * dh + c) += s[j] / z * v(j, h * dh + c);
                }
            }
        }
    }
    Tensor h1 = oracle::naive_matmul(ctx, p.attention.w_o);
    for (std::size_t i = 0; i < h1.size(); ++i) {
        h1[i] += x[i];
    }
    h1 = reference_layer_norm(h1, p.norm1.gain, p.norm1.bias);
    Tensor hidden = oracle::naive_matmul(h1, p.ffn.w1);
    for (std::size_t i = 0; i < hidden.rows(); ++i) {
        for (std::size_t j = 0; j < hidden.cols(); ++j) {
            const double u = hidden(i, j) + p.ffn.b1[j];
            hidden(i, j) = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
        }
    }
    Tensor h2 = oracle::naive_matmul(hidden, p.ffn.w2);
    for (std::size_t i = 0; i < h2.rows(); ++i) {
        for (std::size_t j = 0; j < h2.cols(); ++j) {
            h2(i, j) += p.ffn.b2[j] + h1(i, j);
        }
    }
    return reference_layer_norm(h2, p.norm2.gain, p.norm2.bias);
}

}  // namespace

TEST_CASE("model init is deterministic and matches the closed-form count") {
    Fixture f;
    const ModelState a = init_model(tiny_config(), f.vocab);
    const ModelState b = init_model(tiny_config(), f.vocab);
    std::vector<const Tensor*> pa, pb;
    a.visit([&](const std::string&, const Tensor& t) { pa.push_back(&t); });
    b.visit([&](const std::string&, const Tensor& t) { pb.push_back(&t); });
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->same_values(*pb[i]));
    }
    CHECK(a.parameter_count() == parameter_count(a.config));
    CHECK(a.config.vocab_size == f.vocab.size());

    ModelConfig multi = tiny_config();
    multi.fusion_insert = {0, 1};
    const ModelState m = init_model(multi, f.vocab);
    CHECK(m.fusion.size() == 2);
    CHECK(m.parameter_count() == parameter_count(m.config));

    // Paper-scale count from the formula alone.
    ModelConfig paper = model_preset("paper-defaults");
    paper.vocab_size = 30000;
    paper.phonetic_vocab_size = 20000;
    CHECK(parameter_count(paper) > 100'000'000);

    std::set<std::string> names;
    a.visit([&](const std::string& name, const Tensor&) { CHECK(names.insert(name).second); });
}

TEST_CASE("model config json round trip and validation") {
    ModelConfig c = tiny_config();
    c.fusion_insert = {1};
    c.mode = FusionMode::TA;
    c.gate_sigmoid = true;
    c.vocab_size = 40;
    c.phonetic_vocab_size = 30;
    const ModelConfig back = ModelConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
    CHECK(back == c);

    auto j = c.to_json();
    j["dropout"] = 0.1;
    CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
    auto k = c.to_json();
    k["audio"]["width"] = 3;
    CHECK_THROWS_AS(ModelConfig::from_json(k), ConfigError);

    ModelConfig bad = c;
    bad.heads_text = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.fusion_insert = {2};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.gif = false;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(model_preset("huge"), ConfigError);
    CHECK_THROWS_AS(parse_fusion_mode("AV"), ConfigError);
    for (auto m : {FusionMode::T, FusionMode::TA, FusionMode::TV, FusionMode::TAV, FusionMode::Concat, FusionMode::DPA}) {
        CHECK(parse_fusion_mode(fusion_mode_name(m)) == m);
    }
}

TEST_CASE("text encoder layer matches a loop reference") {
    Fixture f;
    const ModelState s = init_model(tiny_config(), f.vocab);
    const int tokens[] = {5, 7};
    Graph g;
    const Var x = embed_tokens(g, s, tokens);
    const Tensor got = encoder_layer(x, s.encoder[0]).value();
    CHECK(max_abs_diff(got, reference_encoder_layer(x.value(), s.encoder[0])) < 1e-12);

    // Embedding rows plus the sinusoidal table.
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(x.value()(1, j) == doctest::Approx(s.token_embedding(7, j) + s.positions(1, j)).epsilon(1e-15));
    }
    CHECK(s.positions(1, 0) == doctest::Approx(std::sin(1.0)));
    CHECK(s.positions(1, 1) == doctest::Approx(std::cos(1.0)));
    CHECK(s.positions.rows() == 48);
}

TEST_CASE("single-frame modality reduces to the pointwise layer") {
    Fixture f;
    const ModelState s = init_model(tiny_config(), f.vocab);
    Rng rng(9);
    const Tensor one = oracle::random_tensor({1, 4}, rng);
    Graph g;
    const Tensor got = encode_modality(g.constant(one), s.audio_encoder).value();
    // A single key gives attention weight 1, so the context is v itself.
    CHECK(max_abs_diff(got, reference_encoder_layer(one, s.audio_encoder[0])) < 1e-12);
    CHECK_THROWS_AS(encode_modality(g.constant(Tensor({2, 5})), s.audio_encoder), DimensionError);
}

TEST_CASE("frame interpolation") {
    const Tensor p = interpolation_matrix(3, 5);
    const Tensor expected = Tensor::matrix(5, 3, {1, 0, 0, 0.5, 0.5, 0, 0, 1, 0, 0, 0.5, 0.5, 0, 0, 1});
    CHECK(max_abs_diff(p, expected) == 0.0);
    CHECK(max_abs_diff(interpolation_matrix(4, 4), Tensor::identity(4)) < 1e-15);
    CHECK(max_abs_diff(interpolation_matrix(2, 1), Tensor::matrix(1, 2, {0.5, 0.5})) == 0.0);
    CHECK(max_abs_diff(interpolation_matrix(1, 3), Tensor({3, 1}, 1.0)) == 0.0);
    const Tensor q = interpolation_matrix(7, 3);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < q.cols(); ++j) {
            row += q(i, j);
        }
        CHECK(row == doctest::Approx(1.0));
    }
    CHECK_THROWS_AS(interpolation_matrix(0, 3), DimensionError);
}

TEST_CASE("text mode with a closed pronunciation gate is the plain encoder") {
    Fixture f;
    ModelConfig c = tiny_config();
    c.mode = FusionMode::T;
    ModelState s = init_model(c, f.vocab);
    const auto input = encode_instance(s, f.corpus[0]);
    Graph g;
    const Tensor plain = encode_text(g, s, input.tokens).value();
    zero(s.pe_gate.w_gate);
    zero(s.pe_gate.b_gate);
    CHECK(fuse_forward(g, s, input).value().same_values(plain));

    s.config.use_pe = false;
    CHECK(fuse_forward(g, s, input).value().same_values(plain));
    s.config.use_pe = true;
    s.pe_gate.b_gate[0] = 1.0;
    CHECK_FALSE(fuse_forward(g, s, input).value().same_values(plain));
    // Text mode ignores missing modalities.
    EncodedInstance bare = input;
    bare.audio.reset();
    bare.video.reset();
    CHECK_NOTHROW(fuse_forward(g, s, bare));
    CHECK_THROWS_AS(fuse_forward(g, s, bare, FusionMode::TA), InputError);
}

TEST_CASE("trimodal fusion with only the text gate open returns the text stream") {
    Fixture f;
    ModelState s = init_model(tiny_config(), f.vocab);
    FusionBlockParams& block = s.fusion.begin()->second;
    for (std::size_t m = 0; m < kBundleMembers; ++m) {
        zero(block.global.gates[m].w_gate);
        zero(block.global.gates[m].b_gate);
    }
    Rng rng(4);
    const Tensor text = oracle::random_tensor({5, 8}, rng);
    const Tensor audio = oracle::random_tensor({5, 8}, rng);
    const Tensor video = oracle::random_tensor({5, 8}, rng);
    Graph g;
    const auto run = [&](FusionMode mode) {
        return fuse_streams(g.constant(text), g.constant(audio), g.constant(video), block, s.config, mode).value();
    };
    CHECK(max_abs_diff(run(FusionMode::TAV), Tensor({5, 8}, 0.0)) == 0.0);
    for (double& b : block.global.gates[static_cast<std::size_t>(Member::Text)].b_gate.values()) {
        b = 1.0;
    }
    CHECK(run(FusionMode::TAV).same_values(text));
    CHECK(run(FusionMode::TA).same_values(text));
    CHECK(run(FusionMode::T).same_values(text));

    // Without the spotlight, open text gates on a trimodal residual give text + C(t|a) + C(t|v).
    s.config.spotlight = false;
    s.config.gif = false;
    const Tensor sum = run(FusionMode::TAV);
    FusionOptions options;
    const Tensor ca = cross_context(g.constant(text), g.constant(audio), block.spotlight[CrossPair::TextAudio], options).value();
    const Tensor cv = cross_context(g.constant(text), g.constant(video), block.spotlight[CrossPair::TextVideo], options).value();
    Tensor expected = text;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        expected[i] += ca[i] + cv[i];
    }
    CHECK(max_abs_diff(sum, expected) < 1e-14);

    // Concat: [t a v] W + b.
    const Tensor cat = run(FusionMode::Concat);
    Tensor joined({5, 24});
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            joined(i, j) = text(i, j);
            joined(i, 8 + j) = audio(i, j);
            joined(i, 16 + j) = video(i, j);
        }
    }
    CHECK(max_abs_diff(cat, oracle::naive_matmul(joined, block.concat_w)) < 1e-14);
}

TEST_CASE("greedy decoding follows a hand-built successor table") {
    Vocabulary vocab = Vocabulary::from_tokens({"<pad>", "<s>", "</s>", "<sep>", "<unk>", "a", "b", "c"});
    ModelConfig c = tiny_config();
    c.decoder_layers = 1;
    c.max_decode_len = 6;
    c.n_max = 8;
    ModelState s = init_model(c, vocab);
    auto& layer = s.decoder[0];
    for (Tensor* t : {&layer.self_attention.w_o, &layer.cross_attention.w_o, &layer.ffn.w1, &layer.ffn.b1,
                      &layer.ffn.w2, &layer.ffn.b2, &s.token_embedding, &s.out_w, &s.out_b}) {
        zero(*t);
    }
    for (std::size_t k = 0; k < 8; ++k) {
        s.token_embedding(k, k) = 100.0;
    }
    const auto wire = [&](std::vector<std::pair<int, int>> edges) {
        zero(s.out_w);
        for (auto [from, to] : edges) {
            s.out_w(static_cast<std::size_t>(from), static_cast<std::size_t>(to)) = 1.0;
        }
    };
    const Tensor memory({3, 8}, 0.25);
    wire({{1, 5}, {5, 6}, {6, 7}, {7, 2}});
    CHECK(decode_greedy(s, memory) == std::vector<int>{5, 6, 7});
    CHECK(s.vocab.decode(decode_greedy(s, memory)) == std::vector<std::string>{"a", "b", "c"});
    wire({{1, 5}, {5, 6}, {6, 7}, {7, 5}});
    CHECK(decode_greedy(s, memory) == std::vector<int>{5, 6, 7, 5, 6, 7});
    wire({{1, 2}});
    CHECK(decode_greedy(s, memory).empty());
    // All logits tied: lowest id wins, which is the pad token.
    zero(s.out_w);
    CHECK(decode_greedy(s, memory) == std::vector<int>(6, 0));
}

TEST_CASE("initial loss is near uniform and training lowers it") {
    Fixture f;
    ModelState s = init_model(tiny_config(), f.vocab);
    const std::span<const MultimodalInstance> batch(f.corpus.data(), 4);
    const double initial = mean_loss(s, batch);
    const double uniform = std::log(static_cast<double>(f.vocab.size()));
    CHECK(std::abs(initial - uniform) < 0.15 * uniform);

    AdamW opt;
    opt.lr = 1e-2;
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 50; ++step) {
        const double loss = train_step(s, opt, batch);
        CHECK(std::isfinite(loss));
        if (step == 0) {
            first = loss;
        }
        last = loss;
    }
    CHECK(first == doctest::Approx(initial).epsilon(1e-12));
    CHECK(mean_loss(s, batch) < 0.5 * first);
    CHECK(last < first);
    CHECK(opt.steps == 50);
    const auto acc = teacher_forced_accuracy(s, batch);
    CHECK(acc.total == 4 * 6);
    CHECK(acc.value() > 0.5);
}

TEST_CASE("zero learning rate and decay leave parameters unchanged") {
    Fixture f;
    ModelState s = init_model(tiny_config(), f.vocab);
    const ModelState before = s;
    AdamW opt;
    opt.lr = 0.0;
    opt.weight_decay = 0.0;
    train_step(s, opt, std::span<const MultimodalInstance>(f.corpus.data(), 2));
    std::vector<const Tensor*> a, b;
    s.visit([&](const std::string&, const Tensor& t) { a.push_back(&t); });
    before.visit([&](const std::string&, const Tensor& t) { b.push_back(&t); });
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->same_values(*b[i]));
        for (double gv : a[i]->grad()) {
            CHECK(gv == 0.0);
        }
    }

    // Untouched tensors are not decayed; touched ones are.
    AdamW decay;
    decay.lr = 1e-3;
    decay.weight_decay = 0.5;
    train_step(s, decay, std::span<const MultimodalInstance>(f.corpus.data(), 2));
    CHECK(s.sarcasm_head.w.same_values(before.sarcasm_head.w));
    CHECK_FALSE(s.out_w.same_values(before.out_w));

    MultimodalInstance empty = f.corpus[0];
    empty.explanation.clear();
    CHECK_THROWS_AS(train_step(s, decay, std::span<const MultimodalInstance>(&empty, 1)), InputError);
}

TEST_CASE("padded targets do not change the loss") {
    Fixture f;
    const ModelState s = init_model(tiny_config(), f.vocab);
    const auto input = encode_instance(s, f.corpus[1]);
    auto targets = explanation_targets(s, f.corpus[1].explanation);
    Graph g1(false), g2(false);
    const auto plain = explanation_loss(g1, s, input, targets, FusionMode::TAV);
    targets.insert(targets.end(), 3, Vocabulary::kPad);
    const auto padded = explanation_loss(g2, s, input, targets, FusionMode::TAV);
    CHECK(plain.tokens == padded.tokens);
    CHECK(std::abs(plain.total.value()[0] - padded.total.value()[0]) < 1e-12);
}

TEST_CASE("parameter gradients agree with central differences") {
    Fixture f;
    const ModelConfig c = tiny_config();
    ModelState s = init_model(c, f.vocab);
    const auto input = encode_instance(s, f.corpus[2]);
    const auto targets = explanation_targets(s, f.corpus[2].explanation);
    const auto loss = [&](Graph& g) { return explanation_loss(g, s, input, targets, FusionMode::TAV).total; };
    Rng pick(17);
    std::size_t checked = 0;
    double worst = 0.0;
    s.visit([&](const std::string& name, Tensor& t) {
        if (name.rfind("head_", 0) == 0) {
            return;
        }
        const std::size_t count = std::max<std::size_t>(1, t.size() / 100);
        std::vector<std::size_t> coords;
        for (std::size_t i = 0; i < count; ++i) {
            coords.push_back(pick.below(t.size()));
        }
        const double err = grad_check_parameter(loss, t, 1e-5, coords).max_rel_error;
        if (err > 1e-5) {
            MESSAGE(name << " rel error " << err);
        }
        worst = std::max(worst, err);
        checked += count;
    });
    CHECK(checked > 100);
    CHECK(worst < 1e-5);
}

TEST_CASE("pronunciation fusion gradients") {
    Fixture f;
    ModelState s = init_model(tiny_config(), f.vocab);
    const auto input = encode_instance(s, f.corpus[3]);
    const auto loss = [&](Graph& g) {
        const Var text = g.constant(Tensor({input.tokens.size(), 8}, 0.3));
        return sum(gif_fuse_bimodal(text, phonetic_stream(g, s, input.tokens), s.pe_gate, s.config.gate_sigmoid));
    };
    for (Tensor* t : {&s.pe_embedding, &s.pe_proj, &s.pe_gate.w_gate, &s.pe_gate.b_gate, &s.pe_encoder[0].ffn.w1,
                      &s.pe_encoder[0].attention.w_q}) {
        CHECK(grad_check_parameter(loss, *t, 1e-5).max_rel_error < 1e-6);
    }
    // Spelling variants share a pronunciation row.
    const auto keys = s.phonetic.key_of_token;
    if (f.vocab.contains("party") && f.vocab.contains("parti")) {
        CHECK(keys[static_cast<std::size_t>(f.vocab.id("party"))] == keys[static_cast<std::size_t>(f.vocab.id("parti"))]);
    }
}

TEST_CASE("affect heads and explanation-conditioned inputs") {
    Fixture f;
    const ModelState s = init_model(tiny_config(), f.vocab);
    const auto& inst = f.corpus[0];
    CHECK(classify_affect(s, inst, nullptr, LabelTask::Sarcasm).logits.size() == 2);
    CHECK(classify_affect(s, inst, nullptr, LabelTask::Humour).logits.size() == 2);
    CHECK(classify_affect(s, inst, nullptr, LabelTask::Emotion).logits.size() == 4);
    const std::vector<std::string> none;
    const auto a = classify_affect(s, inst, nullptr, LabelTask::Emotion);
    const auto b = classify_affect(s, inst, &none, LabelTask::Emotion);
    CHECK(a.logits == b.logits);
    const auto c = classify_affect(s, inst, &inst.explanation, LabelTask::Emotion);
    CHECK(c.logits != a.logits);

    const auto with = encode_instance(s, inst, &inst.explanation);
    const auto without = encode_instance(s, inst);
    CHECK(with.tokens.size() == without.tokens.size() + 1 + inst.explanation.size());
    CHECK(with.tokens[without.tokens.size()] == Vocabulary::kSep);

    ModelConfig shortc = tiny_config();
    shortc.n_max = 4;
    const ModelState t = init_model(shortc, f.vocab);
    const auto cut = encode_instance(t, inst, &inst.explanation);
    CHECK(cut.tokens.size() == 4);
    CHECK(cut.truncated == with.tokens.size() - 4);
    CHECK(std::equal(cut.tokens.begin(), cut.tokens.end(), with.tokens.end() - 4));
}

TEST_CASE("classifier training lowers its loss and only moves its path") {
    Fixture f;
    ModelState s = init_model(tiny_config(), f.vocab);
    const ModelState before = s;
    std::vector<AffectExample> batch;
    for (std::size_t i = 0; i < 8; ++i) {
        batch.push_back({encode_instance(s, f.corpus[i]), label_of(f.corpus[i], LabelTask::Emotion)});
    }
    AdamW opt;
    opt.lr = 1e-2;
    const double first = train_classifier_step(s, opt, batch, LabelTask::Emotion);
    double last = first;
    for (int i = 0; i < 30; ++i) {
        last = train_classifier_step(s, opt, batch, LabelTask::Emotion);
    }
    CHECK(last < first);
    CHECK(s.out_w.same_values(before.out_w));
    CHECK(s.sarcasm_head.w.same_values(before.sarcasm_head.w));
    CHECK_FALSE(s.emotion_head.w.same_values(before.emotion_head.w));
    batch[0].label = 7;
    CHECK_THROWS_AS(train_classifier_step(s, opt, batch, LabelTask::Emotion), InputError);
}
