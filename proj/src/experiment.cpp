// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/experiment.hpp"

#include <numeric>

#include <fmt/format.h>

#include "moses/errors.hpp"

namespace moses {

namespace {

std::size_t json_size(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_unsigned()) {
        throw ConfigError("'" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

double json_real(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) {
        throw ConfigError("'" + key + "' must be a number");
    }
    return v.get<double>();
}

bool json_flag(const nlohmann::json& v, const std::string& key) {
    if (!v.is_boolean()) {
        throw ConfigError("'" + key + "' must be true or false");
    }
    return v.get<bool>();
}

void expect_object(const nlohmann::json& j, const std::string& what) {
    if (!j.is_object()) {
        throw ConfigError(what + " must be a JSON object");
    }
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng(seed).split(epoch);
    shuffle_in_place(order, rng);
    return order;
}

// Calls `fn(batch_indices)` for every batch of every epoch; stops after `max_steps` when set.
void for_each_batch(std::size_t n, const TrainOptions& o,
                    const std::function<void(std::size_t, const std::vector<std::size_t>&)>& fn) {
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
        const auto order = shuffled_order(n, o.seed, epoch);
        for (std::size_t begin = 0; begin < n; begin += o.batch_size) {
            if (o.max_steps != 0 && step == o.max_steps) {
                return;
            }
            const std::size_t end = std::min(n, begin + o.batch_size);
            fn(epoch, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                               order.begin() + static_cast<std::ptrdiff_t>(end)));
            ++step;
        }
    }
}

AdamW make_optimizer(const TrainOptions& o) {
    AdamW opt;
    opt.lr = o.lr;
    opt.weight_decay = o.weight_decay;
    return opt;
}

}  // namespace

// ---- configuration ---------------------------------------------------------------

void TrainOptions::validate() const {
    if (batch_size == 0) {
        throw ConfigError("train: batch_size must be positive");
    }
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
        throw ConfigError("train: lr and weight_decay must be non-negative");
    }
}

nlohmann::ordered_json TrainOptions::to_json() const {
    return {{"epochs", epochs},       {"batch_size", batch_size}, {"lr", lr},
            {"weight_decay", weight_decay}, {"max_steps", max_steps}, {"seed", seed}};
}

TrainOptions TrainOptions::from_json(const nlohmann::json& j) {
    expect_object(j, "train options");
    TrainOptions o;
    for (const auto& [k, v] : j.items()) {
        if (k == "epochs") o.epochs = json_size(v, k);
        else if (k == "batch_size") o.batch_size = json_size(v, k);
        else if (k == "lr") o.lr = json_real(v, k);
        else if (k == "weight_decay") o.weight_decay = json_real(v, k);
        else if (k == "max_steps") o.max_steps = json_size(v, k);
        else if (k == "seed") o.seed = json_size(v, k);
        else throw ConfigError("train options: unknown key '" + k + "'");
    }
    return o;
}

nlohmann::ordered_json corpus_spec_to_json(const CorpusSpec& s) {
    nlohmann::ordered_json j;
    j["counts"] = s.counts;
    j["audio_dim"] = s.audio_dim;
    j["video_dim"] = s.video_dim;
    j["audio_frames"] = s.audio_frames;
    j["video_frames"] = s.video_frames;
    j["noise"] = s.noise;
    j["variant_probability"] = s.variant_probability;
    j["context_min"] = s.context_min;
    j["context_max"] = s.context_max;
    j["sarcastic_only"] = s.sarcastic_only;
    j["max_vocab"] = s.max_vocab;
    j["seed"] = s.seed;
    j["prototype_seed"] = s.prototype_seed;
    return j;
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
    expect_object(j, "corpus spec");
    CorpusSpec s;
    for (const auto& [k, v] : j.items()) {
        if (k == "counts") {
            if (!v.is_array() || v.size() != 3) {
                throw ConfigError("corpus: 'counts' must list train, val and test sizes");
            }
            for (std::size_t i = 0; i < 3; ++i) {
                s.counts[i] = json_size(v[i], k);
            }
        } else if (k == "audio_dim") s.audio_dim = json_size(v, k);
        else if (k == "video_dim") s.video_dim = json_size(v, k);
        else if (k == "audio_frames") s.audio_frames = json_size(v, k);
        else if (k == "video_frames") s.video_frames = json_size(v, k);
        else if (k == "noise") s.noise = json_real(v, k);
        else if (k == "variant_probability") s.variant_probability = json_real(v, k);
        else if (k == "context_min") s.context_min = json_size(v, k);
        else if (k == "context_max") s.context_max = json_size(v, k);
        else if (k == "sarcastic_only") s.sarcastic_only = json_flag(v, k);
        else if (k == "max_vocab") s.max_vocab = json_size(v, k);
        else if (k == "seed") s.seed = json_size(v, k);
        else if (k == "prototype_seed") s.prototype_seed = json_size(v, k);
        else throw ConfigError("corpus: unknown key '" + k + "'");
    }
    return s;
}

void RunConfig::set_seed(std::uint64_t seed) {
    model.seed = seed;
    corpus.seed = seed;
    train.seed = seed;
    classifier.seed = seed;
}

void RunConfig::validate() const {
    model.validate();
    corpus.validate();
    train.validate();
    classifier.validate();
    if (model.audio.d_c != corpus.audio_dim || model.video.d_c != corpus.video_dim) {
        throw ConfigError(fmt::format("model feature widths {}/{} disagree with corpus widths {}/{}", model.audio.d_c,
                                      model.video.d_c, corpus.audio_dim, corpus.video_dim));
    }
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["model"] = model.to_json();
    j["corpus"] = corpus_spec_to_json(corpus);
    j["train"] = train.to_json();
    j["classifier"] = classifier.to_json();
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const RunConfig& base) {
    expect_object(j, "run config");
    RunConfig c = base;
    const auto merged = [](nlohmann::json into, const nlohmann::json& over) {
        into.update(over, true);
        return into;
    };
    for (const auto& [k, v] : j.items()) {
        expect_object(v, "'" + k + "'");
        if (k == "model") c.model = ModelConfig::from_json(merged(base.model.to_json(), v));
        else if (k == "corpus") c.corpus = corpus_spec_from_json(merged(corpus_spec_to_json(base.corpus), v));
        else if (k == "train") c.train = TrainOptions::from_json(merged(base.train.to_json(), v));
        else if (k == "classifier") c.classifier = TrainOptions::from_json(merged(base.classifier.to_json(), v));
        else throw ConfigError("run config: unknown key '" + k + "'");
    }
    return c;
}

RunConfig run_preset(std::string_view name) {
    RunConfig c;
    c.model = model_preset(name);
    if (name == "toy") {
        c.corpus.audio_dim = c.model.audio.d_c;
        c.corpus.video_dim = c.model.video.d_c;
        c.corpus.audio_frames = 4;
        c.corpus.video_frames = 2;
        c.train = {.epochs = 3, .batch_size = 4, .lr = 1e-3, .weight_decay = 1e-4};
        c.classifier = c.train;
    } else {
        c.train = {.epochs = 3, .batch_size = 4, .lr = 5e-6, .weight_decay = 1e-4};
        c.classifier = c.train;
    }
    return c;
}

std::vector<MultimodalInstance> select_split(const std::vector<MultimodalInstance>& corpus, Split split) {
    std::vector<MultimodalInstance> out;
    for (const auto& inst : corpus) {
        if (inst.split == split) {
            out.push_back(inst);
        }
    }
    return out;
}

// ---- explanation generator -------------------------------------------------------

std::string loss_record_line(const LossRecord& r) {
    return fmt::format("{{\"step\":{},\"epoch\":{},\"loss\":{:.17g}}}", r.step, r.epoch, r.loss);
}

std::vector<LossRecord> train_model(ModelState& s, const std::vector<MultimodalInstance>& train,
                                    const TrainOptions& options,
                                    const std::function<void(const LossRecord&)>& on_step) {
    options.validate();
    if (train.empty()) {
        throw InputError("train_model: empty training set");
    }
    AdamW opt = make_optimizer(options);
    std::vector<LossRecord> log;
    std::vector<MultimodalInstance> batch;
    for_each_batch(train.size(), options, [&](std::size_t epoch, const std::vector<std::size_t>& ids) {
        batch.clear();
        for (std::size_t i : ids) {
            batch.push_back(train[i]);
        }
        const LossRecord r{log.size() + 1, epoch, train_step(s, opt, batch)};
        log.push_back(r);
        if (on_step) {
            on_step(r);
        }
    });
    return log;
}

GenerationResult evaluate_generation(const ModelState& s, const std::vector<MultimodalInstance>& instances) {
    GenerationResult out;
    std::vector<Words> references;
    for (const auto& inst : instances) {
        out.predictions.push_back(generate_explanation(s, inst));
        references.push_back(inst.explanation);
    }
    out.scores = score_corpus(out.predictions, references);
    out.accuracy = teacher_forced_accuracy(s, instances);
    return out;
}

// ---- ablation ladder -------------------------------------------------------------

std::vector<LadderRung> ablation_ladder(const ModelConfig& base) {
    ModelConfig c = base;
    c.mode = FusionMode::T;
    c.use_pe = false;
    c.spotlight = false;
    c.gif = false;
    std::vector<LadderRung> rungs;
    rungs.push_back({"text-only", c});
    c.mode = FusionMode::Concat;
    rungs.push_back({"+concat", c});
    c.mode = FusionMode::DPA;
    rungs.push_back({"+DPA", c});
    c.mode = FusionMode::TAV;
    rungs.push_back({"+MCA2", c});
    c.gif = true;
    rungs.push_back({"+GIF", c});
    c.use_pe = true;
    rungs.push_back({"+PE", c});
    c.spotlight = true;
    rungs.push_back({"+MS", c});
    return rungs;
}

std::vector<AblationRow> run_ablation_suite(const std::vector<MultimodalInstance>& train,
                                            const std::vector<MultimodalInstance>& test, const RunConfig& config) {
    const Vocabulary vocab = build_vocab(train);
    std::vector<AblationRow> rows;
    for (const auto& rung : ablation_ladder(config.model)) {
        ModelState s = init_model(rung.config, vocab);
        train_model(s, train, config.train);
        const auto result = evaluate_generation(s, test);
        rows.push_back({rung.name, result.scores, result.accuracy});
    }
    return rows;
}

std::string ablation_report_text(const std::vector<AblationRow>& rows) {
    std::string out = fmt::format("{:<10}", "system");
    for (const auto& name : score_names()) {
        out += fmt::format("{:>8}", name);
    }
    out += fmt::format("{:>8}\n", "acc");
    for (const auto& row : rows) {
        out += fmt::format("{:<10}", row.name);
        for (double v : score_values(row.scores)) {
            out += fmt::format("{:>8.2f}", percent(v));
        }
        out += fmt::format("{:>8.2f}\n", percent(row.accuracy.value()));
    }
    return out;
}

nlohmann::ordered_json ablation_report_json(const std::vector<AblationRow>& rows) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json r;
        r["system"] = row.name;
        r["scores"] = row.scores.to_json();
        r["token_accuracy"] = percent(row.accuracy.value());
        j.push_back(r);
    }
    return j;
}

// ---- affect protocol -------------------------------------------------------------

std::string_view regime_name(Regime r) {
    switch (r) {
        case Regime::A: return "A";
        case Regime::B: return "B";
        case Regime::C: return "C";
    }
    return "?";
}

std::string_view regime_description(Regime r) {
    switch (r) {
        case Regime::A: return "no explanations";
        case Regime::B: return "explanations at training time";
        case Regime::C: return "explanations at training and test time";
    }
    return "?";
}

std::vector<AffectExample> affect_examples(const ModelState& s, const std::vector<MultimodalInstance>& instances,
                                           const std::vector<std::vector<std::string>>* explanations,
                                           LabelTask task) {
    if (explanations && explanations->size() != instances.size()) {
        throw InputError("affect_examples: one explanation per instance is required");
    }
    std::vector<AffectExample> out;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        out.push_back({encode_instance(s, instances[i], explanations ? &(*explanations)[i] : nullptr),
                       label_of(instances[i], task)});
    }
    return out;
}

void train_affect_classifier(ModelState& s, const std::vector<AffectExample>& train, const TrainOptions& options,
                             LabelTask task) {
    options.validate();
    if (train.empty()) {
        throw InputError("train_affect_classifier: empty training set");
    }
    AdamW opt = make_optimizer(options);
    std::vector<AffectExample> batch;
    for_each_batch(train.size(), options, [&](std::size_t, const std::vector<std::size_t>& ids) {
        batch.clear();
        for (std::size_t i : ids) {
            batch.push_back(train[i]);
        }
        train_classifier_step(s, opt, batch, task);
    });
}

std::vector<int> predict_affect(const ModelState& s, const std::vector<AffectExample>& examples, LabelTask task) {
    std::vector<int> out;
    for (const auto& ex : examples) {
        Graph g(false);
        const Tensor& logits = affect_logits(g, s, ex.input, task).value();
        const auto v = logits.values();
        out.push_back(static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()));
    }
    return out;
}

namespace {

ClassReport regime_run(const std::vector<MultimodalInstance>& train, const std::vector<MultimodalInstance>& test,
                       const std::vector<std::vector<std::string>>* train_explanations,
                       const std::vector<std::vector<std::string>>* test_explanations, const Vocabulary& vocab,
                       const RunConfig& config, LabelTask task) {
    ModelState s = init_model(config.model, vocab);
    train_affect_classifier(s, affect_examples(s, train, train_explanations, task), config.classifier, task);
    const auto examples = affect_examples(s, test, test_explanations, task);
    std::vector<int> gold;
    for (const auto& ex : examples) {
        gold.push_back(ex.label);
    }
    return classification_report(gold, predict_affect(s, examples, task), class_names(task));
}

}  // namespace

ClassReport plain_affect_run(const std::vector<MultimodalInstance>& train, const std::vector<MultimodalInstance>& test,
                             const Vocabulary& vocab, const RunConfig& config, LabelTask task) {
    return regime_run(train, test, nullptr, nullptr, vocab, config, task);
}

AffectReport run_affect_eval(const std::vector<MultimodalInstance>& train,
                             const std::vector<MultimodalInstance>& test, const ModelState& explainer,
                             const RunConfig& config, LabelTask task) {
    if (train.empty() || test.empty()) {
        throw InputError("run_affect_eval: train and test splits must be nonempty");
    }
    AffectReport report;
    report.task = task;
    for (const auto& inst : train) {
        report.train_explanations.push_back(generate_explanation(explainer, inst));
    }
    for (const auto& inst : test) {
        report.test_explanations.push_back(generate_explanation(explainer, inst));
    }
    const Vocabulary& vocab = explainer.vocab;
    report.regimes[0] = plain_affect_run(train, test, vocab, config, task);
    report.regimes[1] = regime_run(train, test, &report.train_explanations, nullptr, vocab, config, task);
    report.regimes[2] =
        regime_run(train, test, &report.train_explanations, &report.test_explanations, vocab, config, task);
    return report;
}

nlohmann::ordered_json AffectReport::to_json() const {
    nlohmann::ordered_json j;
    j["task"] = label_task_name(task);
    for (Regime r : kRegimes) {
        auto entry = regimes[static_cast<std::size_t>(r)].to_json();
        entry["setup"] = regime_description(r);
        j["regimes"][std::string(regime_name(r))] = entry;
    }
    return j;
}

std::string AffectReport::to_text() const {
    std::string out;
    for (Regime r : kRegimes) {
        out += fmt::format("regime {} ({})\n", regime_name(r), regime_description(r));
        out += regimes[static_cast<std::size_t>(r)].to_text();
        out += "\n";
    }
    return out;
}

}  // namespace moses
