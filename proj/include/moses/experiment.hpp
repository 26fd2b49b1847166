// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration plus the training, evaluation, ablation and affect runners
// shared by the command-line tool and the acceptance checks.

#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moses/data.hpp"
#include "moses/metrics.hpp"
#include "moses/model.hpp"

namespace moses {

struct TrainOptions {
    std::size_t epochs = 3;
    std::size_t batch_size = 4;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t max_steps = 0;  // 0 means no cap
    std::uint64_t seed = 1;

    bool operator==(const TrainOptions&) const = default;
    void validate() const;
    nlohmann::ordered_json to_json() const;
    static TrainOptions from_json(const nlohmann::json& j);
};

nlohmann::ordered_json corpus_spec_to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);

struct RunConfig {
    ModelConfig model;
    CorpusSpec corpus;
    TrainOptions train;       // explanation generator
    TrainOptions classifier;  // affect heads

    // One seed drives the corpus, initialisation and batch order.
    void set_seed(std::uint64_t seed);
    void validate() const;
    nlohmann::ordered_json to_json() const;
    // Missing keys keep `base` values; unknown keys are rejected.
    static RunConfig from_json(const nlohmann::json& j, const RunConfig& base);
};

RunConfig run_preset(std::string_view name);

std::vector<MultimodalInstance> select_split(const std::vector<MultimodalInstance>& corpus, Split split);

// ---- explanation generator -------------------------------------------------------

struct LossRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss = 0.0;
};

std::string loss_record_line(const LossRecord& r);

// Mini-batch training with a seeded per-epoch shuffle. Calls `on_step` after every update.
std::vector<LossRecord> train_model(ModelState& s, const std::vector<MultimodalInstance>& train,
                                    const TrainOptions& options,
                                    const std::function<void(const LossRecord&)>& on_step = {});

struct GenerationResult {
    ScoreTable scores;
    TokenAccuracy accuracy;
    std::vector<std::vector<std::string>> predictions;
};

GenerationResult evaluate_generation(const ModelState& s, const std::vector<MultimodalInstance>& instances);

// ---- ablation ladder -------------------------------------------------------------

struct LadderRung {
    std::string name;
    ModelConfig config;
};

// text-only, +concat, +DPA, +MCA2, +GIF, +PE, +MS, each adding one component to the last.
std::vector<LadderRung> ablation_ladder(const ModelConfig& base);

struct AblationRow {
    std::string name;
    ScoreTable scores;
    TokenAccuracy accuracy;
};

std::vector<AblationRow> run_ablation_suite(const std::vector<MultimodalInstance>& train,
                                            const std::vector<MultimodalInstance>& test, const RunConfig& config);
std::string ablation_report_text(const std::vector<AblationRow>& rows);
nlohmann::ordered_json ablation_report_json(const std::vector<AblationRow>& rows);

// ---- affect protocol -------------------------------------------------------------

enum class Regime { A, B, C };
inline constexpr std::array<Regime, 3> kRegimes = {Regime::A, Regime::B, Regime::C};
std::string_view regime_name(Regime r);
std::string_view regime_description(Regime r);

std::vector<AffectExample> affect_examples(const ModelState& s, const std::vector<MultimodalInstance>& instances,
                                           const std::vector<std::vector<std::string>>* explanations,
                                           LabelTask task);
void train_affect_classifier(ModelState& s, const std::vector<AffectExample>& train, const TrainOptions& options,
                             LabelTask task);
std::vector<int> predict_affect(const ModelState& s, const std::vector<AffectExample>& examples, LabelTask task);

// Fresh classifier trained and tested on plain dialogues.
ClassReport plain_affect_run(const std::vector<MultimodalInstance>& train, const std::vector<MultimodalInstance>& test,
                             const Vocabulary& vocab, const RunConfig& config, LabelTask task);

struct AffectReport {
    LabelTask task = LabelTask::Sarcasm;
    std::array<ClassReport, 3> regimes;
    std::vector<std::vector<std::string>> train_explanations, test_explanations;

    nlohmann::ordered_json to_json() const;
    std::string to_text() const;
};

// A: no explanations. B: generated explanations appended to training inputs only.
// C: appended at training and test time. Every regime starts from the same initialisation.
AffectReport run_affect_eval(const std::vector<MultimodalInstance>& train,
                             const std::vector<MultimodalInstance>& test, const ModelState& explainer,
                             const RunConfig& config, LabelTask task);

}  // namespace moses
