// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// moses: data generation, training, evaluation and the experiment suites.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "moses/checkpoint.hpp"
#include "moses/errors.hpp"
#include "moses/experiment.hpp"

namespace fs = std::filesystem;
using namespace moses;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string preset = "toy";
    std::string mode;
    std::string out = "out";
};

// Files written by a command; removed again when the command fails.
class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
        if (!fs::exists(dir_)) {
            fs::create_directories(dir_);
            created_dir_ = true;
        }
    }

    fs::path path(const std::string& name) {
        written_.push_back(dir_ / name);
        return written_.back();
    }

    void write(const std::string& name, std::string_view bytes) { write_file_atomic(path(name), bytes); }

    void discard() {
        std::error_code ec;
        for (const auto& p : written_) {
            fs::remove(p, ec);
            auto partial = p;
            partial += ".partial";
            fs::remove(partial, ec);
        }
        if (created_dir_) {
            fs::remove(dir_, ec);  // only succeeds when empty
        }
    }

private:
    fs::path dir_;
    std::vector<fs::path> written_;
    bool created_dir_ = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON run config; unknown keys are rejected");
    cmd->add_option("--seed", f.seed, "Seed for corpus, initialisation and batch order");
    cmd->add_option("--preset", f.preset, "Base preset")->check(CLI::IsMember({"toy", "paper-defaults"}));
    cmd->add_option("--mode", f.mode, "Fusion mode")->check(CLI::IsMember({"T", "TA", "TV", "TAV", "concat", "DPA"}));
    cmd->add_option("--out", f.out, "Output directory");
}

RunConfig resolve(const CommonFlags& f) {
    RunConfig c = run_preset(f.preset);
    if (!f.config_path.empty()) {
        try {
            c = RunConfig::from_json(nlohmann::json::parse(read_file(f.config_path)), c);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(fmt::format("{}: {}", f.config_path, e.what()));
        }
    }
    if (f.seed) {
        c.set_seed(*f.seed);
    }
    if (!f.mode.empty()) {
        c.model.mode = parse_fusion_mode(f.mode);
    }
    c.validate();
    return c;
}

std::string dump(const nlohmann::ordered_json& j) {
    return j.dump(2) + "\n";
}

std::vector<MultimodalInstance> corpus_from(const std::string& data, const RunConfig& c) {
    if (!data.empty()) {
        return load_jsonl(data);
    }
    spdlog::info("no --data given; generating a corpus from the config (seed {})", c.corpus.seed);
    return generate_corpus(c.corpus);
}

std::vector<MultimodalInstance> with_explanations(std::vector<MultimodalInstance> v) {
    std::erase_if(v, [](const MultimodalInstance& i) { return i.explanation.empty(); });
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* level = std::getenv("MOSES_LOG")) {
        spdlog::set_level(spdlog::level::from_str(level));
    }
    spdlog::set_pattern("[%l] %v");

    CLI::App app{"moses: multimodal sarcasm explanation toolkit"};
    app.require_subcommand(1);

    CommonFlags common;
    std::string data, checkpoint, predictions, split = "test", task = "sarcasm", stats_preset = "swits";
    std::optional<std::size_t> epochs;
    bool detection = false, gold = false;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus as JSONL");
    add_common(gen, common);
    gen->add_flag("--detection", detection, "Also write sarcasm-detection splits built from the corpus");

    auto* train = app.add_subcommand("train", "Train the explanation generator");
    add_common(train, common);
    train->add_option("--data", data, "Corpus JSONL (generated from the config when absent)");
    train->add_option("--epochs", epochs, "Override train.epochs");

    auto* evaluate = app.add_subcommand("evaluate", "Score generated explanations");
    add_common(evaluate, common);
    evaluate->add_option("--data", data, "Corpus JSONL")->required();
    evaluate->add_option("--checkpoint", checkpoint, "Generator checkpoint");
    evaluate->add_option("--predictions", predictions, "explanations.jsonl from the explain command");
    evaluate->add_flag("--gold", gold, "Score the references against themselves");
    evaluate->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));

    auto* explain = app.add_subcommand("explain", "Generate explanations for a split");
    add_common(explain, common);
    explain->add_option("--data", data, "Corpus JSONL")->required();
    explain->add_option("--checkpoint", checkpoint, "Generator checkpoint")->required();
    explain->add_option("--split", split, "Split to explain")->check(CLI::IsMember({"train", "val", "test"}));

    auto* ablate = app.add_subcommand("ablate", "Run the seven-row ablation ladder");
    add_common(ablate, common);
    ablate->add_option("--data", data, "Corpus JSONL (generated from the config when absent)");

    auto* affect = app.add_subcommand("affect-eval", "Three-regime affect classification");
    add_common(affect, common);
    affect->add_option("--data", data, "Labelled JSONL with train and test splits")->required();
    affect->add_option("--checkpoint", checkpoint, "Explainer checkpoint")->required();
    affect->add_option("--task", task, "Label task")->check(CLI::IsMember({"sarcasm", "humour", "emotion"}));

    auto* stats = app.add_subcommand("validate-stats", "Compare label counts with a reference table");
    stats->add_option("--data", data, "WITS-format JSONL")->required();
    stats->add_option("--table", stats_preset, "Reference table")
        ->check(CLI::IsMember({"wits", "swits", "hwits", "ewits"}));
    stats->add_option("--task", task, "Label task")->check(CLI::IsMember({"sarcasm", "humour", "emotion"}));

    CLI11_PARSE(app, argc, argv);

    std::optional<Outputs> out;
    try {
        if (stats->parsed()) {
            ExpectedCounts expected = expected_counts_preset(stats_preset);
            expected.task = parse_label_task(task);
            const auto report = validate_stats(load_jsonl(data), expected);
            for (const auto& d : report.deltas) {
                fmt::print("{:<6} {:<10} expected {:>6} observed {:>6} delta {:+}\n", d.split, d.label,
                           d.expected, d.observed, d.delta());
            }
            fmt::print("{}\n", report.passed() ? "stats match" : "stats differ");
            return report.passed() ? 0 : 1;
        }

        const RunConfig config = resolve(common);
        out.emplace(common.out);
        out->write("config.json", dump(config.to_json()));

        if (gen->parsed()) {
            const auto corpus = generate_corpus(config.corpus);
            write_jsonl(corpus, out->path("corpus.jsonl"));
            if (detection) {
                DetectionOptions o;
                o.seed = config.corpus.seed;
                const auto det = build_detection_splits(corpus, o);
                write_jsonl(det.instances, out->path("detection.jsonl"));
                spdlog::info("detection: {} positives, {} negatives, {} skipped", det.positives, det.negatives,
                             det.skipped);
            }
            spdlog::info("wrote {} instances", corpus.size());
        } else if (train->parsed()) {
            TrainOptions o = config.train;
            if (epochs) {
                o.epochs = *epochs;
            }
            const auto instances = with_explanations(select_split(corpus_from(data, config), Split::Train));
            ModelState s = init_model(config.model, build_vocab(instances));
            spdlog::info("{} parameters, vocabulary {}, {} training instances", s.parameter_count(), s.vocab.size(),
                         instances.size());
            std::string log;
            if (o.epochs > 0) {
                train_model(s, instances, o, [&](const LossRecord& r) {
                    log += loss_record_line(r) + "\n";
                    spdlog::debug("step {} epoch {} loss {:.4f}", r.step, r.epoch, r.loss);
                });
            }
            out->write("loss_log.jsonl", log);
            save_checkpoint(s, out->path("checkpoint.bin"));
            spdlog::info("checkpoint written to {}", (fs::path(common.out) / "checkpoint.bin").string());
        } else if (evaluate->parsed() || explain->parsed()) {
            const auto instances = with_explanations(select_split(load_jsonl(data), parse_split(split)));
            if (instances.empty()) {
                throw InputError("no instances with explanations in split " + split);
            }
            std::vector<Words> refs, preds;
            for (const auto& inst : instances) {
                refs.push_back(inst.explanation);
            }
            if (explain->parsed() || !checkpoint.empty()) {
                const ModelState s = load_checkpoint(checkpoint);
                for (const auto& inst : instances) {
                    preds.push_back(generate_explanation(s, inst));
                }
            } else if (!predictions.empty()) {
                std::ifstream in(predictions);
                if (!in) {
                    throw InputError("cannot open " + predictions);
                }
                std::string line;
                while (std::getline(in, line)) {
                    if (!line.empty()) {
                        preds.push_back(split_words(nlohmann::json::parse(line).at("prediction").get<std::string>()));
                    }
                }
            } else if (gold) {
                preds = refs;
            } else {
                throw ConfigError("evaluate needs --checkpoint, --predictions or --gold");
            }
            if (explain->parsed()) {
                std::string lines;
                for (std::size_t i = 0; i < preds.size(); ++i) {
                    nlohmann::ordered_json j;
                    j["index"] = i;
                    j["prediction"] = join_words(preds[i]);
                    j["reference"] = join_words(refs[i]);
                    lines += j.dump() + "\n";
                }
                out->write("explanations.jsonl", lines);
            } else {
                const ScoreTable scores = score_corpus(preds, refs);
                out->write("scores.json", dump(scores.to_json()));
                out->write("scores.txt", scores.to_text());
                fmt::print("{}", scores.to_text());
            }
        } else if (ablate->parsed()) {
            const auto corpus = corpus_from(data, config);
            const auto rows = run_ablation_suite(with_explanations(select_split(corpus, Split::Train)),
                                                 with_explanations(select_split(corpus, Split::Test)), config);
            out->write("ablation.json", dump(ablation_report_json(rows)));
            out->write("ablation.txt", ablation_report_text(rows));
            fmt::print("{}", ablation_report_text(rows));
        } else if (affect->parsed()) {
            const auto corpus = load_jsonl(data);
            const ModelState explainer = load_checkpoint(checkpoint);
            const auto report = run_affect_eval(select_split(corpus, Split::Train), select_split(corpus, Split::Test),
                                                explainer, config, parse_label_task(task));
            out->write("affect.json", dump(report.to_json()));
            out->write("affect.txt", report.to_text());
            fmt::print("{}", report.to_text());
        }
    } catch (const std::exception& e) {
        if (out) {
            out->discard();
        }
        spdlog::error("{}", e.what());
        return 2;
    }
    return 0;
}
