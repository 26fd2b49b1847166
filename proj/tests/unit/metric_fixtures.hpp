// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hand-computed metric cases from tests/fixtures/metric_oracles.json.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moses/data.hpp"
#include "moses/errors.hpp"
#include "moses/metrics.hpp"

namespace oracle {

// "p/q", "exp(x)", "sqrt(p/q)" or a plain number.
inline double rational(const std::string& text) {
    const auto inner = [&](const std::string& prefix) { return text.substr(prefix.size(), text.size() - prefix.size() - 1); };
    if (text.rfind("exp(", 0) == 0) {
        return std::exp(rational(inner("exp(")));
    }
    if (text.rfind("sqrt(", 0) == 0) {
        return std::sqrt(rational(inner("sqrt(")));
    }
    const auto slash = text.find('/');
    if (slash != std::string::npos) {
        return std::stod(text.substr(0, slash)) / std::stod(text.substr(slash + 1));
    }
    return std::stod(text);
}

struct MetricCase {
    std::string name;
    double worst_error = 0.0;
};

// Evaluates every fixture; worst_error is the largest |got - expected| in the case.
inline std::vector<MetricCase> run_metric_fixtures(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw moses::InputError("cannot open fixture file " + file.string());
    }
    const auto cases = nlohmann::json::parse(in);
    std::vector<MetricCase> out;
    for (const auto& c : cases) {
        const std::string metric = c.at("metric");
        const auto& want = c.at("expected");
        MetricCase result{c.at("name").get<std::string>(), 0.0};
        const auto diff = [&](const char* key, double got) {
            result.worst_error = std::max(result.worst_error, std::abs(got - rational(want.at(key).get<std::string>())));
        };
        if (metric == "bleu") {
            std::vector<moses::BleuInput> corpus;
            for (const auto& pair : c.at("corpus")) {
                corpus.push_back({moses::split_words(pair[0].get<std::string>()),
                                  {moses::split_words(pair[1].get<std::string>())}});
            }
            const auto b = moses::bleu(corpus, 4);
            diff("b1", b[0]);
            diff("b2", b[1]);
            diff("b3", b[2]);
            diff("b4", b[3]);
        } else {
            const auto cand = moses::split_words(c.at("candidate").get<std::string>());
            const auto ref = moses::split_words(c.at("reference").get<std::string>());
            if (metric == "meteor") {
                diff("score", moses::meteor_exact(cand, ref));
            } else {
                const moses::Prf prf = metric == "rougeL" ? moses::rouge_l(cand, ref)
                                                          : moses::rouge_n(cand, ref, metric == "rouge2" ? 2 : 1);
                diff("p", prf.precision);
                diff("r", prf.recall);
                diff("f", prf.f1);
            }
        }
        out.push_back(result);
    }
    return out;
}

}  // namespace oracle
