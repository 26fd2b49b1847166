// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace moses {

using Words = std::vector<std::string>;

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Clipped n-gram overlap; empty denominators give 0.
Prf rouge_n(const Words& candidate, const Words& reference, std::size_t n);
// Longest common subsequence, beta = 1.
Prf rouge_l(const Words& candidate, const Words& reference);
std::size_t lcs_length(const Words& a, const Words& b);

struct BleuInput {
    Words candidate;
    std::vector<Words> references;
};

// Corpus-level B_1..B_max_n: clipped counts and lengths summed over the corpus,
// one brevity penalty, geometric mean over orders 1..k, no smoothing.
std::vector<double> bleu(const std::vector<BleuInput>& corpus, std::size_t max_n = 4);

struct MeteorAlignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};

// Exact-surface unigram alignment with the most matches, and among those the fewest chunks.
MeteorAlignment meteor_align(const Words& candidate, const Words& reference);
// F_mean = 10PR / (R + 9P), penalty 0.5 (chunks/matches)^3. A candidate that
// reproduces the reference as a single chunk carries no penalty.
double meteor_exact(const Words& candidate, const Words& reference);

// Values in [0, 1]; reports scale by 100 with two decimals.
struct ScoreTable {
    double r1 = 0, r2 = 0, rl = 0;
    double b1 = 0, b2 = 0, b3 = 0, b4 = 0;
    double meteor = 0;
    std::size_t corpus_size = 0;

    nlohmann::ordered_json to_json() const;
    std::string to_text() const;
};

inline const std::vector<std::string>& score_names() {
    static const std::vector<std::string> names = {"R1", "R2", "RL", "B1", "B2", "B3", "B4", "METEOR"};
    return names;
}
std::vector<double> score_values(const ScoreTable& t);
double percent(double x);  // x * 100 rounded to two decimals

// ROUGE and METEOR averaged per sentence, BLEU at corpus level. Inputs are
// lowercased before scoring.
ScoreTable score_corpus(const std::vector<Words>& candidates, const std::vector<Words>& references);

struct ClassReport {
    std::vector<std::string> classes;
    std::vector<double> precision, recall, f1;
    std::vector<std::size_t> support;
    double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
    double accuracy = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]

    nlohmann::ordered_json to_json() const;
    std::string to_text() const;
};

// Labels are class indices; anything outside [0, classes) is an input error.
ClassReport classification_report(const std::vector<int>& gold, const std::vector<int>& predicted,
                                   const std::vector<std::string>& classes);

}  // namespace moses
