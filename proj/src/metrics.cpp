// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <unordered_map>

#include <fmt/format.h>

#include "moses/errors.hpp"

namespace moses {

namespace {

using Counts = std::map<Words, std::size_t>;

Counts ngram_counts(const Words& w, std::size_t n) {
    Counts c;
    if (n == 0 || w.size() < n) {
        return c;
    }
    for (std::size_t i = 0; i + n <= w.size(); ++i) {
        ++c[Words(w.begin() + static_cast<std::ptrdiff_t>(i), w.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return c;
}

double ratio(double num, double den) {
    return den > 0 ? num / den : 0.0;
}

Prf make_prf(double overlap, double cand_total, double ref_total) {
    Prf out;
    out.precision = ratio(overlap, cand_total);
    out.recall = ratio(overlap, ref_total);
    out.f1 = ratio(2 * out.precision * out.recall, out.precision + out.recall);
    return out;
}

Words lowered(const Words& w) {
    Words out = w;
    for (auto& s : out) {
        for (char& c : s) {
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    return out;
}

// Depth-first search over candidate positions. Every candidate token whose type
// still has unused reference slots must be matched for the alignment to be
// maximal, so only the choice of reference position branches.
class ChunkSearch {
public:
    ChunkSearch(const Words& cand, const Words& ref) : cand_(cand) {
        std::unordered_map<std::string, std::size_t> cand_count, ref_count;
        for (const auto& w : cand) {
            ++cand_count[w];
        }
        for (std::size_t j = 0; j < ref.size(); ++j) {
            ++ref_count[ref[j]];
            positions_[ref[j]].push_back(static_cast<int>(j));
        }
        for (const auto& [w, c] : cand_count) {
            const auto it = ref_count.find(w);
            const std::size_t m = it == ref_count.end() ? 0 : std::min(c, it->second);
            quota_[w] = m;
            remaining_cand_[w] = c;
            matches_ += m;
        }
        used_.assign(ref.size(), false);
    }

    MeteorAlignment run() {
        if (matches_ == 0) {
            return {0, 0};
        }
        best_ = matches_ + 1;
        search(0, 0, -2, -2);
        return {matches_, best_};
    }

private:
    void search(std::size_t i, std::size_t chunks, int prev_cand, int prev_ref) {
        if (chunks >= best_ || (++nodes_ > kNodeCap && best_ <= matches_)) {
            return;
        }
        if (i == cand_.size()) {
            best_ = chunks;
            return;
        }
        const std::string& w = cand_[i];
        std::size_t& quota = quota_[w];
        std::size_t& left = remaining_cand_[w];
        --left;
        // Skip this token only if the remaining occurrences can still fill the quota.
        if (quota <= left) {
            search(i + 1, chunks, prev_cand, prev_ref);
        }
        if (quota > 0) {
            const auto it = positions_.find(w);
            if (it != positions_.end()) {
                std::vector<int> order = it->second;
                // Continuing the current chunk first finds good bounds early.
                std::stable_partition(order.begin(), order.end(), [&](int r) {
                    return static_cast<int>(i) == prev_cand + 1 && r == prev_ref + 1;
                });
                for (int r : order) {
                    if (used_[static_cast<std::size_t>(r)]) {
                        continue;
                    }
                    const bool extends = static_cast<int>(i) == prev_cand + 1 && r == prev_ref + 1;
                    used_[static_cast<std::size_t>(r)] = true;
                    --quota;
                    search(i + 1, chunks + (extends ? 0 : 1), static_cast<int>(i), r);
                    ++quota;
                    used_[static_cast<std::size_t>(r)] = false;
                }
            }
        }
        ++left;
    }

    static constexpr std::size_t kNodeCap = 2'000'000;

    const Words& cand_;
    std::unordered_map<std::string, std::vector<int>> positions_;
    std::unordered_map<std::string, std::size_t> quota_;
    std::unordered_map<std::string, std::size_t> remaining_cand_;
    std::vector<bool> used_;
    std::size_t matches_ = 0;
    std::size_t best_ = 0;
    std::size_t nodes_ = 0;
};

std::string format_percent(double x) {
    return fmt::format("{:.2f}", percent(x));
}

}  // namespace

Prf rouge_n(const Words& candidate, const Words& reference, std::size_t n) {
    if (n == 0) {
        throw InputError("rouge_n: n must be at least 1");
    }
    const Counts c = ngram_counts(candidate, n);
    const Counts r = ngram_counts(reference, n);
    double overlap = 0;
    for (const auto& [gram, count] : c) {
        const auto it = r.find(gram);
        if (it != r.end()) {
            overlap += static_cast<double>(std::min(count, it->second));
        }
    }
    const auto total = [](std::size_t len, std::size_t k) { return len >= k ? static_cast<double>(len - k + 1) : 0.0; };
    return make_prf(overlap, total(candidate.size(), n), total(reference.size(), n));
}

std::size_t lcs_length(const Words& a, const Words& b) {
    std::vector<std::size_t> row(b.size() + 1, 0), prev(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::swap(row, prev);
        for (std::size_t j = 1; j <= b.size(); ++j) {
            row[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], row[j - 1]);
        }
    }
    return a.empty() ? 0 : row[b.size()];
}

Prf rouge_l(const Words& candidate, const Words& reference) {
    return make_prf(static_cast<double>(lcs_length(candidate, reference)), static_cast<double>(candidate.size()),
                    static_cast<double>(reference.size()));
}

std::vector<double> bleu(const std::vector<BleuInput>& corpus, std::size_t max_n) {
    if (corpus.empty()) {
        throw InputError("bleu: empty corpus");
    }
    if (max_n == 0) {
        throw InputError("bleu: max_n must be at least 1");
    }
    std::vector<double> clipped(max_n, 0.0), totals(max_n, 0.0);
    double cand_len = 0, ref_len = 0;
    for (const auto& item : corpus) {
        cand_len += static_cast<double>(item.candidate.size());
        // Closest reference length, shorter on ties.
        std::size_t best = 0;
        bool have = false;
        for (const auto& r : item.references) {
            const auto diff = [&](std::size_t len) {
                return len > item.candidate.size() ? len - item.candidate.size() : item.candidate.size() - len;
            };
            if (!have || diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) {
                best = r.size();
                have = true;
            }
        }
        ref_len += static_cast<double>(best);
        for (std::size_t n = 1; n <= max_n; ++n) {
            const Counts c = ngram_counts(item.candidate, n);
            Counts max_ref;
            for (const auto& r : item.references) {
                for (const auto& [gram, count] : ngram_counts(r, n)) {
                    max_ref[gram] = std::max(max_ref[gram], count);
                }
            }
            for (const auto& [gram, count] : c) {
                totals[n - 1] += static_cast<double>(count);
                const auto it = max_ref.find(gram);
                if (it != max_ref.end()) {
                    clipped[n - 1] += static_cast<double>(std::min(count, it->second));
                }
            }
        }
    }
    std::vector<double> out(max_n, 0.0);
    if (cand_len == 0) {
        return out;
    }
    const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
    double log_sum = 0.0;
    for (std::size_t k = 1; k <= max_n; ++k) {
        if (clipped[k - 1] == 0 || totals[k - 1] == 0) {
            break;  // this order and every higher one stay 0
        }
        log_sum += std::log(clipped[k - 1] / totals[k - 1]);
        out[k - 1] = bp * std::exp(log_sum / static_cast<double>(k));
    }
    return out;
}

MeteorAlignment meteor_align(const Words& candidate, const Words& reference) {
    return ChunkSearch(candidate, reference).run();
}

double meteor_exact(const Words& candidate, const Words& reference) {
    const MeteorAlignment a = meteor_align(candidate, reference);
    if (a.matches == 0) {
        return 0.0;
    }
    const double m = static_cast<double>(a.matches);
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(reference.size());
    const double f_mean = 10 * p * r / (r + 9 * p);
    const bool whole = a.chunks == 1 && a.matches == candidate.size() && a.matches == reference.size();
    const double penalty = whole ? 0.0 : 0.5 * std::pow(static_cast<double>(a.chunks) / m, 3.0);
    return f_mean * (1.0 - penalty);
}

double percent(double x) {
    return std::round(x * 10000.0) / 100.0;
}

std::vector<double> score_values(const ScoreTable& t) {
    return {t.r1, t.r2, t.rl, t.b1, t.b2, t.b3, t.b4, t.meteor};
}

nlohmann::ordered_json ScoreTable::to_json() const {
    nlohmann::ordered_json j;
    const auto values = score_values(*this);
    for (std::size_t i = 0; i < values.size(); ++i) {
        j[score_names()[i]] = percent(values[i]);
    }
    j["corpus_size"] = corpus_size;
    return j;
}

std::string ScoreTable::to_text() const {
    std::string head, row;
    const auto values = score_values(*this);
    for (std::size_t i = 0; i < values.size(); ++i) {
        head += fmt::format("{:>8}", score_names()[i]);
        row += fmt::format("{:>8}", format_percent(values[i]));
    }
    return head + "\n" + row + "\n";
}

ScoreTable score_corpus(const std::vector<Words>& candidates, const std::vector<Words>& references) {
    if (candidates.size() != references.size()) {
        throw InputError(fmt::format("score_corpus: {} candidates for {} references", candidates.size(),
                                     references.size()));
    }
    if (candidates.empty()) {
        throw InputError("score_corpus: empty corpus");
    }
    ScoreTable t;
    t.corpus_size = candidates.size();
    std::vector<BleuInput> pairs;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const Words c = lowered(candidates[i]);
        const Words r = lowered(references[i]);
        t.r1 += rouge_n(c, r, 1).f1;
        t.r2 += rouge_n(c, r, 2).f1;
        t.rl += rouge_l(c, r).f1;
        t.meteor += meteor_exact(c, r);
        pairs.push_back({c, {r}});
    }
    const double n = static_cast<double>(candidates.size());
    t.r1 /= n;
    t.r2 /= n;
    t.rl /= n;
    t.meteor /= n;
    const auto b = bleu(pairs, 4);
    t.b1 = b[0];
    t.b2 = b[1];
    t.b3 = b[2];
    t.b4 = b[3];
    return t;
}

ClassReport classification_report(const std::vector<int>& gold, const std::vector<int>& predicted,
                                   const std::vector<std::string>& classes) {
    if (gold.size() != predicted.size()) {
        throw InputError(fmt::format("classification_report: {} gold labels, {} predictions", gold.size(),
                                     predicted.size()));
    }
    const std::size_t k = classes.size();
    ClassReport rep;
    rep.classes = classes;
    rep.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < gold.size(); ++i) {
        for (int label : {gold[i], predicted[i]}) {
            if (label < 0 || static_cast<std::size_t>(label) >= k) {
                throw InputError(fmt::format("classification_report: label {} outside {} classes", label, k));
            }
        }
        ++rep.confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(predicted[i])];
    }
    rep.precision.assign(k, 0);
    rep.recall.assign(k, 0);
    rep.f1.assign(k, 0);
    rep.support.assign(k, 0);
    std::size_t correct = 0;
    const double n = static_cast<double>(gold.size());
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t predicted_c = 0;
        for (std::size_t g = 0; g < k; ++g) {
            rep.support[c] += rep.confusion[c][g];
            predicted_c += rep.confusion[g][c];
        }
        const double tp = static_cast<double>(rep.confusion[c][c]);
        correct += rep.confusion[c][c];
        rep.precision[c] = ratio(tp, static_cast<double>(predicted_c));
        rep.recall[c] = ratio(tp, static_cast<double>(rep.support[c]));
        rep.f1[c] = ratio(2 * rep.precision[c] * rep.recall[c], rep.precision[c] + rep.recall[c]);
        const double w = ratio(static_cast<double>(rep.support[c]), n);
        rep.weighted_precision += w * rep.precision[c];
        rep.weighted_recall += w * rep.recall[c];
        rep.weighted_f1 += w * rep.f1[c];
    }
    rep.accuracy = ratio(static_cast<double>(correct), n);
    return rep;
}

nlohmann::ordered_json ClassReport::to_json() const {
    nlohmann::ordered_json j;
    j["accuracy"] = accuracy;
    j["weighted_precision"] = weighted_precision;
    j["weighted_recall"] = weighted_recall;
    j["weighted_f1"] = weighted_f1;
    auto& per = j["classes"];
    for (std::size_t c = 0; c < classes.size(); ++c) {
        per.push_back({{"class", classes[c]},
                       {"precision", precision[c]},
                       {"recall", recall[c]},
                       {"f1", f1[c]},
                       {"support", support[c]}});
    }
    j["confusion"] = confusion;
    return j;
}

std::string ClassReport::to_text() const {
    std::string out = fmt::format("{:<10}{:>8}{:>8}{:>8}{:>9}\n", "class", "P", "R", "F1", "support");
    for (std::size_t c = 0; c < classes.size(); ++c) {
        out += fmt::format("{:<10}{:>8.4f}{:>8.4f}{:>8.4f}{:>9}\n", classes[c], precision[c], recall[c], f1[c],
                           support[c]);
    }
    out += fmt::format("{:<10}{:>8.4f}{:>8.4f}{:>8.4f}\naccuracy  {:.4f}\n", "weighted", weighted_precision,
                       weighted_recall, weighted_f1, accuracy);
    return out;
}

}  // namespace moses
