// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "moses/data.hpp"
#include "moses/errors.hpp"

using namespace moses;

namespace {

CorpusSpec small_spec(std::uint64_t seed = 7) {
    CorpusSpec spec;
    spec.counts = {40, 6, 6};
    spec.audio_dim = 6;
    spec.video_dim = 5;
    spec.audio_frames = 3;
    spec.video_frames = 2;
    spec.seed = seed;
    return spec;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("moses_test_data_" + name);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("phonetic keys") {
    CHECK(phonetic_key("main") == phonetic_key("mein"));
    CHECK(phonetic_key("a") == "a");
    CHECK(collapse_key("bazaar") == "bzr");
    CHECK(phonetic_key("bazaar") == "bzr");
    CHECK(phonetic_key("MAIN") == phonetic_key("main"));
    CHECK(phonetic_key("party") == phonetic_key("parti"));
    CHECK(phonetic_key("bahut") == phonetic_key("bohot"));
    CHECK(collapse_key("") == "");
    for (const char* w : {"party", "parti", "bazaar", "accha", "indravadan", "bob", "aab", "zzz", "Hello", "loves"}) {
        CAPTURE(w);
        const std::string k = phonetic_key(w);
        CHECK(phonetic_key(k) == k);
    }
    CHECK_THROWS_AS(VariantTable({{"ab", "x"}, {"cd", "x"}}), SpecError);
}

TEST_CASE("truth table follows the party example") {
    // neutral tone + disgusted face on "this party is so fun" reads as sarcastic,
    // low tone + dancing does not.
    CHECK(truth_table(Polarity::Positive, Tone::Neutral, Face::Disgust).sarcasm == 1);
    CHECK(truth_table(Polarity::Positive, Tone::Low, Face::Dancing).sarcasm == 0);
    std::size_t sarcastic = 0;
    for (Polarity p : {Polarity::Positive, Polarity::Negative}) {
        for (Tone t : {Tone::Neutral, Tone::Low, Tone::High}) {
            for (Face f : {Face::Disgust, Face::Dancing, Face::Smile}) {
                const Verdict v = truth_table(p, t, f);
                sarcastic += static_cast<std::size_t>(v.sarcasm);
                CHECK(v.loves == ((p == Polarity::Positive) != (v.sarcasm == 1)));
            }
        }
    }
    CHECK(sarcastic == 5);
}

TEST_CASE("generate_corpus is deterministic and follows the truth table") {
    const auto spec = small_spec();
    std::vector<CorpusDetails> cells;
    const auto a = generate_corpus(spec, &cells);
    const auto b = generate_corpus(spec);
    REQUIRE(a.size() == 52);
    REQUIRE(cells.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(same_instance(a[i], b[i]));
        const Verdict v = truth_table(cells[i].polarity, cells[i].tone, cells[i].face);
        CHECK(a[i].sarcasm == v.sarcasm);
        CHECK(a[i].humour == v.humour);
        CHECK(a[i].emotion == v.emotion);
        CHECK(a[i].explanation.size() == 5);
        CHECK(a[i].explanation[0] == a[i].target.speaker);
        CHECK(a[i].explanation[1] == (v.loves ? "loves" : "hates"));
        CHECK(a[i].explanation[3] == tone_word(cells[i].tone));
        CHECK(a[i].explanation[4] == face_word(cells[i].face));
        CHECK(a[i].audio.shape() == Shape{3, 6});
        CHECK(a[i].video.shape() == Shape{2, 5});
        CHECK(a[i].context.size() >= 2);
        CHECK(a[i].context.size() <= 3);
        std::set<std::string> seen = {a[i].target.speaker};
        for (const auto& turn : a[i].context) {
            CHECK(seen.insert(turn.speaker).second);
        }
    }
    CHECK(a[0].split == Split::Train);
    CHECK(a[45].split == Split::Val);
    CHECK(a[51].split == Split::Test);

    const auto other = generate_corpus(small_spec(8));
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        differs = differs || !same_instance(a[i], other[i]);
    }
    CHECK(differs);
}

TEST_CASE("same text under different cues gets different verdicts") {
    auto spec = small_spec();
    spec.counts = {400, 1, 1};
    std::vector<CorpusDetails> cells;
    const auto corpus = generate_corpus(spec, &cells);
    bool found = false;
    for (std::size_t i = 0; i < corpus.size() && !found; ++i) {
        for (std::size_t j = i + 1; j < corpus.size() && !found; ++j) {
            if (corpus[i].target.tokens == corpus[j].target.tokens && cells[i].tone != cells[j].tone &&
                corpus[i].sarcasm != corpus[j].sarcasm) {
                found = true;
            }
        }
    }
    CHECK(found);
}

TEST_CASE("label marginals match the truth table at 2000 instances") {
    CorpusSpec spec;
    spec.counts = {1800, 100, 100};
    spec.audio_dim = 2;
    spec.video_dim = 2;
    spec.audio_frames = 1;
    spec.video_frames = 1;
    const auto corpus = generate_corpus(spec);
    double sarcasm = 0, humour = 0;
    std::array<double, 4> emotions{};
    for (const auto& inst : corpus) {
        sarcasm += inst.sarcasm;
        humour += inst.humour;
        emotions[static_cast<std::size_t>(inst.emotion)] += 1;
    }
    // Oracle: enumerate the 18 equiprobable cells.
    double want_s = 0, want_h = 0;
    std::array<double, 4> want_e{};
    for (Polarity p : {Polarity::Positive, Polarity::Negative}) {
        for (Tone t : {Tone::Neutral, Tone::Low, Tone::High}) {
            for (Face f : {Face::Disgust, Face::Dancing, Face::Smile}) {
                const Verdict v = truth_table(p, t, f);
                want_s += v.sarcasm / 18.0;
                want_h += v.humour / 18.0;
                want_e[static_cast<std::size_t>(v.emotion)] += 1.0 / 18.0;
            }
        }
    }
    const double n = static_cast<double>(corpus.size());
    CHECK(std::abs(sarcasm / n - want_s) < 0.03);
    CHECK(std::abs(humour / n - want_h) < 0.03);
    for (std::size_t e = 0; e < 4; ++e) {
        CHECK(std::abs(emotions[e] / n - want_e[e]) < 0.03);
    }
}

TEST_CASE("feature noise stays within three standard deviations") {
    auto spec = small_spec();
    spec.counts = {200, 1, 1};
    spec.audio_dim = 20;
    spec.noise = 0.25;
    std::vector<CorpusDetails> cells;
    const auto corpus = generate_corpus(spec, &cells);
    std::size_t inside = 0, total = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Tensor proto = tone_prototype(spec, cells[i].tone);
        CHECK(corpus[i].audio.all_finite());
        for (std::size_t k = 0; k < proto.size(); ++k) {
            inside += std::abs(corpus[i].audio[k] - proto[k]) <= 3 * spec.noise ? 1 : 0;
            ++total;
        }
    }
    CHECK(static_cast<double>(inside) / static_cast<double>(total) >= 0.995);
}

TEST_CASE("sarcastic-only corpora and spec validation") {
    auto spec = small_spec();
    spec.sarcastic_only = true;
    for (const auto& inst : generate_corpus(spec)) {
        CHECK(inst.sarcasm == 1);
        CHECK_FALSE(inst.explanation.empty());
    }
    auto bad = small_spec();
    bad.max_vocab = 10;
    CHECK_THROWS_AS(generate_corpus(bad), SpecError);
    bad = small_spec();
    bad.counts[1] = 0;
    CHECK_THROWS_AS(bad.validate(), SpecError);
    bad = small_spec();
    bad.noise = -1;
    CHECK_THROWS_AS(bad.validate(), SpecError);
    bad = small_spec();
    bad.context_max = 5;
    CHECK_THROWS_AS(bad.validate(), SpecError);
}

TEST_CASE("vocabulary") {
    const auto corpus = generate_corpus(small_spec());
    const Vocabulary v = build_vocab(corpus);
    CHECK(v.id("<pad>") == 0);
    CHECK(v.token(Vocabulary::kEnd) == "</s>");
    std::set<std::string> unique;
    for (const auto& inst : corpus) {
        for (const auto& t : inst.context) {
            unique.insert(t.speaker);
            unique.insert(t.tokens.begin(), t.tokens.end());
        }
        unique.insert(inst.target.speaker);
        unique.insert(inst.target.tokens.begin(), inst.target.tokens.end());
        unique.insert(inst.explanation.begin(), inst.explanation.end());
    }
    CHECK(v.size() == unique.size() + 5);
    CHECK(build_vocab(corpus).tokens() == v.tokens());
    for (std::size_t i = 6; i < v.size(); ++i) {
        CHECK(v.tokens()[i - 1] < v.tokens()[i]);
    }
    CHECK(v.id("never-seen") == Vocabulary::kUnk);
    CHECK_THROWS_AS(v.token(static_cast<int>(v.size())), VocabularyError);
    CHECK(v.decode({v.id("maya"), Vocabulary::kEnd, v.id("sahil")}) == std::vector<std::string>{"maya"});
    CHECK_THROWS_AS(Vocabulary::from_tokens({"a", "b"}), VocabularyError);

    const PhoneticIndex index = PhoneticIndex::build(v);
    CHECK(index.key_of_token.size() == v.size());
    CHECK(index.key_of_token[0] == 0);
    if (v.contains("party") && v.contains("parti")) {
        CHECK(index.key_of_token[static_cast<std::size_t>(v.id("party"))] ==
              index.key_of_token[static_cast<std::size_t>(v.id("parti"))]);
    }
    CHECK(index.key_count() < v.size());
}

TEST_CASE("jsonl round trip is exact") {
    auto spec = small_spec();
    spec.audio_dim = 154;
    spec.counts = {5, 2, 2};
    const auto corpus = generate_corpus(spec);
    const auto path = temp_path("roundtrip.jsonl");
    write_jsonl(corpus, path);
    const auto back = load_jsonl(path);
    REQUIRE(back.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(same_instance(corpus[i], back[i]));
        CHECK(back[i].audio.cols() == 154);
    }
    write_jsonl(back, temp_path("roundtrip2.jsonl"));
    CHECK(slurp(path) == slurp(temp_path("roundtrip2.jsonl")));

    MultimodalInstance odd;
    odd.target = {"sa\"hil", {"back\\slash", "ünï"}};
    odd.audio = Tensor::matrix(1, 3, {1e-300, -0.1, 3.141592653589793});
    odd.video = Tensor::matrix(1, 1, {5e-324});
    const auto line = to_json_line(odd);
    CHECK(same_instance(from_json_line(line, 1), odd));
}

TEST_CASE("jsonl errors name the line and field") {
    const auto corpus = generate_corpus(small_spec());
    std::string good = to_json_line(corpus[0]);
    std::string broken = good;
    const auto pos = broken.find("\"target\":");
    broken.replace(pos, 9, "\"targte\":");
    const auto path = temp_path("broken.jsonl");
    {
        std::ofstream out(path);
        out << good << "\n" << broken << "\n";
    }
    try {
        load_jsonl(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(e.field() == "target");
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(from_json_line("{not json", 3), ParseError);
    std::string bad_emotion = good;
    bad_emotion.replace(bad_emotion.find(std::string(emotion_name(corpus[0].emotion))),
                        emotion_name(corpus[0].emotion).size(), "bliss");
    try {
        from_json_line(bad_emotion, 9);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.field() == "emotion");
    }
    CHECK_THROWS_AS(load_jsonl(temp_path("does-not-exist.jsonl")), InputError);
}

TEST_CASE("detection splits") {
    auto spec = small_spec();
    spec.sarcastic_only = true;
    spec.counts = {160, 20, 20};
    auto corpus = generate_corpus(spec);
    corpus[3].context.clear();
    DetectionOptions options;
    options.seed = 5;
    const DetectionCorpus det = build_detection_splits(corpus, options);
    CHECK(det.skipped == 1);
    CHECK(det.positives == 199);
    CHECK(det.negatives == 199);
    std::size_t train = 0, val = 0, test = 0;
    for (const auto& inst : det.instances) {
        if (inst.sarcasm == 0) {
            CHECK(inst.explanation.empty());
            // Same dialogue with the sampled turn moved to the target slot.
            bool from_source = false;
            for (const auto& src : corpus) {
                if (src.context.empty() || !(src.target.tokens == inst.context.back().tokens) ||
                    src.context.size() != inst.context.size() || !src.audio.same_values(inst.audio)) {
                    continue;
                }
                for (std::size_t t = 0; t < src.context.size(); ++t) {
                    auto rest = src.context;
                    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(t));
                    rest.push_back(src.target);
                    from_source = from_source || (src.context[t].speaker == inst.target.speaker &&
                                                  src.context[t].tokens == inst.target.tokens &&
                                                  std::equal(rest.begin(), rest.end(), inst.context.begin(),
                                                             [](const Utterance& x, const Utterance& y) {
                                                                 return x.speaker == y.speaker && x.tokens == y.tokens;
                                                             }));
                }
            }
            CHECK(from_source);
        } else {
            bool matches_source = false;
            for (const auto& src : corpus) {
                matches_source = matches_source || same_instance({src.context, src.target, src.audio, src.video,
                                                                   src.explanation, src.sarcasm, src.humour,
                                                                   src.emotion, inst.split},
                                                                  inst);
            }
            CHECK(matches_source);
        }
        train += inst.split == Split::Train;
        val += inst.split == Split::Val;
        test += inst.split == Split::Test;
    }
    CHECK(train == 318);
    CHECK(val == 40);
    CHECK(test == 40);

    options.negative_ratio = 0.5;
    const auto half = build_detection_splits(corpus, options);
    CHECK(half.negatives == 100);  // round(0.5 * 199)
    CHECK(build_detection_splits(corpus, options).instances.size() == half.instances.size());
    const auto again = build_detection_splits(corpus, options);
    for (std::size_t i = 0; i < half.instances.size(); ++i) {
        CHECK(same_instance(half.instances[i], again.instances[i]));
    }
}

TEST_CASE("validate_stats against reference tables") {
    const ExpectedCounts swits = expected_counts_preset("swits");
    std::vector<MultimodalInstance> corpus;
    const auto add = [&](Split split, int sarcasm, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            MultimodalInstance inst;
            inst.target = {"maya", {"x"}};
            inst.sarcasm = sarcasm;
            inst.split = split;
            corpus.push_back(inst);
        }
    };
    add(Split::Train, 1, 1792);
    add(Split::Train, 0, 1669);
    add(Split::Val, 1, 224);
    add(Split::Val, 0, 213);
    add(Split::Test, 1, 224);
    add(Split::Test, 0, 218);
    CHECK(validate_stats(corpus, swits).passed());

    add(Split::Val, 0, 1);
    const auto off = validate_stats(corpus, swits);
    REQUIRE(off.deltas.size() == 1);
    CHECK(off.deltas[0].split == "val");
    CHECK(off.deltas[0].label == "NS");
    CHECK(off.deltas[0].delta() == 1);

    std::vector<MultimodalInstance> wits(corpus.begin(), corpus.begin() + 1792);
    add(Split::Val, 1, 0);
    CHECK_FALSE(validate_stats(wits, expected_counts_preset("wits")).passed());
    CHECK_THROWS_AS(expected_counts_preset("nope"), ConfigError);
    CHECK(expected_counts_preset("ewits").counts.at("train").at("neutral") == 1590);
    CHECK(expected_counts_preset("hwits").counts.at("test").at("H") == 106);
}
