// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "moses/errors.hpp"

namespace moses {

namespace {

using Group = std::vector<std::string>;

// Canonical spelling first, romanized variants after it.
const std::vector<Group>& topic_groups() {
    static const std::vector<Group> groups = {
        {"party", "parti"}, {"khana", "khaana"}, {"gaana", "gana"}, {"shaadi", "shadi"}, {"movie", "muvie"},
    };
    return groups;
}

const std::vector<Group>& positive_groups() {
    static const std::vector<Group> groups = {{"mazedaar", "mazedar"}, {"accha", "acha"}, {"badhiya", "badiya"}, {"fun"}};
    return groups;
}

const std::vector<Group>& negative_groups() {
    static const std::vector<Group> groups = {{"bekaar", "bekar"}, {"bura", "buraa"}, {"boring"}, {"ganda", "gandaa"}};
    return groups;
}

const std::vector<Group>& intensifier_groups() {
    static const std::vector<Group> groups = {{"bahut", "bohot"}, {"so"}, {"kitna", "kitnaa"}};
    return groups;
}

const std::vector<Group>& filler_groups() {
    static const std::vector<Group> groups = {{"yeh", "ye"}, {"main", "mein"}, {"hai", "hay"}, {"toh", "to"}};
    return groups;
}

const std::vector<std::string>& speakers() {
    static const std::vector<std::string> names = {"maya", "monisha", "sahil", "rosesh", "indravadan"};
    return names;
}

// Slots: T topic, I intensifier, A adjective; anything else is a literal word,
// looked up in the filler groups for variants.
const std::vector<std::vector<std::string>>& templates() {
    static const std::vector<std::vector<std::string>> forms = {
        {"yeh", "T", "I", "A", "hai"},
        {"wow", "T", "I", "A"},
        {"main", "bolun", "toh", "T", "I", "A", "hai"},
        {"this", "T", "is", "I", "A"},
    };
    return forms;
}

const Group* filler_group(const std::string& word) {
    for (const auto& g : filler_groups()) {
        if (g.front() == word) {
            return &g;
        }
    }
    return nullptr;
}

bool is_vowel(char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string format_real(double x) {
    return fmt::format("{:.17g}", x);
}

void append_matrix(std::string& out, const Tensor& t) {
    out += '[';
    for (std::size_t r = 0; r < t.rows(); ++r) {
        out += r == 0 ? "[" : ",[";
        for (std::size_t c = 0; c < t.cols(); ++c) {
            if (c > 0) {
                out += ',';
            }
            out += format_real(t(r, c));
        }
        out += ']';
    }
    out += ']';
}

std::string quoted(const std::string& s) {
    return nlohmann::json(s).dump();
}

std::size_t synthetic_lexicon_size() {
    std::set<std::string> words(speakers().begin(), speakers().end());
    for (const auto* family : {&topic_groups(), &positive_groups(), &negative_groups(), &intensifier_groups(),
                               &filler_groups()}) {
        for (const auto& g : *family) {
            words.insert(g.begin(), g.end());
        }
    }
    for (const auto& form : templates()) {
        for (const auto& w : form) {
            if (w != "T" && w != "I" && w != "A") {
                words.insert(w);
            }
        }
    }
    for (const char* w : {"loves", "hates"}) {
        words.insert(w);
    }
    for (Tone t : {Tone::Neutral, Tone::Low, Tone::High}) {
        words.insert(std::string(tone_word(t)));
    }
    for (Face f : {Face::Disgust, Face::Dancing, Face::Smile}) {
        words.insert(std::string(face_word(f)));
    }
    return words.size();
}

Tensor prototype(const CorpusSpec& spec, std::uint64_t stream, std::size_t frames, std::size_t dim) {
    Rng rng = Rng(spec.prototype_seed).split(stream);
    Tensor t({frames, dim});
    for (double& v : t.values()) {
        v = rng.normal();
    }
    return t;
}

Tensor noisy(const Tensor& proto, double noise, Rng& rng) {
    Tensor t = proto;
    for (double& v : t.values()) {
        v += noise * rng.normal();
    }
    return t;
}

std::string realize(const Group& g, double p, Rng& rng) {
    if (g.size() > 1 && rng.bernoulli(p)) {
        return g[1 + rng.below(g.size() - 1)];
    }
    return g.front();
}

std::vector<std::string> make_utterance(Polarity polarity, std::size_t topic, double p, Rng& rng) {
    const auto& form = templates()[rng.below(templates().size())];
    const auto& adjectives = polarity == Polarity::Positive ? positive_groups() : negative_groups();
    const Group& adjective = adjectives[rng.below(adjectives.size())];
    const Group& intensifier = intensifier_groups()[rng.below(intensifier_groups().size())];
    std::vector<std::string> words;
    for (const auto& slot : form) {
        if (slot == "T") {
            words.push_back(realize(topic_groups()[topic], p, rng));
        } else if (slot == "I") {
            words.push_back(realize(intensifier, p, rng));
        } else if (slot == "A") {
            words.push_back(realize(adjective, p, rng));
        } else if (const Group* g = filler_group(slot)) {
            words.push_back(realize(*g, p, rng));
        } else {
            words.push_back(slot);
        }
    }
    return words;
}

const nlohmann::json& field(const nlohmann::json& obj, const char* name, std::size_t line) {
    const auto it = obj.find(name);
    if (it == obj.end()) {
        throw ParseError(line, name, "missing");
    }
    return *it;
}

std::string string_field(const nlohmann::json& obj, const char* name, std::size_t line) {
    const auto& v = field(obj, name, line);
    if (!v.is_string()) {
        throw ParseError(line, name, "expected a string");
    }
    return v.get<std::string>();
}

int binary_field(const nlohmann::json& obj, const char* name, std::size_t line) {
    const auto& v = field(obj, name, line);
    if (!v.is_number_integer() || (v.get<long long>() != 0 && v.get<long long>() != 1)) {
        throw ParseError(line, name, "expected 0 or 1");
    }
    return static_cast<int>(v.get<long long>());
}

std::vector<std::string> string_list(const nlohmann::json& obj, const char* name, std::size_t line) {
    const auto& v = field(obj, name, line);
    if (!v.is_array()) {
        throw ParseError(line, name, "expected an array of strings");
    }
    std::vector<std::string> out;
    for (const auto& item : v) {
        if (!item.is_string()) {
            throw ParseError(line, name, "expected an array of strings");
        }
        out.push_back(item.get<std::string>());
    }
    return out;
}

Tensor matrix_field(const nlohmann::json& obj, const char* name, std::size_t line) {
    const auto& v = field(obj, name, line);
    if (!v.is_array() || v.empty()) {
        throw ParseError(line, name, "expected a nonempty array of rows");
    }
    std::size_t cols = 0;
    std::vector<double> values;
    for (const auto& row : v) {
        if (!row.is_array() || row.empty()) {
            throw ParseError(line, name, "expected nonempty numeric rows");
        }
        if (cols == 0) {
            cols = row.size();
        } else if (row.size() != cols) {
            throw ParseError(line, name, "ragged rows");
        }
        for (const auto& x : row) {
            if (!x.is_number()) {
                throw ParseError(line, name, "non-numeric entry");
            }
            values.push_back(x.get<double>());
        }
    }
    return Tensor({v.size(), cols}, std::move(values));
}

}  // namespace

// ---- names -----------------------------------------------------------------------

std::string_view emotion_name(Emotion e) {
    switch (e) {
        case Emotion::Neutral: return "neutral";
        case Emotion::Sadness: return "sadness";
        case Emotion::Joy: return "joy";
        case Emotion::Anger: return "anger";
    }
    return "?";
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Emotion parse_emotion(std::string_view name) {
    for (Emotion e : kEmotions) {
        if (emotion_name(e) == name) {
            return e;
        }
    }
    throw InputError("unknown emotion '" + std::string(name) + "'");
}

Split parse_split(std::string_view name) {
    for (Split s : kSplits) {
        if (split_name(s) == name) {
            return s;
        }
    }
    throw InputError("unknown split '" + std::string(name) + "'");
}

bool same_instance(const MultimodalInstance& a, const MultimodalInstance& b) {
    return a.context == b.context && a.target == b.target && a.audio.same_values(b.audio) &&
           a.video.same_values(b.video) && a.explanation == b.explanation && a.sarcasm == b.sarcasm &&
           a.humour == b.humour && a.emotion == b.emotion && a.split == b.split;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) {
        out.push_back(w);
    }
    return out;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += words[i];
    }
    return out;
}

// ---- phonetic keys ---------------------------------------------------------------

std::string collapse_key(std::string_view token) {
    const std::string lower = lowercase(token);
    std::string out;
    for (std::size_t i = 0; i < lower.size(); ++i) {
        const char c = lower[i];
        if (i > 0 && is_vowel(c)) {
            continue;
        }
        if (!out.empty() && out.back() == c) {
            continue;
        }
        out += c;
    }
    return out;
}

VariantTable::VariantTable(const std::vector<std::vector<std::string>>& groups) {
    for (const auto& g : groups) {
        if (g.empty()) {
            continue;
        }
        const std::string key = collapse_key(g.front());
        for (const auto& spelling : g) {
            const auto [it, inserted] = keys_.emplace(lowercase(spelling), key);
            if (!inserted && it->second != key) {
                throw SpecError("variant table: '" + spelling + "' mapped to two keys");
            }
        }
    }
}

const VariantTable& VariantTable::builtin() {
    static const VariantTable table = [] {
        std::vector<std::vector<std::string>> groups;
        for (const auto* family : {&topic_groups(), &positive_groups(), &negative_groups(), &intensifier_groups(),
                                   &filler_groups()}) {
            for (const auto& g : *family) {
                if (g.size() > 1) {
                    groups.push_back(g);
                }
            }
        }
        return VariantTable(groups);
    }();
    return table;
}

const std::string* VariantTable::find(std::string_view surface) const {
    const auto it = keys_.find(std::string(surface));
    return it == keys_.end() ? nullptr : &it->second;
}

std::string phonetic_key(std::string_view token, const VariantTable& table) {
    const std::string lower = lowercase(token);
    if (const std::string* key = table.find(lower)) {
        return *key;
    }
    return collapse_key(lower);
}

// ---- vocabulary ------------------------------------------------------------------

const std::array<std::string, Vocabulary::kReserved>& Vocabulary::reserved_tokens() {
    static const std::array<std::string, kReserved> tokens = {"<pad>", "<s>", "</s>", "<sep>", "<unk>"};
    return tokens;
}

Vocabulary::Vocabulary() {
    for (const auto& t : reserved_tokens()) {
        ids_.emplace(t, static_cast<int>(tokens_.size()));
        tokens_.push_back(t);
    }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kReserved || !std::equal(reserved_tokens().begin(), reserved_tokens().end(), tokens.begin())) {
        throw VocabularyError("vocabulary must start with the reserved tokens");
    }
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.ids_.clear();
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (!v.ids_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
            throw VocabularyError("duplicate vocabulary token '" + v.tokens_[i] + "'");
        }
    }
    return v;
}

bool Vocabulary::contains(std::string_view token) const {
    return ids_.contains(std::string(token));
}

int Vocabulary::id(std::string_view token) const {
    const auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
    std::vector<int> out;
    out.reserve(words.size());
    for (const auto& w : words) {
        out.push_back(id(w));
    }
    return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int id : ids) {
        if (id == kEnd) {
            break;
        }
        if (id == kPad || id == kStart) {
            continue;
        }
        out.push_back(token(id));
    }
    return out;
}

Vocabulary build_vocab(const std::vector<MultimodalInstance>& corpus) {
    std::set<std::string> words;
    const auto add_turn = [&](const Utterance& u) {
        words.insert(u.speaker);
        words.insert(u.tokens.begin(), u.tokens.end());
    };
    for (const auto& inst : corpus) {
        for (const auto& u : inst.context) {
            add_turn(u);
        }
        add_turn(inst.target);
        words.insert(inst.explanation.begin(), inst.explanation.end());
    }
    std::vector<std::string> tokens(Vocabulary::reserved_tokens().begin(), Vocabulary::reserved_tokens().end());
    for (const auto& w : words) {
        if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) {
            tokens.push_back(w);
        }
    }
    return Vocabulary::from_tokens(std::move(tokens));
}

PhoneticIndex PhoneticIndex::build(const Vocabulary& vocab, const VariantTable& table) {
    PhoneticIndex index;
    std::set<std::string> distinct;
    for (std::size_t i = Vocabulary::kReserved; i < vocab.size(); ++i) {
        distinct.insert(phonetic_key(vocab.tokens()[i], table));
    }
    index.keys.assign(Vocabulary::reserved_tokens().begin(), Vocabulary::reserved_tokens().end());
    for (const auto& k : distinct) {
        index.keys.push_back(k);
    }
    std::unordered_map<std::string, int> ids;
    for (std::size_t i = Vocabulary::kReserved; i < index.keys.size(); ++i) {
        ids.emplace(index.keys[i], static_cast<int>(i));
    }
    index.key_of_token.resize(vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        index.key_of_token[i] =
            i < Vocabulary::kReserved ? static_cast<int>(i) : ids.at(phonetic_key(vocab.tokens()[i], table));
    }
    return index;
}

std::vector<std::string> dialogue_words(const MultimodalInstance& instance) {
    std::vector<std::string> words;
    for (const auto& u : instance.context) {
        words.push_back(u.speaker);
        words.insert(words.end(), u.tokens.begin(), u.tokens.end());
    }
    words.push_back(Vocabulary::reserved_tokens()[Vocabulary::kSep]);
    words.push_back(instance.target.speaker);
    words.insert(words.end(), instance.target.tokens.begin(), instance.target.tokens.end());
    return words;
}

// ---- synthetic corpus ------------------------------------------------------------

std::string_view tone_word(Tone t) {
    switch (t) {
        case Tone::Neutral: return "flatly";
        case Tone::Low: return "softly";
        case Tone::High: return "loudly";
    }
    return "?";
}

std::string_view face_word(Face f) {
    switch (f) {
        case Face::Disgust: return "grimacing";
        case Face::Dancing: return "dancing";
        case Face::Smile: return "smiling";
    }
    return "?";
}

Verdict truth_table(Polarity polarity, Tone tone, Face face) {
    Verdict v;
    const bool positive = polarity == Polarity::Positive;
    if (positive) {
        v.sarcasm = (tone != Tone::High && face != Face::Dancing) ? 1 : 0;
    } else {
        v.sarcasm = (tone == Tone::High && face == Face::Smile) ? 1 : 0;
    }
    v.loves = positive != (v.sarcasm == 1);
    v.humour = (v.sarcasm == 1 && face == Face::Smile) || (v.sarcasm == 0 && face == Face::Dancing) ? 1 : 0;
    if (v.loves) {
        v.emotion = tone == Tone::High ? Emotion::Joy : Emotion::Neutral;
    } else {
        v.emotion = tone == Tone::Low ? Emotion::Sadness : Emotion::Anger;
    }
    return v;
}

void CorpusSpec::validate() const {
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0) {
            throw SpecError(fmt::format("corpus spec: {} count must be positive", split_name(kSplits[i])));
        }
    }
    if (audio_dim == 0 || video_dim == 0 || audio_frames == 0 || video_frames == 0) {
        throw SpecError("corpus spec: feature dims and frame counts must be positive");
    }
    if (!std::isfinite(noise) || noise < 0.0) {
        throw SpecError("corpus spec: noise must be finite and non-negative");
    }
    if (!(variant_probability >= 0.0 && variant_probability <= 1.0)) {
        throw SpecError("corpus spec: variant probability must lie in [0, 1]");
    }
    if (context_min > context_max) {
        throw SpecError("corpus spec: context_min exceeds context_max");
    }
    if (context_max >= speakers().size()) {
        throw SpecError(fmt::format("corpus spec: at most {} context turns (one per other speaker)", speakers().size() - 1));
    }
    const std::size_t needed = synthetic_lexicon_size() + Vocabulary::kReserved;
    if (needed > max_vocab) {
        throw SpecError(fmt::format("corpus spec: generator needs {} vocabulary entries, cap is {}", needed, max_vocab));
    }
}

Tensor tone_prototype(const CorpusSpec& spec, Tone tone) {
    return prototype(spec, static_cast<std::uint64_t>(tone), spec.audio_frames, spec.audio_dim);
}

Tensor face_prototype(const CorpusSpec& spec, Face face) {
    return prototype(spec, 16 + static_cast<std::uint64_t>(face), spec.video_frames, spec.video_dim);
}

std::vector<MultimodalInstance> generate_corpus(const CorpusSpec& spec, std::vector<CorpusDetails>* details) {
    spec.validate();
    std::array<Tensor, kTones> tones;
    std::array<Tensor, kFaces> faces;
    for (std::size_t i = 0; i < kTones; ++i) {
        tones[i] = tone_prototype(spec, static_cast<Tone>(i));
    }
    for (std::size_t i = 0; i < kFaces; ++i) {
        faces[i] = face_prototype(spec, static_cast<Face>(i));
    }
    std::vector<CorpusDetails> cells;
    for (Polarity p : {Polarity::Positive, Polarity::Negative}) {
        for (std::size_t t = 0; t < kTones; ++t) {
            for (std::size_t f = 0; f < kFaces; ++f) {
                const CorpusDetails cell{p, static_cast<Tone>(t), static_cast<Face>(f)};
                if (!spec.sarcastic_only || truth_table(p, cell.tone, cell.face).sarcasm == 1) {
                    cells.push_back(cell);
                }
            }
        }
    }

    const Rng root(spec.seed);
    std::vector<MultimodalInstance> corpus;
    std::size_t index = 0;
    for (std::size_t s = 0; s < kSplits.size(); ++s) {
        for (std::size_t k = 0; k < spec.counts[s]; ++k, ++index) {
            Rng rng = root.split(index);
            const CorpusDetails cell = cells[rng.below(cells.size())];
            const Verdict verdict = truth_table(cell.polarity, cell.tone, cell.face);
            const std::size_t topic = rng.below(topic_groups().size());
            const std::size_t speaker = rng.below(speakers().size());

            MultimodalInstance inst;
            inst.split = kSplits[s];
            inst.sarcasm = verdict.sarcasm;
            inst.humour = verdict.humour;
            inst.emotion = verdict.emotion;

            const std::size_t turns = spec.context_min + rng.below(spec.context_max - spec.context_min + 1);
            std::vector<std::size_t> others;
            for (std::size_t o = 0; o < speakers().size(); ++o) {
                if (o != speaker) {
                    others.push_back(o);
                }
            }
            shuffle_in_place(others, rng);
            for (std::size_t t = 0; t < turns; ++t) {
                const std::size_t other = others[t];
                const Polarity p = rng.bernoulli(0.5) ? Polarity::Positive : Polarity::Negative;
                inst.context.push_back({speakers()[other], make_utterance(p, topic, spec.variant_probability, rng)});
            }
            inst.target = {speakers()[speaker], make_utterance(cell.polarity, topic, spec.variant_probability, rng)};
            inst.audio = noisy(tones[static_cast<std::size_t>(cell.tone)], spec.noise, rng);
            inst.video = noisy(faces[static_cast<std::size_t>(cell.face)], spec.noise, rng);
            inst.explanation = {speakers()[speaker], verdict.loves ? "loves" : "hates", topic_groups()[topic].front(),
                                std::string(tone_word(cell.tone)), std::string(face_word(cell.face))};
            corpus.push_back(std::move(inst));
            if (details) {
                details->push_back(cell);
            }
        }
    }
    return corpus;
}

// ---- JSONL -----------------------------------------------------------------------

std::string to_json_line(const MultimodalInstance& inst) {
    std::string out = "{\"speakers\":[";
    for (std::size_t i = 0; i < inst.context.size(); ++i) {
        out += (i > 0 ? "," : "") + quoted(inst.context[i].speaker);
    }
    out += "],\"utterances\":[";
    for (std::size_t i = 0; i < inst.context.size(); ++i) {
        out += (i > 0 ? "," : "") + quoted(join_words(inst.context[i].tokens));
    }
    out += "],\"target_speaker\":" + quoted(inst.target.speaker);
    out += ",\"target\":" + quoted(join_words(inst.target.tokens));
    out += ",\"audio\":";
    append_matrix(out, inst.audio);
    out += ",\"video\":";
    append_matrix(out, inst.video);
    out += ",\"explanation\":" + quoted(join_words(inst.explanation));
    out += fmt::format(",\"sarcasm\":{},\"humour\":{},\"emotion\":\"{}\",\"split\":\"{}\"}}", inst.sarcasm,
                       inst.humour, emotion_name(inst.emotion), split_name(inst.split));
    return out;
}

MultimodalInstance from_json_line(std::string_view line, std::size_t line_number) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(line_number, "<line>", std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) {
        throw ParseError(line_number, "<line>", "expected a JSON object");
    }
    MultimodalInstance inst;
    const auto speakers_list = string_list(obj, "speakers", line_number);
    const auto utterances = string_list(obj, "utterances", line_number);
    if (speakers_list.size() != utterances.size()) {
        throw ParseError(line_number, "utterances", "length differs from speakers");
    }
    for (std::size_t i = 0; i < utterances.size(); ++i) {
        inst.context.push_back({speakers_list[i], split_words(utterances[i])});
    }
    inst.target.speaker = string_field(obj, "target_speaker", line_number);
    inst.target.tokens = split_words(string_field(obj, "target", line_number));
    if (inst.target.tokens.empty()) {
        throw ParseError(line_number, "target", "empty target utterance");
    }
    inst.audio = matrix_field(obj, "audio", line_number);
    inst.video = matrix_field(obj, "video", line_number);
    inst.explanation = split_words(string_field(obj, "explanation", line_number));
    inst.sarcasm = binary_field(obj, "sarcasm", line_number);
    inst.humour = binary_field(obj, "humour", line_number);
    try {
        inst.emotion = parse_emotion(string_field(obj, "emotion", line_number));
    } catch (const InputError& e) {
        throw ParseError(line_number, "emotion", e.what());
    }
    try {
        inst.split = parse_split(string_field(obj, "split", line_number));
    } catch (const InputError& e) {
        throw ParseError(line_number, "split", e.what());
    }
    return inst;
}

void write_jsonl(const std::vector<MultimodalInstance>& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InputError("cannot open '" + path.string() + "' for writing");
    }
    for (const auto& inst : corpus) {
        out << to_json_line(inst) << '\n';
    }
    out.flush();
    if (!out) {
        throw InputError("write to '" + path.string() + "' failed");
    }
}

std::vector<MultimodalInstance> load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "'");
    }
    std::vector<MultimodalInstance> corpus;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        corpus.push_back(from_json_line(line, number));
    }
    return corpus;
}

// ---- detection splits ------------------------------------------------------------

DetectionCorpus build_detection_splits(const std::vector<MultimodalInstance>& corpus,
                                       const DetectionOptions& options) {
    if (!(options.negative_ratio >= 0.0) || !(options.train_fraction >= 0.0) || !(options.val_fraction >= 0.0) ||
        options.train_fraction + options.val_fraction > 1.0) {
        throw ConfigError("detection splits: invalid ratio or split fractions");
    }
    DetectionCorpus out;
    std::vector<std::size_t> sources;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].context.empty()) {
            ++out.skipped;
        } else {
            sources.push_back(i);
        }
    }
    Rng rng(options.seed);
    std::vector<MultimodalInstance> all;
    for (std::size_t i : sources) {
        all.push_back(corpus[i]);
    }
    out.positives = all.size();

    const auto wanted = static_cast<std::size_t>(std::llround(options.negative_ratio * static_cast<double>(sources.size())));
    std::vector<std::size_t> order = sources;
    shuffle_in_place(order, rng);
    for (std::size_t k = 0; k < wanted && !order.empty(); ++k) {
        const MultimodalInstance& src = corpus[order[k % order.size()]];
        const std::size_t turn = rng.below(src.context.size());
        MultimodalInstance neg;
        neg.context = src.context;
        neg.context.erase(neg.context.begin() + static_cast<std::ptrdiff_t>(turn));
        neg.context.push_back(src.target);
        neg.target = src.context[turn];
        neg.audio = src.audio;
        neg.video = src.video;
        neg.sarcasm = 0;
        neg.humour = src.humour;
        neg.emotion = src.emotion;
        all.push_back(std::move(neg));
        ++out.negatives;
    }

    shuffle_in_place(all, rng);
    const std::size_t total = all.size();
    const auto n_train = static_cast<std::size_t>(std::llround(options.train_fraction * static_cast<double>(total)));
    const auto n_val = std::min(total - n_train,
                                static_cast<std::size_t>(std::llround(options.val_fraction * static_cast<double>(total))));
    for (std::size_t i = 0; i < total; ++i) {
        all[i].split = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    }
    out.instances = std::move(all);
    return out;
}

// ---- statistics ------------------------------------------------------------------

std::string_view label_task_name(LabelTask task) {
    switch (task) {
        case LabelTask::Sarcasm: return "sarcasm";
        case LabelTask::Humour: return "humour";
        case LabelTask::Emotion: return "emotion";
    }
    return "?";
}

LabelTask parse_label_task(std::string_view name) {
    for (LabelTask t : {LabelTask::Sarcasm, LabelTask::Humour, LabelTask::Emotion}) {
        if (label_task_name(t) == name) {
            return t;
        }
    }
    throw InputError("unknown task '" + std::string(name) + "' (expected sarcasm, humour or emotion)");
}

std::vector<std::string> class_names(LabelTask task) {
    switch (task) {
        case LabelTask::Sarcasm: return {"NS", "S"};
        case LabelTask::Humour: return {"NH", "H"};
        case LabelTask::Emotion: break;
    }
    std::vector<std::string> out;
    for (Emotion e : kEmotions) {
        out.emplace_back(emotion_name(e));
    }
    return out;
}

std::string class_of(const MultimodalInstance& inst, LabelTask task) {
    switch (task) {
        case LabelTask::Sarcasm: return inst.sarcasm ? "S" : "NS";
        case LabelTask::Humour: return inst.humour ? "H" : "NH";
        case LabelTask::Emotion: break;
    }
    return std::string(emotion_name(inst.emotion));
}

ExpectedCounts expected_counts_preset(std::string_view name) {
    if (name == "wits") {
        return {LabelTask::Sarcasm, {{"train", {{"S", 1792}}}, {"val", {{"S", 224}}}, {"test", {{"S", 224}}}}};
    }
    if (name == "swits") {
        return {LabelTask::Sarcasm,
                {{"train", {{"S", 1792}, {"NS", 1669}}},
                 {"val", {{"S", 224}, {"NS", 213}}},
                 {"test", {{"S", 224}, {"NS", 218}}}}};
    }
    if (name == "hwits") {
        return {LabelTask::Humour,
                {{"train", {{"H", 995}, {"NH", 2795}}},
                 {"val", {{"H", 112}, {"NH", 362}}},
                 {"test", {{"H", 106}, {"NH", 367}}}}};
    }
    if (name == "ewits") {
        return {LabelTask::Emotion,
                {{"train", {{"neutral", 1590}, {"sadness", 1147}, {"joy", 623}, {"anger", 429}}},
                 {"val", {{"neutral", 196}, {"sadness", 133}, {"joy", 87}, {"anger", 57}}},
                 {"test", {{"neutral", 195}, {"sadness", 141}, {"joy", 70}, {"anger", 67}}}}};
    }
    throw ConfigError("unknown statistics preset '" + std::string(name) + "' (expected wits, swits, hwits or ewits)");
}

CountTable count_labels(const std::vector<MultimodalInstance>& corpus, LabelTask task) {
    CountTable table;
    for (const auto& inst : corpus) {
        ++table[std::string(split_name(inst.split))][class_of(inst, task)];
    }
    return table;
}

StatsReport validate_stats(const std::vector<MultimodalInstance>& corpus, const ExpectedCounts& expected) {
    StatsReport report;
    report.observed = count_labels(corpus, expected.task);
    std::set<std::pair<std::string, std::string>> cells;
    for (const CountTable* table : {&expected.counts, static_cast<const CountTable*>(&report.observed)}) {
        for (const auto& [split, labels] : *table) {
            for (const auto& [label, count] : labels) {
                cells.emplace(split, label);
            }
        }
    }
    const auto lookup = [](const CountTable& t, const std::string& split, const std::string& label) -> std::size_t {
        const auto s = t.find(split);
        if (s == t.end()) {
            return 0;
        }
        const auto l = s->second.find(label);
        return l == s->second.end() ? 0 : l->second;
    };
    for (const auto& [split, label] : cells) {
        const std::size_t want = lookup(expected.counts, split, label);
        const std::size_t got = lookup(report.observed, split, label);
        if (want != got) {
            report.deltas.push_back({split, label, want, got});
        }
    }
    return report;
}

}  // namespace moses
