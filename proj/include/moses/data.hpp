// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "moses/rng.hpp"
#include "moses/tensor.hpp"

namespace moses {

enum class Emotion { Neutral, Sadness, Joy, Anger };
enum class Split { Train, Val, Test };

inline constexpr std::array<Emotion, 4> kEmotions = {Emotion::Neutral, Emotion::Sadness, Emotion::Joy,
                                                     Emotion::Anger};
inline constexpr std::array<Split, 3> kSplits = {Split::Train, Split::Val, Split::Test};

std::string_view emotion_name(Emotion e);
std::string_view split_name(Split s);
// Both throw InputError on unknown names.
Emotion parse_emotion(std::string_view name);
Split parse_split(std::string_view name);

struct Utterance {
    std::string speaker;
    std::vector<std::string> tokens;

    bool operator==(const Utterance&) const = default;
};

struct MultimodalInstance {
    std::vector<Utterance> context;
    Utterance target;
    Tensor audio;  // L_a x d_ca
    Tensor video;  // L_v x d_cv
    std::vector<std::string> explanation;
    int sarcasm = 0;
    int humour = 0;
    Emotion emotion = Emotion::Neutral;
    Split split = Split::Train;
};

// Field-by-field equality with bitwise feature comparison.
bool same_instance(const MultimodalInstance& a, const MultimodalInstance& b);

std::vector<std::string> split_words(std::string_view text);
std::string join_words(const std::vector<std::string>& words);

// ---- phonetic keys ---------------------------------------------------------------

// Surface spelling -> phonetic key. Every stored key is already in collapsed form,
// so looking a key up again returns itself.
class VariantTable {
public:
    VariantTable() = default;
    // Each group lists spellings of one word; all map to the collapse of the first.
    explicit VariantTable(const std::vector<std::vector<std::string>>& groups);

    static const VariantTable& builtin();

    const std::string* find(std::string_view surface) const;
    std::size_t size() const { return keys_.size(); }

private:
    std::unordered_map<std::string, std::string> keys_;
};

// Lowercase, first character kept, later vowels dropped, repeated characters collapsed.
std::string collapse_key(std::string_view token);
std::string phonetic_key(std::string_view token, const VariantTable& table = VariantTable::builtin());

// ---- vocabulary ------------------------------------------------------------------

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kStart = 1;
    static constexpr int kEnd = 2;
    static constexpr int kSep = 3;
    static constexpr int kUnk = 4;
    static constexpr std::size_t kReserved = 5;
    static const std::array<std::string, kReserved>& reserved_tokens();

    Vocabulary();
    // Full token list including the reserved prefix, as stored in checkpoints.
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    bool contains(std::string_view token) const;
    // Unknown tokens map to kUnk.
    int id(std::string_view token) const;
    const std::string& token(int id) const;
    std::vector<int> encode(const std::vector<std::string>& words) const;
    // Stops at the end token, drops pad/start tokens.
    std::vector<std::string> decode(const std::vector<int>& ids) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

// Speakers, utterance tokens and explanation tokens, ids in lexicographic order after the reserved block.
Vocabulary build_vocab(const std::vector<MultimodalInstance>& corpus);

// Token id -> phonetic key id. Reserved tokens keep their own ids.
struct PhoneticIndex {
    std::vector<std::string> keys;
    std::vector<int> key_of_token;

    static PhoneticIndex build(const Vocabulary& vocab, const VariantTable& table = VariantTable::builtin());
    std::size_t key_count() const { return keys.size(); }
};

// Encoder-side words: each context turn as speaker + tokens, then the separator,
// the target speaker and the target tokens.
std::vector<std::string> dialogue_words(const MultimodalInstance& instance);

// ---- synthetic corpus ------------------------------------------------------------

enum class Polarity { Positive, Negative };
enum class Tone { Neutral, Low, High };
enum class Face { Disgust, Dancing, Smile };

inline constexpr std::size_t kTones = 3;
inline constexpr std::size_t kFaces = 3;

std::string_view tone_word(Tone t);
std::string_view face_word(Face f);

struct Verdict {
    int sarcasm = 0;
    int humour = 0;
    Emotion emotion = Emotion::Neutral;
    bool loves = false;  // stance actually meant by the speaker
};

// Total over polarity x tone x face.
Verdict truth_table(Polarity polarity, Tone tone, Face face);

struct CorpusSpec {
    std::array<std::size_t, 3> counts = {2000, 250, 250};
    std::size_t audio_dim = 154;
    std::size_t video_dim = 2048;
    std::size_t audio_frames = 8;
    std::size_t video_frames = 4;
    double noise = 0.5;
    double variant_probability = 0.3;
    std::size_t context_min = 2;
    std::size_t context_max = 3;
    // Only sarcastic (polarity, tone, face) cells are drawn.
    bool sarcastic_only = false;
    std::size_t max_vocab = 4096;
    std::uint64_t seed = 1;
    // Cue prototypes depend only on this seed, so corpora drawn with different
    // `seed` values share one audio/video code book.
    std::uint64_t prototype_seed = 2024;

    void validate() const;
};

struct CorpusDetails {
    Polarity polarity;
    Tone tone;
    Face face;
};

std::vector<MultimodalInstance> generate_corpus(const CorpusSpec& spec,
                                                std::vector<CorpusDetails>* details = nullptr);

// Cue prototypes shared by every instance of a corpus: frames x dim per tone/face.
Tensor tone_prototype(const CorpusSpec& spec, Tone tone);
Tensor face_prototype(const CorpusSpec& spec, Face face);

// ---- JSONL -----------------------------------------------------------------------

std::string to_json_line(const MultimodalInstance& instance);
MultimodalInstance from_json_line(std::string_view line, std::size_t line_number);
void write_jsonl(const std::vector<MultimodalInstance>& corpus, const std::filesystem::path& path);
std::vector<MultimodalInstance> load_jsonl(const std::filesystem::path& path);

// ---- detection splits ------------------------------------------------------------

struct DetectionOptions {
    double negative_ratio = 1.0;
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    std::uint64_t seed = 1;
};

struct DetectionCorpus {
    std::vector<MultimodalInstance> instances;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t skipped = 0;  // sources without a context turn
};

DetectionCorpus build_detection_splits(const std::vector<MultimodalInstance>& corpus,
                                       const DetectionOptions& options = {});

// ---- statistics ------------------------------------------------------------------

enum class LabelTask { Sarcasm, Humour, Emotion };

std::string_view label_task_name(LabelTask task);
LabelTask parse_label_task(std::string_view name);
// Class names used in count tables: S/NS, H/NH, or the emotion names.
std::vector<std::string> class_names(LabelTask task);
std::string class_of(const MultimodalInstance& instance, LabelTask task);

// split name -> class name -> count
using CountTable = std::map<std::string, std::map<std::string, std::size_t>>;

struct ExpectedCounts {
    LabelTask task = LabelTask::Sarcasm;
    CountTable counts;
};

// Reference tables: "wits", "swits", "hwits", "ewits".
ExpectedCounts expected_counts_preset(std::string_view name);

struct StatDelta {
    std::string split;
    std::string label;
    std::size_t expected = 0;
    std::size_t observed = 0;
    long long delta() const { return static_cast<long long>(observed) - static_cast<long long>(expected); }
};

struct StatsReport {
    CountTable observed;
    std::vector<StatDelta> deltas;
    bool passed() const { return deltas.empty(); }
};

CountTable count_labels(const std::vector<MultimodalInstance>& corpus, LabelTask task);
StatsReport validate_stats(const std::vector<MultimodalInstance>& corpus, const ExpectedCounts& expected);

}  // namespace moses
