#pragma once

#include "scdlab/io.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace scdlab {

struct SpeakerSegment {
    std::string speaker_id;
    double start_s = 0.0;
    double end_s = 0.0;
    std::string transcript;
    int language_id = 0;
};

struct Utterance {
    std::string id;
    std::vector<SpeakerSegment> segments;
    double duration_s = 0.0;
    int language_id = 0;
    // Relative to the manifest directory; empty when features are supplied in memory.
    std::optional<std::string> feature_file;
    // Set by group_segments when a single segment exceeds the duration cap.
    bool oversized = false;
    // Start of the utterance on the source recording's timeline.
    double source_offset_s = 0.0;
};

inline constexpr double kDefaultMaxUtteranceSeconds = 30.0;

// Throws ValidationError when ordering, overlap, or duration invariants fail.
void validate_utterance(const Utterance& utt, double max_dur_s = kDefaultMaxUtteranceSeconds);

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

enum class TokenMode { Char, Word };

TokenMode parse_token_mode(std::string_view name);
std::string_view to_string(TokenMode mode);

// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

class Vocabulary {
public:
    static constexpr TokenId kBlankId = 0;
    static constexpr TokenId kSpeakerTurnId = 1;
    static constexpr std::string_view kBlankToken = "<blank>";
    static constexpr std::string_view kSpeakerTurnToken = "<st>";

    Vocabulary() = default;
    // `symbols` excludes the two reserved entries.
    Vocabulary(std::vector<std::string> symbols, TokenMode mode);

    TokenId blank_id() const { return kBlankId; }
    TokenId st_id() const { return kSpeakerTurnId; }
    TokenMode mode() const { return mode_; }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token(TokenId id) const;

    // Text symbols only; the reserved tokens are never returned.
    std::optional<TokenId> find(std::string_view symbol) const;

    // Splits text into symbols under the vocabulary's mode (no lookup).
    std::vector<std::string> split(std::string_view text) const;

    // Throws ValidationError naming the first out-of-vocabulary symbol.
    TokenSeq tokenize(std::string_view text) const;

    Json to_json() const;
    static Vocabulary from_json(const Json& j);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.mode_ == b.mode_ && a.tokens_ == b.tokens_;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    TokenMode mode_ = TokenMode::Word;
};

// Symbols of `text` under `mode`: UTF-8 code points for Char, whitespace words for Word.
std::vector<std::string> split_symbols(std::string_view text, TokenMode mode);

Vocabulary build_vocab(std::span<const std::string> transcripts, TokenMode mode);

// Tokenized segment transcripts with <st> between segments of different speakers,
// plus one trailing <st> when `trailing_st` is set.
TokenSeq make_target(const Utterance& utt, const Vocabulary& vocab, bool trailing_st);

// Plain transcript tokens with no <st> at all (ASR-pretraining targets).
TokenSeq make_transcript_target(const Utterance& utt, const Vocabulary& vocab);

int count_speaker_changes(std::span<const SpeakerSegment> segments);

// Greedy left-to-right packing of consecutive segments into utterances whose span
// (last end - first start) is at most max_dur_s. Segment times are rebased so each
// utterance starts at its first segment; an oversized single segment becomes its
// own utterance with `oversized` set.
std::vector<Utterance> group_segments(std::span<const SpeakerSegment> segments, double max_dur_s);

// Corpus manifest (JSON lines).
Json utterance_to_json(const Utterance& utt);
Utterance utterance_from_json(const Json& j);
std::vector<Utterance> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const Utterance> utts);

} // namespace scdlab
