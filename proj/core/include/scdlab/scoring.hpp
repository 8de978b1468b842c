#pragma once

#include "scdlab/corpus.hpp"
#include "scdlab/ctc.hpp"
#include "scdlab/io.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scdlab {

inline constexpr double kDefaultCollarSeconds = 0.25;

struct RefChangeInterval {
    double begin_s = 0.0;
    double end_s = 0.0;
};

// One interval per adjacent pair of segments with different speakers:
// [prev.end - collar, next.start + collar] clamped to [0, duration_s].
std::vector<RefChangeInterval> ref_intervals(std::span<const SpeakerSegment> segments, double collar_s,
                                             double duration_s);

struct ScdCounts {
    long n_hyp = 0;
    long n_hyp_correct = 0;
    long n_ref = 0;
    long n_ref_detected = 0;

    ScdCounts& operator+=(const ScdCounts& o);
    friend bool operator==(const ScdCounts&, const ScdCounts&) = default;
};

// A hypothesis is correct iff it falls inside some interval (closed bounds); an
// interval is detected iff at least one hypothesis falls inside it.
ScdCounts score_scd(std::span<const RefChangeInterval> refs, std::span<const double> hyp_times);

// Percentages. With no hypotheses precision is 0 when references exist and 100
// otherwise; with no references recall is 100.
double precision_pct(const ScdCounts& c);
double recall_pct(const ScdCounts& c);
double f1(double precision_pct, double recall_pct);

struct WerCounts {
    long substitutions = 0;
    long insertions = 0;
    long deletions = 0;
    long ref_length = 0;
    // Set when the stripped reference is empty but the hypothesis is not.
    bool empty_reference = false;

    long errors() const { return substitutions + insertions + deletions; }
    WerCounts& operator+=(const WerCounts& o);
};

// Strips every `st_token` from both sides, then unit-cost Levenshtein.
WerCounts wer_counts(std::span<const std::string> ref, std::span<const std::string> hyp, std::string_view st_token);
// 100 * errors / ref_length; 100 * |hyp| for an empty reference; 0 when both are empty.
double wer_pct(const WerCounts& c);

struct UtteranceScore {
    std::string id;
    int language_id = 0;
    ScdCounts scd;
    WerCounts wer;
};

struct GroupReport {
    bool present = false; // false for an empty group
    long utterances = 0;
    ScdCounts scd;
    WerCounts wer;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double wer_pct = 0.0;

    Json to_json() const;
};

enum class GroupBy { Pooled, Language };
GroupBy parse_group_by(std::string_view name);

struct ScdReport {
    std::map<int, GroupReport> per_language;
    GroupReport pooled;

    Json to_json() const;
    // Rows Precision/Recall/F1/WER, one column per language plus the pooled column.
    std::string render_table() const;
};

// Micro-average: counts are summed within each group before rates are taken.
GroupReport aggregate_group(std::span<const UtteranceScore> scores);
ScdReport aggregate(std::span<const UtteranceScore> scores, GroupBy grouping);

// Reference tokens of an utterance: each segment's transcript split under `mode`,
// concatenated in order.
std::vector<std::string> reference_tokens(const Utterance& utt, TokenMode mode);

// SCD counts against the utterance's change intervals (using st_times_s) and
// WER against its reference tokens.
UtteranceScore score_utterance(const Utterance& ref, const Hypothesis& hyp, double collar_s, TokenMode mode);

} // namespace scdlab
