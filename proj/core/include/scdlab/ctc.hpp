#pragma once

#include "scdlab/corpus.hpp"
#include "scdlab/io.hpp"
#include "scdlab/linalg.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scdlab {

struct LogPosteriorMatrix {
    Matrix logp; // T x V, natural-log posteriors
    double frame_shift_s = 0.040;
};

// Each row must log-sum-exp to 0 within `tol` and no entry may exceed `tol`.
void validate_log_posteriors(const Matrix& logp, double tol = 1e-6);

// ---- loss ----

struct CtcLoss {
    double nll = 0.0;  // +inf when the target cannot be aligned in T frames
    Matrix grad;       // d nll / d logp, T x V (zero when unalignable)
    bool alignable = true;
};

// Frames needed to emit `target`: its length plus one per adjacent repeat.
int min_ctc_frames(std::span<const TokenId> target);

// Log-space forward-backward over the blank-augmented label sequence.
CtcLoss ctc_loss(const Matrix& logp, std::span<const TokenId> target, TokenId blank_id);

// Exhaustive sum over all V^T frame labelings that collapse to `target`.
// Throws ValidationError when V^T exceeds 1e7.
double brute_force_ctc(const Matrix& logp, std::span<const TokenId> target, TokenId blank_id);

// ---- decoding ----

enum class TimestampAnchor { Onset, Center };

struct DecodeConfig {
    double st_scale = 1.0; // lambda; log(lambda) is added to the <st> column
    TimestampAnchor anchor = TimestampAnchor::Onset;
};

struct DecodeResult {
    TokenSeq tokens;
    std::vector<double> token_times_s;
    std::vector<double> st_times_s;
};

// Per-frame argmax after adding log(st_scale) to column st_id. Ties go to the
// lowest index. The rows are not renormalized.
std::vector<TokenId> scaled_frame_argmax(const Matrix& logp, TokenId st_id, double st_scale);

// Merges runs of equal ids, then drops blanks. A token's time is the first frame
// of its run (Onset) or the midpoint of the run's span [first, last + 1) (Center), times frame_shift_s.
// `st_id` < 0 leaves st_times_s empty.
DecodeResult collapse_alignment(std::span<const TokenId> frame_ids, TokenId blank_id, double frame_shift_s,
                                TokenId st_id = -1, TimestampAnchor anchor = TimestampAnchor::Onset);

DecodeResult ctc_greedy_decode(const LogPosteriorMatrix& post, const Vocabulary& vocab, const DecodeConfig& cfg);

// Frames whose scaled argmax is st_id.
std::vector<int> st_win_frames(const Matrix& logp, TokenId st_id, double st_scale);

// ---- hypothesis files ----

// One JSON line per utterance: {id, tokens, times_s, st_times_s, lambda}.
struct Hypothesis {
    std::string id;
    std::vector<std::string> tokens;
    std::vector<double> times_s;
    std::vector<double> st_times_s;
    double lambda = 1.0;
};

Hypothesis make_hypothesis(const std::string& id, const DecodeResult& r, const Vocabulary& vocab, double lambda);
Json hypothesis_to_json(const Hypothesis& h);
Hypothesis hypothesis_from_json(const Json& j);
std::vector<Hypothesis> read_hypotheses(const std::filesystem::path& path);
void write_hypotheses(const std::filesystem::path& path, std::span<const Hypothesis> hyps);

} // namespace scdlab
