#include "scdlab/ctc.hpp"

#include "scdlab/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scdlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

} // namespace

void validate_log_posteriors(const Matrix& logp, double tol) {
    for (Eigen::Index t = 0; t < logp.rows(); ++t) {
        double lse = kNegInf;
        for (Eigen::Index k = 0; k < logp.cols(); ++k) {
            if (!(logp(t, k) <= tol)) {
                throw ValidationError("log-posterior row " + std::to_string(t) + " has an entry above 0");
            }
            lse = log_add(lse, logp(t, k));
        }
        if (std::abs(lse) > tol) {
            throw ValidationError("log-posterior row " + std::to_string(t) + " is not normalized");
        }
    }
}

int min_ctc_frames(std::span<const TokenId> target) {
    int n = static_cast<int>(target.size());
    for (std::size_t i = 1; i < target.size(); ++i) {
        if (target[i] == target[i - 1]) ++n;
    }
    return n;
}

CtcLoss ctc_loss(const Matrix& logp, std::span<const TokenId> target, TokenId blank_id) {
    const auto T = static_cast<int>(logp.rows());
    const auto V = static_cast<int>(logp.cols());
    for (auto id : target) {
        if (id == blank_id) {
            throw ValidationError("ctc_loss: target contains the blank id");
        }
        if (id < 0 || id >= V) {
            throw ValidationError("ctc_loss: target id " + std::to_string(id) + " outside the vocabulary");
        }
    }
    if (blank_id < 0 || blank_id >= V) {
        throw ValidationError("ctc_loss: blank id outside the vocabulary");
    }

    CtcLoss out;
    out.grad = Matrix::Zero(T, V);
    const auto unalignable = [&out] {
        out.nll = std::numeric_limits<double>::infinity();
        out.grad.setZero();
        out.alignable = false;
        return out;
    };
    if (logp.hasNaN()) {
        // corrupt input, not an alignment problem: let the caller see it
        out.nll = std::numeric_limits<double>::quiet_NaN();
        out.grad.setConstant(out.nll);
        return out;
    }
    if (T == 0 || T < min_ctc_frames(target)) {
        return unalignable();
    }

    const int S = 2 * static_cast<int>(target.size()) + 1;
    std::vector<TokenId> ext(static_cast<std::size_t>(S), blank_id);
    for (std::size_t i = 0; i < target.size(); ++i) {
        ext[2 * i + 1] = target[i];
    }
    auto skip_allowed = [&](int s) { return s >= 2 && ext[s] != blank_id && ext[s] != ext[s - 2]; };

    Matrix alpha = Matrix::Constant(T, S, kNegInf);
    alpha(0, 0) = logp(0, ext[0]);
    if (S > 1) alpha(0, 1) = logp(0, ext[1]);
    for (int t = 1; t < T; ++t) {
        for (int s = 0; s < S; ++s) {
            double a = alpha(t - 1, s);
            if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
            if (skip_allowed(s)) a = log_add(a, alpha(t - 1, s - 2));
            alpha(t, s) = a == kNegInf ? kNegInf : a + logp(t, ext[s]);
        }
    }
    double log_p = alpha(T - 1, S - 1);
    if (S > 1) log_p = log_add(log_p, alpha(T - 1, S - 2));
    if (!std::isfinite(log_p)) {
        return unalignable();
    }

    // beta(t, s): log-probability of finishing from state s at frame t, excluding frame t's emission.
    Matrix beta = Matrix::Constant(T, S, kNegInf);
    beta(T - 1, S - 1) = 0.0;
    if (S > 1) beta(T - 1, S - 2) = 0.0;
    for (int t = T - 2; t >= 0; --t) {
        for (int s = 0; s < S; ++s) {
            double b = beta(t + 1, s) + logp(t + 1, ext[s]);
            if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1) + logp(t + 1, ext[s + 1]));
            if (s + 2 < S && skip_allowed(s + 2)) b = log_add(b, beta(t + 1, s + 2) + logp(t + 1, ext[s + 2]));
            beta(t, s) = b;
        }
    }

    for (int t = 0; t < T; ++t) {
        for (int s = 0; s < S; ++s) {
            const double occ = alpha(t, s) + beta(t, s) - log_p;
            if (occ > kNegInf) {
                out.grad(t, ext[s]) -= std::exp(occ);
            }
        }
    }
    out.nll = -log_p;
    return out;
}

double brute_force_ctc(const Matrix& logp, std::span<const TokenId> target, TokenId blank_id) {
    const auto T = static_cast<int>(logp.rows());
    const auto V = static_cast<int>(logp.cols());
    if (std::pow(static_cast<double>(V), T) > 1e7) {
        throw ValidationError("brute_force_ctc: instance too large");
    }
    std::vector<TokenId> path(static_cast<std::size_t>(T), 0);
    double total = 0.0;
    while (true) {
        // collapse and compare
        std::vector<TokenId> collapsed;
        TokenId prev = -1;
        for (auto id : path) {
            if (id != prev && id != blank_id) collapsed.push_back(id);
            prev = id;
        }
        if (std::equal(collapsed.begin(), collapsed.end(), target.begin(), target.end())) {
            double lp = 0.0;
            for (int t = 0; t < T; ++t) lp += logp(t, path[static_cast<std::size_t>(t)]);
            total += std::exp(lp);
        }
        int pos = T - 1;
        while (pos >= 0 && ++path[static_cast<std::size_t>(pos)] == V) {
            path[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    return total;
}

std::vector<TokenId> scaled_frame_argmax(const Matrix& logp, TokenId st_id, double st_scale) {
    if (!(st_scale > 0.0)) {
        throw ValidationError("st_scale must be positive");
    }
    const double bonus = std::log(st_scale);
    std::vector<TokenId> ids(static_cast<std::size_t>(logp.rows()));
    for (Eigen::Index t = 0; t < logp.rows(); ++t) {
        TokenId best = 0;
        double best_v = kNegInf;
        for (Eigen::Index k = 0; k < logp.cols(); ++k) {
            double v = logp(t, k);
            if (k == st_id) v += bonus;
            if (v > best_v) {
                best_v = v;
                best = static_cast<TokenId>(k);
            }
        }
        ids[static_cast<std::size_t>(t)] = best;
    }
    return ids;
}

std::vector<int> st_win_frames(const Matrix& logp, TokenId st_id, double st_scale) {
    const auto ids = scaled_frame_argmax(logp, st_id, st_scale);
    std::vector<int> frames;
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] == st_id) frames.push_back(static_cast<int>(t));
    }
    return frames;
}

DecodeResult collapse_alignment(std::span<const TokenId> frame_ids, TokenId blank_id, double frame_shift_s,
                                TokenId st_id, TimestampAnchor anchor) {
    DecodeResult r;
    std::size_t i = 0;
    while (i < frame_ids.size()) {
        std::size_t j = i + 1;
        while (j < frame_ids.size() && frame_ids[j] == frame_ids[i]) ++j;
        const TokenId id = frame_ids[i];
        if (id != blank_id) {
            const double frame = anchor == TimestampAnchor::Onset ? static_cast<double>(i)
                                                                  : 0.5 * static_cast<double>(i + j);
            const double time = frame * frame_shift_s;
            r.tokens.push_back(id);
            r.token_times_s.push_back(time);
            if (id == st_id) r.st_times_s.push_back(time);
        }
        i = j;
    }
    return r;
}

DecodeResult ctc_greedy_decode(const LogPosteriorMatrix& post, const Vocabulary& vocab, const DecodeConfig& cfg) {
    if (post.logp.cols() != static_cast<Eigen::Index>(vocab.size())) {
        throw ValidationError("posterior width " + std::to_string(post.logp.cols()) + " does not match vocabulary size " +
                              std::to_string(vocab.size()));
    }
    const auto ids = scaled_frame_argmax(post.logp, vocab.st_id(), cfg.st_scale);
    return collapse_alignment(ids, vocab.blank_id(), post.frame_shift_s, vocab.st_id(), cfg.anchor);
}

Hypothesis make_hypothesis(const std::string& id, const DecodeResult& r, const Vocabulary& vocab, double lambda) {
    Hypothesis h;
    h.id = id;
    for (auto t : r.tokens) h.tokens.push_back(vocab.token(t));
    h.times_s = r.token_times_s;
    h.st_times_s = r.st_times_s;
    h.lambda = lambda;
    return h;
}

Json hypothesis_to_json(const Hypothesis& h) {
    return Json{{"id", h.id}, {"tokens", h.tokens}, {"times_s", h.times_s}, {"st_times_s", h.st_times_s},
                {"lambda", h.lambda}};
}

Hypothesis hypothesis_from_json(const Json& j) {
    Hypothesis h;
    try {
        h.id = j.at("id").get<std::string>();
        h.tokens = j.at("tokens").get<std::vector<std::string>>();
        h.times_s = j.value("times_s", std::vector<double>{});
        h.st_times_s = j.at("st_times_s").get<std::vector<double>>();
        h.lambda = j.value("lambda", 1.0);
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("bad hypothesis record: ") + e.what());
    }
    if (!h.times_s.empty() && h.times_s.size() != h.tokens.size()) {
        throw ValidationError("hypothesis '" + h.id + "': times_s and tokens differ in length");
    }
    return h;
}

std::vector<Hypothesis> read_hypotheses(const std::filesystem::path& path) {
    std::vector<Hypothesis> out;
    for (const auto& j : read_jsonl(path)) out.push_back(hypothesis_from_json(j));
    return out;
}

void write_hypotheses(const std::filesystem::path& path, std::span<const Hypothesis> hyps) {
    std::vector<Json> rows;
    rows.reserve(hyps.size());
    for (const auto& h : hyps) rows.push_back(hypothesis_to_json(h));
    write_jsonl(path, rows);
}

} // namespace scdlab
