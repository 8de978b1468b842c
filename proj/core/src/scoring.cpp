#include "scdlab/scoring.hpp"

#include "scdlab/error.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace scdlab {

std::vector<RefChangeInterval> ref_intervals(std::span<const SpeakerSegment> segments, double collar_s,
                                             double duration_s) {
    std::vector<RefChangeInterval> out;
    for (std::size_t i = 1; i < segments.size(); ++i) {
        if (segments[i].speaker_id == segments[i - 1].speaker_id) continue;
        RefChangeInterval r;
        r.begin_s = std::clamp(segments[i - 1].end_s - collar_s, 0.0, duration_s);
        r.end_s = std::clamp(segments[i].start_s + collar_s, 0.0, duration_s);
        out.push_back(r);
    }
    return out;
}

ScdCounts& ScdCounts::operator+=(const ScdCounts& o) {
    n_hyp += o.n_hyp;
    n_hyp_correct += o.n_hyp_correct;
    n_ref += o.n_ref;
    n_ref_detected += o.n_ref_detected;
    return *this;
}

ScdCounts score_scd(std::span<const RefChangeInterval> refs, std::span<const double> hyp_times) {
    if (!std::is_sorted(hyp_times.begin(), hyp_times.end())) {
        throw ValidationError("score_scd: hypothesis times must be sorted");
    }
    ScdCounts c;
    c.n_hyp = static_cast<long>(hyp_times.size());
    c.n_ref = static_cast<long>(refs.size());
    std::vector<bool> correct(hyp_times.size(), false);
    for (const auto& r : refs) {
        auto lo = std::lower_bound(hyp_times.begin(), hyp_times.end(), r.begin_s);
        auto hi = std::upper_bound(hyp_times.begin(), hyp_times.end(), r.end_s);
        if (lo < hi) {
            ++c.n_ref_detected;
            for (auto it = lo; it != hi; ++it) {
                correct[static_cast<std::size_t>(it - hyp_times.begin())] = true;
            }
        }
    }
    c.n_hyp_correct = static_cast<long>(std::count(correct.begin(), correct.end(), true));
    return c;
}

double precision_pct(const ScdCounts& c) {
    if (c.n_hyp == 0) return c.n_ref > 0 ? 0.0 : 100.0;
    return 100.0 * static_cast<double>(c.n_hyp_correct) / static_cast<double>(c.n_hyp);
}

double recall_pct(const ScdCounts& c) {
    if (c.n_ref == 0) return 100.0;
    return 100.0 * static_cast<double>(c.n_ref_detected) / static_cast<double>(c.n_ref);
}

double f1(double p, double r) {
    if (p + r <= 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

WerCounts& WerCounts::operator+=(const WerCounts& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    ref_length += o.ref_length;
    empty_reference = empty_reference || o.empty_reference;
    return *this;
}

WerCounts wer_counts(std::span<const std::string> ref_in, std::span<const std::string> hyp_in,
                     std::string_view st_token) {
    std::vector<std::string_view> ref, hyp;
    for (const auto& t : ref_in) {
        if (t != st_token) ref.push_back(t);
    }
    for (const auto& t : hyp_in) {
        if (t != st_token) hyp.push_back(t);
    }
    const std::size_t n = ref.size();
    const std::size_t m = hyp.size();
    // cost table with back-pointers resolved by preferring the diagonal, then deletion, then insertion
    struct Cell {
        long cost;
        long sub, ins, del;
    };
    std::vector<Cell> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = {static_cast<long>(j), 0, static_cast<long>(j), 0};
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = {static_cast<long>(i), 0, 0, static_cast<long>(i)};
        for (std::size_t j = 1; j <= m; ++j) {
            const bool same = ref[i - 1] == hyp[j - 1];
            Cell diag = prev[j - 1];
            diag.cost += same ? 0 : 1;
            diag.sub += same ? 0 : 1;
            Cell del = prev[j];
            del.cost += 1;
            del.del += 1;
            Cell ins = cur[j - 1];
            ins.cost += 1;
            ins.ins += 1;
            Cell best = diag;
            if (del.cost < best.cost) best = del;
            if (ins.cost < best.cost) best = ins;
            cur[j] = best;
        }
        std::swap(prev, cur);
    }
    WerCounts w;
    w.substitutions = prev[m].sub;
    w.insertions = prev[m].ins;
    w.deletions = prev[m].del;
    w.ref_length = static_cast<long>(n);
    w.empty_reference = n == 0 && m > 0;
    return w;
}

double wer_pct(const WerCounts& c) {
    if (c.ref_length == 0) {
        return 100.0 * static_cast<double>(c.insertions);
    }
    return 100.0 * static_cast<double>(c.errors()) / static_cast<double>(c.ref_length);
}

Json GroupReport::to_json() const {
    if (!present) {
        return Json{{"present", false}};
    }
    return Json{{"present", true},
                {"utterances", utterances},
                {"precision", precision},
                {"recall", recall},
                {"f1", f1},
                {"wer", wer_pct},
                {"counts",
                 {{"n_hyp", scd.n_hyp},
                  {"n_hyp_correct", scd.n_hyp_correct},
                  {"n_ref", scd.n_ref},
                  {"n_ref_detected", scd.n_ref_detected},
                  {"substitutions", wer.substitutions},
                  {"insertions", wer.insertions},
                  {"deletions", wer.deletions},
                  {"ref_tokens", wer.ref_length}}}};
}

GroupBy parse_group_by(std::string_view name) {
    if (name == "pooled") return GroupBy::Pooled;
    if (name == "language") return GroupBy::Language;
    throw ValidationError("unknown grouping '" + std::string(name) + "' (expected pooled|language)");
}

GroupReport aggregate_group(std::span<const UtteranceScore> scores) {
    GroupReport g;
    if (scores.empty()) {
        return g;
    }
    g.present = true;
    for (const auto& s : scores) {
        g.scd += s.scd;
        g.wer += s.wer;
        ++g.utterances;
    }
    g.precision = precision_pct(g.scd);
    g.recall = recall_pct(g.scd);
    g.f1 = scdlab::f1(g.precision, g.recall);
    g.wer_pct = wer_pct(g.wer);
    return g;
}

ScdReport aggregate(std::span<const UtteranceScore> scores, GroupBy grouping) {
    ScdReport report;
    report.pooled = aggregate_group(scores);
    if (grouping == GroupBy::Language) {
        std::map<int, std::vector<UtteranceScore>> by_lang;
        for (const auto& s : scores) by_lang[s.language_id].push_back(s);
        for (const auto& [lang, group] : by_lang) {
            report.per_language[lang] = aggregate_group(group);
        }
    }
    return report;
}

Json ScdReport::to_json() const {
    Json langs = Json::object();
    for (const auto& [lang, g] : per_language) {
        langs[std::to_string(lang)] = g.to_json();
    }
    return Json{{"per_language", langs}, {"pooled", pooled.to_json()}};
}

std::string ScdReport::render_table() const {
    std::vector<std::pair<std::string, const GroupReport*>> cols;
    for (const auto& [lang, g] : per_language) cols.emplace_back("lang" + std::to_string(lang), &g);
    cols.emplace_back("Pooled", &pooled);

    std::ostringstream out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-10s", "Metric");
    out << buf;
    for (const auto& [name, g] : cols) {
        std::snprintf(buf, sizeof buf, " %9s", name.c_str());
        out << buf;
    }
    out << '\n';
    const std::pair<const char*, double GroupReport::*> rows[] = {
        {"Precision", &GroupReport::precision},
        {"Recall", &GroupReport::recall},
        {"F1", &GroupReport::f1},
        {"WER", &GroupReport::wer_pct},
    };
    for (const auto& [label, field] : rows) {
        std::snprintf(buf, sizeof buf, "%-10s", label);
        out << buf;
        for (const auto& [name, g] : cols) {
            if (g->present) {
                std::snprintf(buf, sizeof buf, " %9.1f", g->*field);
            } else {
                std::snprintf(buf, sizeof buf, " %9s", "-");
            }
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

std::vector<std::string> reference_tokens(const Utterance& utt, TokenMode mode) {
    std::vector<std::string> out;
    for (const auto& seg : utt.segments) {
        auto syms = split_symbols(normalize_whitespace(seg.transcript), mode);
        out.insert(out.end(), syms.begin(), syms.end());
    }
    return out;
}

UtteranceScore score_utterance(const Utterance& ref, const Hypothesis& hyp, double collar_s, TokenMode mode) {
    UtteranceScore s;
    s.id = ref.id;
    s.language_id = ref.language_id;
    const auto intervals = ref_intervals(ref.segments, collar_s, ref.duration_s);
    s.scd = score_scd(intervals, hyp.st_times_s);
    const auto ref_tokens = reference_tokens(ref, mode);
    s.wer = wer_counts(ref_tokens, hyp.tokens, Vocabulary::kSpeakerTurnToken);
    return s;
}

} // namespace scdlab
