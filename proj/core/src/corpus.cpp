#include "scdlab/corpus.hpp"

#include "scdlab/error.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace scdlab {

namespace {

bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xe) return 3;
    if ((lead >> 3) == 0x1e) return 4;
    return 1; // stray continuation byte: treat as its own symbol
}

bool is_reserved(std::string_view s) {
    return s == Vocabulary::kBlankToken || s == Vocabulary::kSpeakerTurnToken;
}

} // namespace

TokenMode parse_token_mode(std::string_view name) {
    if (name == "char") return TokenMode::Char;
    if (name == "word") return TokenMode::Word;
    throw ValidationError("unknown token mode '" + std::string(name) + "' (expected char|word)");
}

std::string_view to_string(TokenMode mode) {
    return mode == TokenMode::Char ? "char" : "word";
}

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> split_symbols(std::string_view text, TokenMode mode) {
    const std::string norm = normalize_whitespace(text);
    std::vector<std::string> out;
    if (mode == TokenMode::Word) {
        std::size_t pos = 0;
        while (pos < norm.size()) {
            auto next = norm.find(' ', pos);
            if (next == std::string::npos) next = norm.size();
            out.emplace_back(norm.substr(pos, next - pos));
            pos = next + 1;
        }
        return out;
    }
    for (std::size_t i = 0; i < norm.size();) {
        auto len = std::min(utf8_length(static_cast<unsigned char>(norm[i])), norm.size() - i);
        out.emplace_back(norm.substr(i, len));
        i += len;
    }
    return out;
}

void validate_utterance(const Utterance& utt, double max_dur_s) {
    const std::string where = "utterance '" + utt.id + "': ";
    if (utt.segments.empty()) {
        throw ValidationError(where + "no segments");
    }
    double prev_end = 0.0;
    double max_end = 0.0;
    for (std::size_t i = 0; i < utt.segments.size(); ++i) {
        const auto& seg = utt.segments[i];
        if (!(seg.start_s >= 0.0) || !(seg.start_s < seg.end_s)) {
            throw ValidationError(where + "segment " + std::to_string(i) + " needs 0 <= start_s < end_s");
        }
        if (normalize_whitespace(seg.transcript).empty()) {
            throw ValidationError(where + "segment " + std::to_string(i) + " has an empty transcript");
        }
        if (i > 0 && seg.start_s < prev_end) {
            throw ValidationError(where + "segments overlap or are out of order at index " + std::to_string(i));
        }
        prev_end = seg.end_s;
        max_end = std::max(max_end, seg.end_s);
    }
    if (utt.duration_s < max_end) {
        throw ValidationError(where + "duration_s is shorter than the last segment end");
    }
    if (!utt.oversized && utt.duration_s > max_dur_s) {
        throw ValidationError(where + "duration_s exceeds the configured maximum");
    }
}

Vocabulary::Vocabulary(std::vector<std::string> symbols, TokenMode mode) : mode_(mode) {
    tokens_.reserve(symbols.size() + 2);
    tokens_.emplace_back(kBlankToken);
    tokens_.emplace_back(kSpeakerTurnToken);
    for (auto& s : symbols) {
        if (is_reserved(s)) {
            throw ValidationError("symbol '" + s + "' collides with a reserved token");
        }
        if (s.empty()) {
            throw ValidationError("empty symbol in vocabulary");
        }
        auto id = static_cast<TokenId>(tokens_.size());
        if (!index_.emplace(s, id).second) {
            throw ValidationError("duplicate symbol '" + s + "' in vocabulary");
        }
        tokens_.push_back(std::move(s));
    }
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw ValidationError("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view symbol) const {
    auto it = index_.find(std::string(symbol));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> Vocabulary::split(std::string_view text) const {
    return split_symbols(text, mode_);
}

TokenSeq Vocabulary::tokenize(std::string_view text) const {
    TokenSeq ids;
    for (const auto& sym : split(text)) {
        auto id = find(sym);
        if (!id) {
            throw ValidationError("out-of-vocabulary symbol '" + sym + "'");
        }
        ids.push_back(*id);
    }
    return ids;
}

Json Vocabulary::to_json() const {
    return Json{{"mode", std::string(to_string(mode_))},
                {"blank_id", kBlankId},
                {"st_id", kSpeakerTurnId},
                {"tokens", tokens_}};
}

Vocabulary Vocabulary::from_json(const Json& j) {
    auto tokens = j.at("tokens").get<std::vector<std::string>>();
    if (tokens.size() < 2 || tokens[0] != kBlankToken || tokens[1] != kSpeakerTurnToken ||
        j.value("blank_id", kBlankId) != kBlankId || j.value("st_id", kSpeakerTurnId) != kSpeakerTurnId) {
        throw ValidationError("vocabulary must start with <blank>, <st> at ids 0 and 1");
    }
    tokens.erase(tokens.begin(), tokens.begin() + 2);
    return Vocabulary(std::move(tokens), parse_token_mode(j.at("mode").get<std::string>()));
}

Vocabulary build_vocab(std::span<const std::string> transcripts, TokenMode mode) {
    std::set<std::string> symbols;
    if (mode == TokenMode::Char) {
        symbols.insert(" ");
    }
    bool any = false;
    for (const auto& t : transcripts) {
        for (auto& sym : split_symbols(t, mode)) {
            if (mode == TokenMode::Word && is_reserved(sym)) {
                throw ValidationError("transcript contains reserved token '" + sym + "'");
            }
            symbols.insert(std::move(sym));
            any = true;
        }
    }
    if (!any) {
        throw ValidationError("no symbols");
    }
    return Vocabulary(std::vector<std::string>(symbols.begin(), symbols.end()), mode);
}

int count_speaker_changes(std::span<const SpeakerSegment> segments) {
    int n = 0;
    for (std::size_t i = 1; i < segments.size(); ++i) {
        if (segments[i].speaker_id != segments[i - 1].speaker_id) ++n;
    }
    return n;
}

TokenSeq make_target(const Utterance& utt, const Vocabulary& vocab, bool trailing_st) {
    TokenSeq out;
    for (std::size_t i = 0; i < utt.segments.size(); ++i) {
        const auto& seg = utt.segments[i];
        if (i > 0 && seg.speaker_id != utt.segments[i - 1].speaker_id) {
            out.push_back(vocab.st_id());
        }
        auto ids = vocab.tokenize(seg.transcript);
        out.insert(out.end(), ids.begin(), ids.end());
    }
    if (trailing_st && !utt.segments.empty()) {
        out.push_back(vocab.st_id());
    }
    return out;
}

TokenSeq make_transcript_target(const Utterance& utt, const Vocabulary& vocab) {
    TokenSeq out;
    for (const auto& seg : utt.segments) {
        auto ids = vocab.tokenize(seg.transcript);
        out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
}

std::vector<Utterance> group_segments(std::span<const SpeakerSegment> segments, double max_dur_s) {
    for (std::size_t i = 1; i < segments.size(); ++i) {
        if (segments[i].start_s < segments[i - 1].start_s) {
            throw ValidationError("group_segments: segments are not time-ordered");
        }
    }
    std::vector<Utterance> out;
    std::size_t i = 0;
    while (i < segments.size()) {
        const double origin = segments[i].start_s;
        std::size_t j = i + 1;
        while (j < segments.size() && segments[j].end_s - origin <= max_dur_s) {
            ++j;
        }
        Utterance utt;
        utt.id = "utt" + std::to_string(out.size());
        utt.language_id = segments[i].language_id;
        utt.source_offset_s = origin;
        for (std::size_t k = i; k < j; ++k) {
            auto seg = segments[k];
            seg.start_s -= origin;
            seg.end_s -= origin;
            utt.segments.push_back(std::move(seg));
        }
        utt.duration_s = utt.segments.back().end_s;
        utt.oversized = utt.duration_s > max_dur_s;
        out.push_back(std::move(utt));
        i = j;
    }
    return out;
}

Json utterance_to_json(const Utterance& utt) {
    Json segs = Json::array();
    for (const auto& s : utt.segments) {
        segs.push_back({{"speaker", s.speaker_id},
                        {"start_s", s.start_s},
                        {"end_s", s.end_s},
                        {"transcript", s.transcript}});
    }
    Json j{{"id", utt.id},
           {"duration_s", utt.duration_s},
           {"language_id", utt.language_id},
           {"segments", std::move(segs)}};
    j["feature_file"] = utt.feature_file ? Json(*utt.feature_file) : Json(nullptr);
    return j;
}

Utterance utterance_from_json(const Json& j) {
    Utterance utt;
    try {
        utt.id = j.at("id").get<std::string>();
        utt.duration_s = j.at("duration_s").get<double>();
        utt.language_id = j.at("language_id").get<int>();
        for (const auto& s : j.at("segments")) {
            SpeakerSegment seg;
            seg.speaker_id = s.at("speaker").get<std::string>();
            seg.start_s = s.at("start_s").get<double>();
            seg.end_s = s.at("end_s").get<double>();
            seg.transcript = s.at("transcript").get<std::string>();
            seg.language_id = utt.language_id;
            utt.segments.push_back(std::move(seg));
        }
        if (j.contains("feature_file") && !j["feature_file"].is_null()) {
            utt.feature_file = j["feature_file"].get<std::string>();
        }
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed manifest entry: ") + e.what());
    }
    if (utt.language_id < 0) {
        throw ValidationError("utterance '" + utt.id + "': negative language_id");
    }
    return utt;
}

std::vector<Utterance> read_manifest(const std::filesystem::path& path) {
    std::vector<Utterance> out;
    for (const auto& row : read_jsonl(path)) {
        out.push_back(utterance_from_json(row));
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const Utterance> utts) {
    std::vector<Json> rows;
    rows.reserve(utts.size());
    for (const auto& u : utts) {
        rows.push_back(utterance_to_json(u));
    }
    write_jsonl(path, rows);
}

} // namespace scdlab
