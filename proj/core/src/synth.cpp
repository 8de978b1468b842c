#include "scdlab/synth.hpp"

#include "scdlab/error.hpp"
#include "scdlab/features.hpp"
#include "scdlab/random.hpp"

#include <cmath>
#include <cstdio>
#include <set>

namespace scdlab {

namespace {

constexpr double kShift = kDefaultFrameShiftSeconds;
constexpr double kFramesPerSecond = 100.0; // 1 / kShift, divided by so times print exactly

double seconds_of(int frames) {
    return frames / kFramesPerSecond;
}

struct WordSpan {
    int word = 0; // index into the language's word list
    int start = 0;
    int frames = 0;
};

struct RawSegment {
    int speaker = 0;
    int start = 0; // frames on the recording timeline
    int end = 0;
    std::vector<WordSpan> words;
};

int frames_of(double seconds) {
    return static_cast<int>(std::lround(seconds / kShift));
}

int uniform_int(Rng& rng, int lo, int hi) {
    return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

std::vector<std::vector<std::string>> make_words(const SynthConfig& cfg, Rng& rng) {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    std::set<std::string> used;
    std::vector<std::vector<std::string>> words(static_cast<std::size_t>(cfg.n_languages));
    for (auto& lang : words) {
        while (static_cast<int>(lang.size()) < cfg.words_per_language) {
            std::string w;
            const int syllables = uniform_int(rng, 2, 3);
            for (int s = 0; s < syllables; ++s) {
                w += consonants[uniform_index(rng, consonants.size())];
                w += vowels[uniform_index(rng, vowels.size())];
            }
            if (used.insert(w).second) lang.push_back(w);
        }
    }
    return words;
}

Matrix make_signatures(const SynthConfig& cfg, Rng& rng) {
    Matrix sig(cfg.n_speakers, cfg.speaker_dims);
    const double min_dist = 2.0 * cfg.speaker_scale;
    for (int attempt = 0;; ++attempt) {
        for (Eigen::Index i = 0; i < sig.size(); ++i) {
            sig.data()[i] = cfg.speaker_scale * standard_normal(rng);
        }
        bool ok = true;
        for (int a = 0; a < cfg.n_speakers && ok; ++a) {
            for (int b = a + 1; b < cfg.n_speakers && ok; ++b) {
                ok = (sig.row(a) - sig.row(b)).norm() >= min_dist;
            }
        }
        if (ok) return sig;
        if (attempt > 1000) {
            throw ValidationError("synth: cannot draw well-separated speaker signatures; raise speaker_dims");
        }
    }
}

std::vector<RawSegment> make_recording(const SynthConfig& cfg, int n_words, Rng& rng) {
    std::vector<RawSegment> segs;
    const int limit = frames_of(cfg.recording_s);
    int cursor = 0;
    int speaker = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_speakers)));
    while (cursor < limit) {
        RawSegment seg;
        seg.speaker = speaker;
        seg.start = cursor;
        const int count = uniform_int(rng, cfg.min_words_per_turn, cfg.max_words_per_turn);
        int prev_word = -1;
        for (int i = 0; i < count; ++i) {
            int w;
            do {
                w = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n_words)));
            } while (w == prev_word && n_words > 1);
            prev_word = w;
            const int len = uniform_int(rng, cfg.min_word_frames, cfg.max_word_frames);
            seg.words.push_back({w, cursor, len});
            cursor += len;
        }
        seg.end = cursor;
        segs.push_back(std::move(seg));
        cursor += std::max(1, frames_of(uniform_real(rng, cfg.min_gap_s, cfg.max_gap_s)));
        if (!bernoulli(rng, cfg.same_speaker_prob)) {
            const int other = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_speakers - 1)));
            speaker = other >= speaker ? other + 1 : other;
        }
    }
    return segs;
}

} // namespace

void SynthConfig::validate() const {
    if (n_speakers < 2) {
        throw ValidationError("synth: n_speakers must be >= 2 (no change points possible otherwise)");
    }
    if (n_languages < 1 || words_per_language < 1 || token_dims < 1 || speaker_dims < 1) {
        throw ValidationError("synth: languages, words, and dims must be positive");
    }
    if (n_utterances < 0 || n_test_utterances < 0) {
        throw ValidationError("synth: utterance counts must be non-negative");
    }
    if (min_word_frames < 1 || max_word_frames < min_word_frames || min_words_per_turn < 1 ||
        max_words_per_turn < min_words_per_turn) {
        throw ValidationError("synth: word/turn length ranges are invalid");
    }
    if (min_gap_s < 0.0 || max_gap_s < min_gap_s || noise_std < 0.0 || edge_silence_s < 0.0) {
        throw ValidationError("synth: gap, noise, and silence settings must be non-negative ranges");
    }
    if (max_utterance_s <= 0.0 || recording_s <= 0.0 || max_utterance_s > kDefaultMaxUtteranceSeconds) {
        throw ValidationError("synth: max_utterance_s must be in (0, 30]");
    }
    if (same_speaker_prob < 0.0 || same_speaker_prob > 1.0) {
        throw ValidationError("synth: same_speaker_prob must be a probability");
    }
}

Json SynthConfig::to_json() const {
    return Json{{"n_speakers", n_speakers},
                {"n_languages", n_languages},
                {"n_utterances", n_utterances},
                {"n_test_utterances", n_test_utterances},
                {"words_per_language", words_per_language},
                {"token_dims", token_dims},
                {"speaker_dims", speaker_dims},
                {"token_scale", token_scale},
                {"speaker_scale", speaker_scale},
                {"noise_std", noise_std},
                {"min_word_frames", min_word_frames},
                {"max_word_frames", max_word_frames},
                {"min_words_per_turn", min_words_per_turn},
                {"max_words_per_turn", max_words_per_turn},
                {"min_gap_s", min_gap_s},
                {"max_gap_s", max_gap_s},
                {"same_speaker_prob", same_speaker_prob},
                {"recording_s", recording_s},
                {"max_utterance_s", max_utterance_s},
                {"edge_silence_s", edge_silence_s},
                {"min_segments_per_utterance", min_segments_per_utterance},
                {"token_mode", std::string(to_string(token_mode))}};
}

SynthConfig SynthConfig::from_json(const Json& j) {
    SynthConfig c;
    try {
        c.n_speakers = j.value("n_speakers", c.n_speakers);
        c.n_languages = j.value("n_languages", c.n_languages);
        c.n_utterances = j.value("n_utterances", c.n_utterances);
        c.n_test_utterances = j.value("n_test_utterances", c.n_test_utterances);
        c.words_per_language = j.value("words_per_language", c.words_per_language);
        c.token_dims = j.value("token_dims", c.token_dims);
        c.speaker_dims = j.value("speaker_dims", c.speaker_dims);
        c.token_scale = j.value("token_scale", c.token_scale);
        c.speaker_scale = j.value("speaker_scale", c.speaker_scale);
        c.noise_std = j.value("noise_std", c.noise_std);
        c.min_word_frames = j.value("min_word_frames", c.min_word_frames);
        c.max_word_frames = j.value("max_word_frames", c.max_word_frames);
        c.min_words_per_turn = j.value("min_words_per_turn", c.min_words_per_turn);
        c.max_words_per_turn = j.value("max_words_per_turn", c.max_words_per_turn);
        c.min_gap_s = j.value("min_gap_s", c.min_gap_s);
        c.max_gap_s = j.value("max_gap_s", c.max_gap_s);
        c.same_speaker_prob = j.value("same_speaker_prob", c.same_speaker_prob);
        c.recording_s = j.value("recording_s", c.recording_s);
        c.max_utterance_s = j.value("max_utterance_s", c.max_utterance_s);
        c.edge_silence_s = j.value("edge_silence_s", c.edge_silence_s);
        c.min_segments_per_utterance = j.value("min_segments_per_utterance", c.min_segments_per_utterance);
        if (j.contains("token_mode")) c.token_mode = parse_token_mode(j["token_mode"].get<std::string>());
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("synth config: ") + e.what());
    }
    return c;
}

SyntheticCorpus synth_corpus(const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    SyntheticCorpus corpus;
    corpus.config = config;
    corpus.seed = seed;

    Rng rng(derive_seed(seed, 1));
    corpus.words = make_words(config, rng);
    corpus.speaker_signatures = make_signatures(config, rng);
    for (int s = 0; s < config.n_speakers; ++s) corpus.speaker_ids.push_back("spk" + std::to_string(s));

    // Two half-word patterns per word so that word onsets are visible.
    std::vector<std::vector<std::pair<RowVector, RowVector>>> patterns(corpus.words.size());
    for (std::size_t l = 0; l < corpus.words.size(); ++l) {
        for (std::size_t w = 0; w < corpus.words[l].size(); ++w) {
            RowVector a(config.token_dims), b(config.token_dims);
            for (int d = 0; d < config.token_dims; ++d) a(d) = config.token_scale * standard_normal(rng);
            for (int d = 0; d < config.token_dims; ++d) b(d) = config.token_scale * standard_normal(rng);
            patterns[l].emplace_back(std::move(a), std::move(b));
        }
    }

    std::vector<std::string> all_words;
    for (const auto& lang : corpus.words) all_words.insert(all_words.end(), lang.begin(), lang.end());
    corpus.vocab = build_vocab(all_words, config.token_mode);

    const int edge = frames_of(config.edge_silence_s);
    const int D = config.feature_dim();
    int recording = 0;
    int utterance_counter = 0;
    auto fill_split = [&](std::vector<Utterance>& out, int wanted, const std::string& split) {
        while (static_cast<int>(out.size()) < wanted) {
            Rng rec_rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(recording)));
            ++recording;
            const int lang =
                static_cast<int>(uniform_index(rec_rng, static_cast<std::uint64_t>(config.n_languages)));
            const auto& words = corpus.words[static_cast<std::size_t>(lang)];
            const auto raw = make_recording(config, static_cast<int>(words.size()), rec_rng);

            std::vector<SpeakerSegment> segs;
            for (const auto& r : raw) {
                SpeakerSegment s;
                s.speaker_id = corpus.speaker_ids[static_cast<std::size_t>(r.speaker)];
                s.start_s = seconds_of(r.start);
                s.end_s = seconds_of(r.end);
                s.language_id = lang;
                for (const auto& w : r.words) {
                    if (!s.transcript.empty()) s.transcript += ' ';
                    s.transcript += words[static_cast<std::size_t>(w.word)];
                }
                segs.push_back(std::move(s));
            }
            const auto grouped = group_segments(segs, config.max_utterance_s - 2 * edge * kShift);

            std::size_t raw_index = 0;
            for (const auto& g : grouped) {
                const std::size_t first = raw_index;
                raw_index += g.segments.size();
                if (static_cast<int>(g.segments.size()) < config.min_segments_per_utterance ||
                    static_cast<int>(out.size()) >= wanted) {
                    continue;
                }
                const int origin = raw[first].start - edge;
                const int total = raw[raw_index - 1].end - origin + edge;

                char id[64];
                std::snprintf(id, sizeof id, "%s_%04zu", split.c_str(), out.size());
                Utterance utt;
                utt.id = id;
                utt.language_id = lang;
                utt.source_offset_s = seconds_of(origin);
                utt.duration_s = seconds_of(total);
                utt.feature_file = "features/" + utt.id + ".scdf";

                Rng noise_rng(derive_seed(seed, 1'000'000 + static_cast<std::uint64_t>(utterance_counter++)));
                Matrix frames(total, D);
                for (Eigen::Index i = 0; i < frames.size(); ++i) {
                    frames.data()[i] = config.noise_std * standard_normal(noise_rng);
                }
                for (std::size_t k = first; k < raw_index; ++k) {
                    const auto& r = raw[k];
                    SpeakerSegment s = g.segments[k - first];
                    s.start_s = seconds_of(r.start - origin);
                    s.end_s = seconds_of(r.end - origin);
                    utt.segments.push_back(std::move(s));
                    const auto sig = corpus.speaker_signatures.row(r.speaker);
                    for (const auto& w : r.words) {
                        const auto& [pa, pb] = patterns[static_cast<std::size_t>(lang)][static_cast<std::size_t>(w.word)];
                        for (int f = 0; f < w.frames; ++f) {
                            const auto row = w.start - origin + f;
                            frames.block(row, 0, 1, config.token_dims) += f < w.frames / 2 ? pa : pb;
                            frames.block(row, config.token_dims, 1, config.speaker_dims) += sig;
                        }
                    }
                }
                corpus.features.emplace(utt.id, std::move(frames));
                out.push_back(std::move(utt));
            }
        }
    };
    fill_split(corpus.train, config.n_utterances, "train");
    fill_split(corpus.test, config.n_test_utterances, "test");
    return corpus;
}

void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
    write_file_atomic(path, vocab.to_json().dump(2) + "\n");
}

Vocabulary read_vocab(const std::filesystem::path& path) {
    try {
        return Vocabulary::from_json(Json::parse(read_file(path)));
    } catch (const Json::exception& e) {
        throw ValidationError("bad vocabulary file " + path.string() + ": " + e.what());
    }
}

void write_synthetic_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "features");
    for (const auto* split : {&corpus.train, &corpus.test}) {
        for (const auto& utt : *split) {
            write_features(dir / *utt.feature_file, corpus.features.at(utt.id));
        }
    }
    write_manifest(dir / "train.jsonl", corpus.train);
    write_manifest(dir / "test.jsonl", corpus.test);
    write_vocab(dir / "vocab.json", corpus.vocab);
    Json meta{{"seed", corpus.seed}, {"config", corpus.config.to_json()}, {"speakers", corpus.speaker_ids}};
    write_file_atomic(dir / "synth.json", meta.dump(2) + "\n");
}

Matrix load_utterance_features(const Utterance& utt, const std::filesystem::path& manifest_dir) {
    if (!utt.feature_file) {
        throw ValidationError("utterance '" + utt.id + "' has no feature_file");
    }
    return read_features(manifest_dir / *utt.feature_file);
}

} // namespace scdlab
