#pragma once

#include "scdlab/corpus.hpp"
#include "scdlab/io.hpp"
#include "scdlab/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace scdlab {

// Synthetic speaker-turn corpus. Each frame is the sum of a per-word pattern
// (token dims), a per-speaker bias signature (speaker dims), and Gaussian noise.
// Gaps between turns carry noise only.
struct SynthConfig {
    int n_speakers = 4;
    int n_languages = 2;
    int n_utterances = 150;     // training utterances
    int n_test_utterances = 30; // held-out utterances
    int words_per_language = 10;
    int token_dims = 16;
    int speaker_dims = 8;
    double token_scale = 1.0;
    double speaker_scale = 1.0;
    double noise_std = 0.3;
    int min_word_frames = 12;
    int max_word_frames = 22;
    int min_words_per_turn = 3;
    int max_words_per_turn = 8;
    double min_gap_s = 0.05;
    double max_gap_s = 0.35;
    double same_speaker_prob = 0.15; // chance the next turn keeps the speaker
    double recording_s = 60.0;       // length of each source recording before grouping
    double max_utterance_s = 10.0;   // group_segments cap
    double edge_silence_s = 0.2;     // leading/trailing silence added to each utterance
    int min_segments_per_utterance = 2;
    TokenMode token_mode = TokenMode::Word;

    int feature_dim() const { return token_dims + speaker_dims; }
    void validate() const;
    Json to_json() const;
    static SynthConfig from_json(const Json& j);
};

struct SyntheticCorpus {
    SynthConfig config;
    std::uint64_t seed = 0;
    Vocabulary vocab;
    std::vector<Utterance> train;
    std::vector<Utterance> test;
    std::map<std::string, Matrix> features; // by utterance id
    Matrix speaker_signatures;              // n_speakers x speaker_dims (scaled)
    std::vector<std::string> speaker_ids;
    std::vector<std::vector<std::string>> words; // per language
};

// Pure function of (config, seed).
SyntheticCorpus synth_corpus(const SynthConfig& config, std::uint64_t seed);

// Layout: train.jsonl, test.jsonl, vocab.json, synth.json, features/<id>.scdf.
void write_synthetic_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

Vocabulary read_vocab(const std::filesystem::path& path);
void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab);

// Resolves an utterance's feature_file against its manifest directory.
Matrix load_utterance_features(const Utterance& utt, const std::filesystem::path& manifest_dir);

} // namespace scdlab
