#pragma once

// Command implementations behind the `scdlab` binary. They are a library so
// tests can drive the pipeline in-process.

#include "scdlab/ctc.hpp"
#include "scdlab/io.hpp"
#include "scdlab/scoring.hpp"
#include "scdlab/training.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scdlab::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

// Record written next to every command's primary output.
struct RunManifest {
    std::string command;
    std::vector<std::string> args;
    std::optional<std::string> config_path;
    Json config = Json::object();
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;  // path -> sha256
    std::map<std::string, std::string> outputs; // path -> sha256

    void add_input(const fs::path& p);
    void add_output(const fs::path& p);
    Json to_json() const;
    void write(const fs::path& path) const;
};

// Flag, then SCDLAB_SEED, then the config value.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed);

Json read_json_file(const fs::path& path);

struct SynthOptions {
    fs::path config;
    std::optional<std::uint64_t> seed;
    fs::path out;
    std::vector<std::string> args;
};

struct TrainOptions {
    Stage stage = Stage::Scd;
    fs::path config;
    fs::path data;
    fs::path out;
    std::optional<fs::path> init;
    bool from_scratch = false;
    std::optional<std::string> freeze;
    std::optional<int> steps;
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> vocab;
    std::optional<fs::path> eval_data;
    int eval_every = 0;
    bool quiet = false;
    std::vector<std::string> args;
};

struct TrainOutcome {
    std::vector<StepResult> history;
    std::vector<std::pair<long, double>> eval; // (step, mean per-frame loss)
    fs::path checkpoint;
    fs::path log;
};

struct DecodeOptions {
    fs::path ckpt;
    fs::path data;
    fs::path out; // file for a single scale, directory for a sweep
    std::optional<double> st_scale;
    std::optional<std::string> sweep; // "a:b:step"
    std::optional<fs::path> dump_posteriors;
    double collar_s = kDefaultCollarSeconds;
    TimestampAnchor anchor = TimestampAnchor::Onset;
    std::vector<std::string> args;
};

struct SweepEntry {
    double lambda = 1.0;
    fs::path file;
    long st_win_frames = 0; // frames whose scaled argmax is <st>, summed over utterances
    long st_tokens = 0;
    GroupReport metrics;
};

struct DecodeOutcome {
    std::vector<SweepEntry> entries; // one per scale
};

struct ScoreOptions {
    fs::path refs;
    fs::path hyps;
    std::optional<fs::path> out;
    double collar_s = kDefaultCollarSeconds;
    GroupBy group_by = GroupBy::Pooled;
    TokenMode token_mode = TokenMode::Word;
    std::vector<std::string> args;
};

// "a:b:step" -> a, a+step, ... up to b inclusive.
std::vector<double> parse_sweep(const std::string& text);

void cmd_synth(const SynthOptions& opt, std::ostream& out);
TrainOutcome cmd_train(const TrainOptions& opt, std::ostream& out);
DecodeOutcome cmd_decode(const DecodeOptions& opt, std::ostream& out);
ScdReport cmd_score(const ScoreOptions& opt, std::ostream& out);

// Joins hypotheses to references by id; throws ValidationError listing orphans.
ScdReport score_files(std::span<const Utterance> refs, std::span<const Hypothesis> hyps, double collar_s,
                      GroupBy group_by, TokenMode mode);

// Parses argv and dispatches; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace scdlab::cli
