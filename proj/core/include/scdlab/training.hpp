#pragma once

#include "scdlab/bestrq.hpp"
#include "scdlab/corpus.hpp"
#include "scdlab/ctc.hpp"
#include "scdlab/encoder.hpp"
#include "scdlab/error.hpp"
#include "scdlab/features.hpp"
#include "scdlab/io.hpp"
#include "scdlab/params.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scdlab {

// Linear warm-up to `peak` at `warmup_steps`, then inverse-sqrt decay.
struct LrSchedule {
    double peak = 3e-4;
    int warmup_steps = 6000;

    void validate() const;
};

double lr_at(const LrSchedule& schedule, long step);

enum class Stage { BestRq, Asr, Scd };
Stage parse_stage(std::string_view name);
std::string_view to_string(Stage stage);

struct BestRqConfig {
    int proj_dim = 16;
    int codebook_size = 64;
    int span_frames = 40;
    double mask_prob = 0.01;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

struct TrainConfig {
    Stage stage = Stage::Scd;
    int steps = 100;
    int batch_size = 8;
    LrSchedule enc_schedule{3e-4, 6000};
    LrSchedule dec_schedule{5e-4, 2000};
    FreezeSpec trainable;
    std::uint64_t seed = 0;
    ModelConfig model;
    BestRqConfig bestrq;
    AdamConfig adam;
    SpecAugmentPolicy specaugment;
    NormMode norm = NormMode::Utterance;
    bool trailing_st = false;
    double grad_clip = 5.0; // global l2 norm; <= 0 disables
    int checkpoint_every = 0;
    int threads = 1;

    void validate() const;
    Json to_json() const;
    // Fields absent from `j` keep their defaults.
    static TrainConfig from_json(const Json& j);
};

// One prepared utterance: normalized features plus the stage target.
struct TrainingExample {
    std::string id;
    Matrix features;
    int language_id = 0;
    TokenSeq target; // empty for BEST-RQ
};

// Per-stage targets: none for bestrq, transcripts without <st> for asr, and
// <st>-augmented transcripts for scd.
TokenSeq stage_target(Stage stage, const Utterance& utt, const Vocabulary& vocab, bool trailing_st);

// Applies `stats` (global mode) or per-utterance statistics.
Matrix normalize_features(const Matrix& raw, NormMode mode, const NormStats* global_stats);

std::vector<TrainingExample> prepare_examples(std::span<const Utterance> utts, std::span<const Matrix> raw_features,
                                              const Vocabulary& vocab, const TrainConfig& cfg,
                                              const NormStats* global_stats);

struct Moments {
    Matrix m;
    Matrix v;
};

// Adaptive per-coordinate moments, held only for trainable tensors.
struct OptimizerState {
    std::map<std::string, Moments> moments;
    long step = 0;
};

struct TrainState {
    ParameterSet params;
    TrainableMask mask;
    OptimizerState enc_opt;
    OptimizerState dec_opt;
    std::optional<RandomQuantizer> quantizer;
    long step = 0;
};

// Decoder group: decoder projection and the BEST-RQ head. Everything else is the
// encoder group.
bool is_decoder_tensor(std::string_view name);

// Builds the trainable mask for `cfg` (including stage isolation: the BEST-RQ
// stage never trains the CTC decoder projection) and empty optimizer state.
TrainState make_train_state(ParameterSet params, const TrainConfig& cfg, std::optional<RandomQuantizer> quantizer);

struct StepResult {
    long step = 0;
    double loss = 0.0; // mean per-frame loss over used examples
    int used = 0;
    int skipped = 0; // unalignable or target-free examples
    double lr_enc = 0.0;
    double lr_dec = 0.0;
    double grad_norm = 0.0;
};

class TrainingDiverged : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

// Per-utterance loss and gradient for the configured stage. `sample_seed` seeds
// masking and augmentation. Returns false when the example is skipped.
bool example_gradient(const TrainState& state, const TrainConfig& cfg, const TrainingExample& ex,
                      std::uint64_t sample_seed, ParameterSet& grads, double& loss);

// Computes gradients for the batch (optionally across threads, reduced in batch
// order), clips, and applies bias-corrected adaptive updates with separate
// schedules for the encoder and decoder groups. Untrainable tensors are not
// touched. Throws TrainingDiverged on a non-finite loss or gradient.
StepResult train_step(TrainState& state, std::span<const TrainingExample* const> batch, const TrainConfig& cfg);

// Seeded reshuffle per epoch; batches are consecutive slices of the order.
class BatchSampler {
public:
    BatchSampler(std::size_t n_examples, int batch_size, std::uint64_t seed);
    std::vector<std::size_t> next();

private:
    void reshuffle();

    std::size_t n_;
    int batch_size_;
    std::uint64_t seed_;
    long epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

struct TrainHooks {
    std::function<void(const StepResult&)> on_step;
    std::function<void(const TrainState&)> on_checkpoint;
    // Return true to stop after this step.
    std::function<bool(const StepResult&)> should_stop;
};

std::vector<StepResult> run_training(TrainState& state, std::span<const TrainingExample> data, const TrainConfig& cfg,
                                     const TrainHooks& hooks = {});

// ---- checkpoints ----

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg, const Vocabulary* vocab,
                           const NormStats* global_stats);

ModelConfig checkpoint_model_config(const Checkpoint& ckpt);
std::optional<Vocabulary> checkpoint_vocab(const Checkpoint& ckpt);
std::optional<NormStats> checkpoint_norm_stats(const Checkpoint& ckpt);
NormMode checkpoint_norm_mode(const Checkpoint& ckpt);

// Encoder-side tensors (feature encoder, input projection, layers) copied from
// the checkpoint; the decoder projection is freshly initialized for cfg.vocab_size
// from cfg.seed. Throws ValidationError listing every incompatible tensor.
ParameterSet warm_start_scd(const Checkpoint& pretrained, const ModelConfig& cfg);

// Model posteriors for inference.
LogPosteriorMatrix compute_posteriors(const ParameterSet& params, const ModelConfig& cfg, const Matrix& features,
                                      int language_id);

// First 1-based step at which the trailing mean of `window` losses is <= threshold.
std::optional<long> steps_to_threshold(std::span<const StepResult> history, double threshold, int window);

std::string training_log_line(const StepResult& r);

} // namespace scdlab
