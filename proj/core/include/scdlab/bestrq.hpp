#pragma once

#include "scdlab/encoder.hpp"
#include "scdlab/linalg.hpp"
#include "scdlab/params.hpp"

#include <cstdint>
#include <vector>

namespace scdlab {

// Frozen random-projection quantizer. Values are rounded to float32 at
// construction so that a checkpoint round trip is lossless.
struct RandomQuantizer {
    Matrix projection; // input_dim x proj_dim
    Matrix codebook;   // codebook_size x proj_dim, rows l2-normalized
    std::uint64_t seed = 0;

    int input_dim() const { return static_cast<int>(projection.rows()); }
    int codebook_size() const { return static_cast<int>(codebook.rows()); }
};

RandomQuantizer make_quantizer(int input_dim, int proj_dim, int codebook_size, std::uint64_t seed);

// Nearest codebook row (squared l2) to each projected frame; ties go to the lowest index.
std::vector<int> quantize(const RandomQuantizer& q, const Matrix& features);

inline constexpr std::string_view kQuantizerProjection = "quantizer.projection";
inline constexpr std::string_view kQuantizerCodebook = "quantizer.codebook";
inline constexpr std::string_view kBestRqHeadPrefix = "bestrq_head.";

// Stores the quantizer as frozen tensors in a checkpoint parameter set.
void store_quantizer(ParameterSet& params, const RandomQuantizer& q);
RandomQuantizer load_quantizer(const ParameterSet& params);

struct MaskSpec {
    std::vector<std::uint8_t> mask; // 1 = masked
    int span_frames = 1;
    double mask_prob = 0.0;

    int count() const;
};

// Every frame starts a span with probability mask_prob; spans are unioned and
// truncated at T.
MaskSpec sample_mask(int frames, int span_frames, double mask_prob, std::uint64_t seed);

// A downsampled frame is masked if any of its source frames is.
std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& mask, int out_frames);
// Label of a downsampled frame is the label of its first source frame.
std::vector<int> downsample_labels(const std::vector<int>& labels, int out_frames);

// Masked input rows replaced with zeros.
Matrix apply_mask(const Matrix& features, const std::vector<std::uint8_t>& mask);

struct MaskedPredictionLoss {
    double nll = 0.0;
    Matrix dlogp; // d nll / d logp
    int targets = 0;
};

// Mean cross-entropy over masked frames only. Throws "no prediction targets"
// when nothing is masked.
MaskedPredictionLoss masked_prediction_loss(const Matrix& logp, const std::vector<int>& labels,
                                            const std::vector<std::uint8_t>& mask);

void add_bestrq_head(ParameterSet& params, int codebook_size, int model_dim, std::uint64_t seed);

struct BestRqStepResult {
    double nll = 0.0;
    int targets = 0;
};

// One masked-prediction pass on a single utterance: quantizes the clean
// features, zero-fills the masked frames, runs the encoder and the K-way head,
// and accumulates parameter gradients of the mean masked cross-entropy.
BestRqStepResult bestrq_step(const ParameterSet& params, const ModelConfig& cfg, const RandomQuantizer& q,
                             const Matrix& features, int language_id, const MaskSpec& mask, ParameterSet& grads);

} // namespace scdlab
