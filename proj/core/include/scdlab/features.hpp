#pragma once

#include "scdlab/linalg.hpp"
#include "scdlab/random.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scdlab {

inline constexpr double kDefaultFrameShiftSeconds = 0.010;

struct FeatureMatrix {
    Matrix frames; // T x D
    double frame_shift_s = kDefaultFrameShiftSeconds;

    Eigen::Index num_frames() const { return frames.rows(); }
    Eigen::Index dim() const { return frames.cols(); }
};

// Throws ValidationError if T < 1 or any value is non-finite.
void validate_features(const FeatureMatrix& f);

// ---- log-mel frontend -------------------------------------------------------

struct LogMelConfig {
    double window_s = 0.032;
    double shift_s = 0.010;
    int n_mels = 128;
    double log_floor = 1e-10;
};

double hz_to_mel(double hz); // HTK: 2595 log10(1 + f/700)
double mel_to_hz(double mel);

// Smallest power of two >= n.
int next_pow2(int n);

// Centre frequencies (Hz) of the n_mels triangular filters spanning [0, sr/2].
std::vector<double> mel_center_frequencies(int n_mels, int sample_rate);

// n_mels x (n_fft/2 + 1) triangular weights on the power spectrum bins.
Matrix mel_filterbank(int n_mels, int n_fft, int sample_rate);

// Periodic Hann window of `length` samples.
std::vector<double> hann_window(int length);

// Frames: floor((N - window)/shift) + 1; values log(mel energy + floor).
FeatureMatrix logmel(std::span<const double> waveform, int sample_rate, const LogMelConfig& cfg = {});

// ---- normalization ----------------------------------------------------------

inline constexpr double kStdFloor = 1e-5;

struct NormStats {
    RowVector mean;
    RowVector std; // every entry >= floor
};

NormStats compute_stats(const FeatureMatrix& f, double std_floor = kStdFloor);
// Pools frames from several matrices (global statistics).
NormStats compute_stats(std::span<const FeatureMatrix> fs, double std_floor = kStdFloor);

FeatureMatrix mvn(const FeatureMatrix& f, const NormStats& stats);
// Inverse of mvn for the same stats.
FeatureMatrix denormalize(const FeatureMatrix& f, const NormStats& stats);

enum class NormMode { Utterance, Global, None };
NormMode parse_norm_mode(std::string_view name);
std::string_view to_string(NormMode mode);

// ---- SpecAugment ------------------------------------------------------------

struct SpecAugmentPolicy {
    int n_time_masks = 0;
    int max_time_width_frames = 0;
    int n_freq_masks = 0;
    int max_freq_width_bins = 0;
    double mask_value = 0.0;
};

struct MaskBlock {
    int start = 0;
    int width = 0;
};

// Width uniform in [0, max_width], then start uniform in [0, extent - width].
MaskBlock draw_mask_block(Rng& rng, int extent, int max_width);

FeatureMatrix specaugment(const FeatureMatrix& f, const SpecAugmentPolicy& policy, std::uint64_t seed);

// ---- SCDF binary container --------------------------------------------------
// "SCDF", u32 version, u32 T, u32 D, then T*D little-endian float32, row-major.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

std::string encode_features(const Matrix& frames);
Matrix decode_features(std::string_view bytes);
void write_features(const std::filesystem::path& path, const Matrix& frames);
Matrix read_features(const std::filesystem::path& path);

} // namespace scdlab
