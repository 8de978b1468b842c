#include "scdlab/features.hpp"

#include "scdlab/error.hpp"
#include "scdlab/io.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

namespace scdlab {

void validate_features(const FeatureMatrix& f) {
    if (f.frames.rows() < 1 || f.frames.cols() < 1) {
        throw ValidationError("feature matrix must have at least one frame and one dimension");
    }
    if (!f.frames.allFinite()) {
        throw ValidationError("feature matrix contains non-finite values");
    }
}

double hz_to_mel(double hz) {
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

std::vector<double> mel_center_frequencies(int n_mels, int sample_rate) {
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> centers(static_cast<std::size_t>(n_mels));
    for (int m = 0; m < n_mels; ++m) {
        centers[static_cast<std::size_t>(m)] = mel_to_hz(top * (m + 1) / (n_mels + 1));
    }
    return centers;
}

Matrix mel_filterbank(int n_mels, int n_fft, int sample_rate) {
    if (n_mels < 1 || n_fft < 2) {
        throw ValidationError("mel_filterbank: need n_mels >= 1 and n_fft >= 2");
    }
    const int n_bins = n_fft / 2 + 1;
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
    for (int i = 0; i < n_mels + 2; ++i) {
        edges[static_cast<std::size_t>(i)] = top * i / (n_mels + 1);
    }
    Matrix fb = Matrix::Zero(n_mels, n_bins);
    for (int k = 0; k < n_bins; ++k) {
        const double mel = hz_to_mel(static_cast<double>(k) * sample_rate / n_fft);
        for (int m = 0; m < n_mels; ++m) {
            const double lo = edges[static_cast<std::size_t>(m)];
            const double mid = edges[static_cast<std::size_t>(m + 1)];
            const double hi = edges[static_cast<std::size_t>(m + 2)];
            if (mel > lo && mel < hi) {
                fb(m, k) = mel <= mid ? (mel - lo) / (mid - lo) : (hi - mel) / (hi - mid);
            }
        }
    }
    return fb;
}

std::vector<double> hann_window(int length) {
    std::vector<double> w(static_cast<std::size_t>(length));
    for (int n = 0; n < length; ++n) {
        w[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
    }
    return w;
}

namespace {

// FFTW planning is not thread-safe; execution with new-array functions is.
std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

struct PlanDeleter {
    void operator()(fftw_plan_s* p) const {
        std::lock_guard lock(fftw_plan_mutex());
        fftw_destroy_plan(p);
    }
};

} // namespace

FeatureMatrix logmel(std::span<const double> waveform, int sample_rate, const LogMelConfig& cfg) {
    if (sample_rate < 8000) {
        throw ValidationError("logmel: sample rate must be at least 8 kHz");
    }
    const int window = static_cast<int>(std::lround(cfg.window_s * sample_rate));
    const int shift = static_cast<int>(std::lround(cfg.shift_s * sample_rate));
    if (window < 2 || shift < 1) {
        throw ValidationError("logmel: window and shift must cover at least one sample");
    }
    if (waveform.size() < static_cast<std::size_t>(window)) {
        throw ValidationError("logmel: waveform shorter than one window");
    }
    const int n_fft = next_pow2(window);
    const int n_bins = n_fft / 2 + 1;
    const auto n_frames = static_cast<Eigen::Index>((waveform.size() - static_cast<std::size_t>(window)) / static_cast<std::size_t>(shift) + 1);

    const Matrix fb = mel_filterbank(cfg.n_mels, n_fft, sample_rate);
    const auto win = hann_window(window);

    std::unique_ptr<double, decltype(&fftw_free)> in(fftw_alloc_real(static_cast<std::size_t>(n_fft)), fftw_free);
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> out(
        fftw_alloc_complex(static_cast<std::size_t>(n_bins)), fftw_free);
    std::unique_ptr<fftw_plan_s, PlanDeleter> plan;
    {
        std::lock_guard lock(fftw_plan_mutex());
        plan.reset(fftw_plan_dft_r2c_1d(n_fft, in.get(), out.get(), FFTW_ESTIMATE));
    }

    FeatureMatrix result;
    result.frame_shift_s = cfg.shift_s;
    result.frames.resize(n_frames, cfg.n_mels);
    Vector power(n_bins);
    for (Eigen::Index t = 0; t < n_frames; ++t) {
        const std::size_t offset = static_cast<std::size_t>(t) * static_cast<std::size_t>(shift);
        for (int n = 0; n < n_fft; ++n) {
            in.get()[n] = n < window ? waveform[offset + static_cast<std::size_t>(n)] * win[static_cast<std::size_t>(n)] : 0.0;
        }
        fftw_execute(plan.get());
        for (int k = 0; k < n_bins; ++k) {
            const double re = out.get()[k][0];
            const double im = out.get()[k][1];
            power(k) = re * re + im * im;
        }
        const Vector energy = fb * power;
        for (int m = 0; m < cfg.n_mels; ++m) {
            result.frames(t, m) = std::log(energy(m) + cfg.log_floor);
        }
    }
    return result;
}

NormStats compute_stats(std::span<const FeatureMatrix> fs, double std_floor) {
    if (fs.empty()) {
        throw ValidationError("compute_stats: no feature matrices");
    }
    const auto dim = fs.front().dim();
    RowVector sum = RowVector::Zero(dim);
    Eigen::Index count = 0;
    for (const auto& f : fs) {
        if (f.dim() != dim) {
            throw ValidationError("compute_stats: dimension mismatch across matrices");
        }
        sum += f.frames.colwise().sum();
        count += f.num_frames();
    }
    if (count == 0) {
        throw ValidationError("compute_stats: no frames");
    }
    NormStats stats;
    stats.mean = sum / static_cast<double>(count);
    // second pass removes the rounding left in the mean, so constant columns centre to exactly 0
    RowVector resid = RowVector::Zero(dim);
    for (const auto& f : fs) {
        resid += (f.frames.rowwise() - stats.mean).colwise().sum();
    }
    stats.mean += resid / static_cast<double>(count);
    RowVector sq = RowVector::Zero(dim);
    for (const auto& f : fs) {
        sq += (f.frames.rowwise() - stats.mean).array().square().matrix().colwise().sum();
    }
    stats.std = (sq / static_cast<double>(count)).array().sqrt().max(std_floor).matrix();
    return stats;
}

NormStats compute_stats(const FeatureMatrix& f, double std_floor) {
    return compute_stats(std::span<const FeatureMatrix>(&f, 1), std_floor);
}

FeatureMatrix mvn(const FeatureMatrix& f, const NormStats& stats) {
    if (stats.mean.size() != f.dim() || stats.std.size() != f.dim()) {
        throw ValidationError("mvn: stats dimension " + std::to_string(stats.mean.size()) +
                              " does not match feature dimension " + std::to_string(f.dim()));
    }
    FeatureMatrix out;
    out.frame_shift_s = f.frame_shift_s;
    out.frames = ((f.frames.rowwise() - stats.mean).array().rowwise() / stats.std.array()).matrix();
    return out;
}

FeatureMatrix denormalize(const FeatureMatrix& f, const NormStats& stats) {
    if (stats.mean.size() != f.dim() || stats.std.size() != f.dim()) {
        throw ValidationError("denormalize: stats dimension mismatch");
    }
    FeatureMatrix out;
    out.frame_shift_s = f.frame_shift_s;
    out.frames = ((f.frames.array().rowwise() * stats.std.array()).matrix().rowwise() + stats.mean);
    return out;
}

NormMode parse_norm_mode(std::string_view name) {
    if (name == "utterance") return NormMode::Utterance;
    if (name == "global") return NormMode::Global;
    if (name == "none") return NormMode::None;
    throw ValidationError("unknown normalization mode '" + std::string(name) + "'");
}

std::string_view to_string(NormMode mode) {
    switch (mode) {
    case NormMode::Utterance: return "utterance";
    case NormMode::Global: return "global";
    case NormMode::None: return "none";
    }
    return "none";
}

MaskBlock draw_mask_block(Rng& rng, int extent, int max_width) {
    MaskBlock b;
    b.width = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_width) + 1));
    b.start = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(extent - b.width) + 1));
    return b;
}

FeatureMatrix specaugment(const FeatureMatrix& f, const SpecAugmentPolicy& policy, std::uint64_t seed) {
    if (policy.n_time_masks < 0 || policy.n_freq_masks < 0 || policy.max_time_width_frames < 0 ||
        policy.max_freq_width_bins < 0) {
        throw ValidationError("specaugment: counts and widths must be non-negative");
    }
    const auto T = static_cast<int>(f.num_frames());
    const auto D = static_cast<int>(f.dim());
    if ((policy.n_time_masks > 0 && policy.max_time_width_frames >= T) ||
        (policy.n_freq_masks > 0 && policy.max_freq_width_bins >= D)) {
        throw ValidationError("specaugment: mask width must be smaller than the masked axis");
    }
    FeatureMatrix out = f;
    Rng rng(seed);
    for (int i = 0; i < policy.n_time_masks; ++i) {
        auto b = draw_mask_block(rng, T, policy.max_time_width_frames);
        out.frames.middleRows(b.start, b.width).setConstant(policy.mask_value);
    }
    for (int i = 0; i < policy.n_freq_masks; ++i) {
        auto b = draw_mask_block(rng, D, policy.max_freq_width_bins);
        out.frames.middleCols(b.start, b.width).setConstant(policy.mask_value);
    }
    return out;
}

std::string encode_features(const Matrix& frames) {
    std::string out;
    out.reserve(16 + static_cast<std::size_t>(frames.size()) * 4);
    out.append("SCDF");
    put_u32(out, kFeatureFileVersion);
    put_u32(out, static_cast<std::uint32_t>(frames.rows()));
    put_u32(out, static_cast<std::uint32_t>(frames.cols()));
    for (Eigen::Index t = 0; t < frames.rows(); ++t) {
        for (Eigen::Index d = 0; d < frames.cols(); ++d) {
            put_f32(out, static_cast<float>(frames(t, d)));
        }
    }
    return out;
}

Matrix decode_features(std::string_view bytes) {
    if (bytes.size() < 16 || bytes.substr(0, 4) != "SCDF") {
        throw ValidationError("not an SCDF feature file");
    }
    const auto version = get_u32(bytes, 4);
    if (version != kFeatureFileVersion) {
        throw ValidationError("unsupported SCDF version " + std::to_string(version));
    }
    const auto rows = get_u32(bytes, 8);
    const auto cols = get_u32(bytes, 12);
    const std::size_t expected = 16 + static_cast<std::size_t>(rows) * cols * 4;
    if (bytes.size() != expected) {
        throw ValidationError("SCDF payload size mismatch");
    }
    Matrix m(rows, cols);
    std::size_t off = 16;
    for (std::uint32_t t = 0; t < rows; ++t) {
        for (std::uint32_t d = 0; d < cols; ++d, off += 4) {
            m(t, d) = get_f32(bytes, off);
        }
    }
    return m;
}

void write_features(const std::filesystem::path& path, const Matrix& frames) {
    write_file_atomic(path, encode_features(frames));
}

Matrix read_features(const std::filesystem::path& path) {
    return decode_features(read_file(path));
}

} // namespace scdlab
