#include "oracles.hpp"

#include "scdlab/error.hpp"
#include "scdlab/features.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <doctest.h>

#include <cmath>
#include <complex>
#include <map>
#include <numbers>

using namespace scdlab;

namespace {

// Direct O(N^2) DFT log-mel with its own HTK filterbank, sharing nothing with the FFTW path.
Matrix oracle_logmel(const std::vector<double>& x, int sr, int window, int shift, int n_mels, double floor) {
    int n_fft = 1;
    while (n_fft < window) n_fft *= 2;
    const int bins = n_fft / 2 + 1;
    auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    const double top = mel(sr / 2.0);
    const int frames = static_cast<int>((x.size() - static_cast<std::size_t>(window)) / static_cast<std::size_t>(shift)) + 1;
    Matrix out(frames, n_mels);
    for (int t = 0; t < frames; ++t) {
        std::vector<double> power(static_cast<std::size_t>(bins));
        for (int k = 0; k < bins; ++k) {
            std::complex<double> acc = 0;
            for (int n = 0; n < window; ++n) {
                const double w = 0.5 * (1 - std::cos(2 * std::numbers::pi * n / window));
                acc += x[static_cast<std::size_t>(t * shift + n)] * w *
                       std::polar(1.0, -2 * std::numbers::pi * k * n / n_fft);
            }
            power[static_cast<std::size_t>(k)] = std::norm(acc);
        }
        for (int m = 0; m < n_mels; ++m) {
            const double lo = top * m / (n_mels + 1), mid = top * (m + 1) / (n_mels + 1), hi = top * (m + 2) / (n_mels + 1);
            double e = 0;
            for (int k = 0; k < bins; ++k) {
                const double f = mel(static_cast<double>(k) * sr / n_fft);
                double wt = 0;
                if (f > lo && f <= mid) wt = (f - lo) / (mid - lo);
                else if (f > mid && f < hi) wt = (hi - f) / (hi - mid);
                e += wt * power[static_cast<std::size_t>(k)];
            }
            out(t, m) = std::log(e + floor);
        }
    }
    return out;
}

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(n);
    for (auto& v : x) v = standard_normal(rng);
    return x;
}

double chi2_pvalue(const std::vector<double>& observed, const std::vector<double>& expected) {
    double stat = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
    }
    boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

} // namespace

TEST_CASE("logmel frame count: 1 s at 16 kHz gives 97 frames") {
    std::vector<double> x(16000, 0.0);
    const auto f = logmel(x, 16000);
    CHECK(f.num_frames() == 97);
    CHECK(f.dim() == 128);
    CHECK(f.frame_shift_s == 0.010);
}

TEST_CASE("logmel of silence is log(floor) everywhere") {
    std::vector<double> x(4000, 0.0);
    const auto f = logmel(x, 16000);
    CHECK((f.frames.array() == std::log(1e-10)).all());
}

TEST_CASE("logmel rejects short waveforms and low rates") {
    std::vector<double> x(100, 0.0);
    CHECK_THROWS_AS(logmel(x, 16000), ValidationError);
    std::vector<double> y(8000, 0.0);
    CHECK_THROWS_AS(logmel(y, 4000), ValidationError);
}

TEST_CASE("logmel matches a direct DFT oracle") {
    const auto x = noise(1600, 5);
    LogMelConfig cfg;
    cfg.n_mels = 40;
    const auto got = logmel(x, 16000, cfg);
    const auto want = oracle_logmel(x, 16000, 512, 160, 40, 1e-10);
    REQUIRE(got.frames.rows() == want.rows());
    CHECK((got.frames - want).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("a 1 kHz sine peaks in the mel bin whose centre is nearest 1 kHz") {
    const int sr = 16000;
    std::vector<double> x(static_cast<std::size_t>(sr / 2));
    for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::sin(2 * std::numbers::pi * 1000.0 * static_cast<double>(n) / sr);
    const auto f = logmel(x, sr);
    // analytic centres: equally spaced on the HTK mel axis
    const double top = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
    int nearest = 0;
    double best = 1e300;
    for (int m = 0; m < 128; ++m) {
        const double hz = 700.0 * (std::pow(10.0, top * (m + 1) / 129.0 / 2595.0) - 1.0);
        if (std::abs(hz - 1000.0) < best) {
            best = std::abs(hz - 1000.0);
            nearest = m;
        }
    }
    const auto centers = mel_center_frequencies(128, sr);
    CHECK(std::abs(centers[static_cast<std::size_t>(nearest)] - 1000.0) == doctest::Approx(best));
    for (Eigen::Index t = 0; t < f.num_frames(); ++t) {
        Eigen::Index arg;
        f.frames.row(t).maxCoeff(&arg);
        CHECK(arg == nearest);
    }
    // the oracle agrees on one frame too
    std::vector<double> head(x.begin(), x.begin() + 512);
    const auto o = oracle_logmel(head, sr, 512, 160, 128, 1e-10);
    Eigen::Index oarg;
    o.row(0).maxCoeff(&oarg);
    CHECK(oarg == nearest);
}

TEST_CASE("logmel is translation-covariant by whole shifts") {
    const auto x = noise(8000, 9);
    const int k = 3;
    std::vector<double> shifted(x.begin() + k * 160, x.end());
    const auto a = logmel(x, 16000);
    const auto b = logmel(shifted, 16000);
    for (Eigen::Index t = 0; t + k < a.num_frames() && t < b.num_frames(); ++t) {
        CHECK((a.frames.row(t + k) - b.frames.row(t)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("mvn with self statistics gives zero mean, unit variance") {
    Rng rng(2);
    FeatureMatrix f{testing::random_matrix(200, 6, rng, 3.0)};
    f.frames.array() += 5.0;
    const auto out = mvn(f, compute_stats(f));
    const RowVector mean = out.frames.colwise().mean();
    CHECK(mean.cwiseAbs().maxCoeff() < 1e-9);
    const RowVector var = (out.frames.rowwise() - mean).array().square().colwise().mean();
    CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("mvn of a constant input is all zeros") {
    for (double v : {4.2, -0.1, 1e3 / 7.0, 0.0}) {
        FeatureMatrix f{Matrix::Constant(10, 3, v)};
        const auto stats = compute_stats(f);
        CHECK((stats.std.array() == kStdFloor).all());
        CHECK(mvn(f, stats).frames.isZero(0.0));
    }
}

TEST_CASE("mvn is idempotent and invertible") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        FeatureMatrix f{testing::random_matrix(50, 7, rng, 2.0)};
        const auto stats = compute_stats(f);
        const auto once = mvn(f, stats);
        const auto twice = mvn(once, compute_stats(once));
        CHECK((once.frames - twice.frames).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((denormalize(once, stats).frames - f.frames).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("mvn rejects a dimension mismatch") {
    FeatureMatrix f{Matrix::Zero(4, 3)};
    NormStats s{RowVector::Zero(2), RowVector::Ones(2)};
    CHECK_THROWS_AS(mvn(f, s), ValidationError);
}

TEST_CASE("global stats pool frames across matrices") {
    std::vector<FeatureMatrix> fs{FeatureMatrix{Matrix::Constant(2, 1, 0.0)}, FeatureMatrix{Matrix::Constant(2, 1, 2.0)}};
    const auto s = compute_stats(fs);
    CHECK(s.mean(0) == doctest::Approx(1.0));
    CHECK(s.std(0) == doctest::Approx(1.0));
}

TEST_CASE("specaugment with no masks is the identity") {
    Rng rng(1);
    FeatureMatrix f{testing::random_matrix(30, 5, rng)};
    CHECK(specaugment(f, {}, 99).frames == f.frames);
}

TEST_CASE("one time mask sets exactly one contiguous block and nothing else") {
    Rng rng(1);
    FeatureMatrix f{testing::random_matrix(40, 6, rng)};
    SpecAugmentPolicy p;
    p.n_time_masks = 1;
    p.max_time_width_frames = 8;
    p.mask_value = -7.5;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto out = specaugment(f, p, seed);
        std::vector<int> rows;
        for (int t = 0; t < 40; ++t) {
            const bool masked = (out.frames.row(t).array() == -7.5).all();
            if (masked) rows.push_back(t);
            else CHECK(out.frames.row(t) == f.frames.row(t));
        }
        CHECK(rows.size() <= 8);
        for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i] == rows[i - 1] + 1);
    }
    CHECK(specaugment(f, p, 5).frames == specaugment(f, p, 5).frames);
}

TEST_CASE("frequency masks never touch cells outside their columns") {
    Rng rng(8);
    FeatureMatrix f{testing::random_matrix(20, 12, rng)};
    SpecAugmentPolicy p;
    p.n_freq_masks = 2;
    p.max_freq_width_bins = 3;
    p.mask_value = 123.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto out = specaugment(f, p, seed);
        for (int d = 0; d < 12; ++d) {
            if ((out.frames.col(d).array() == 123.0).all()) continue;
            CHECK(out.frames.col(d) == f.frames.col(d));
        }
    }
}

TEST_CASE("specaugment rejects masks as wide as the axis") {
    FeatureMatrix f{Matrix::Zero(10, 4)};
    SpecAugmentPolicy p;
    p.n_time_masks = 1;
    p.max_time_width_frames = 10;
    CHECK_THROWS_AS(specaugment(f, p, 1), ValidationError);
}

TEST_CASE("mask blocks are uniform over (width, start) by chi-squared") {
    const int extent = 30, max_w = 6, draws = 10000;
    std::map<std::pair<int, int>, int> counts;
    Rng rng(12345);
    for (int i = 0; i < draws; ++i) {
        const auto b = draw_mask_block(rng, extent, max_w);
        REQUIRE(b.width >= 0);
        REQUIRE(b.width <= max_w);
        REQUIRE(b.start >= 0);
        REQUIRE(b.start + b.width <= extent);
        ++counts[{b.width, b.start}];
    }
    std::vector<double> obs, exp;
    for (int w = 0; w <= max_w; ++w) {
        for (int s = 0; s <= extent - w; ++s) {
            obs.push_back(counts[{w, s}]);
            exp.push_back(draws / double(max_w + 1) / double(extent - w + 1));
        }
    }
    CHECK(chi2_pvalue(obs, exp) > 0.01);
}

TEST_CASE("specaugment time-mask starts are uniform by chi-squared") {
    // width fixed by bounding it to exactly 0..1 and keeping the width-1 draws
    const int T = 25;
    FeatureMatrix f{Matrix::Ones(T, 2)};
    SpecAugmentPolicy p;
    p.n_time_masks = 1;
    p.max_time_width_frames = 1;
    std::vector<double> obs(T, 0.0);
    int kept = 0;
    for (std::uint64_t seed = 0; seed < 40000 && kept < 10000; ++seed) {
        const auto out = specaugment(f, p, seed);
        for (int t = 0; t < T; ++t) {
            if (out.frames(t, 0) == 0.0) {
                obs[static_cast<std::size_t>(t)] += 1;
                ++kept;
            }
        }
    }
    REQUIRE(kept == 10000);
    std::vector<double> exp(T, kept / double(T));
    CHECK(chi2_pvalue(obs, exp) > 0.01);
}

TEST_CASE("SCDF round trip is float32 exact and rejects corrupt files") {
    Rng rng(3);
    Matrix m = testing::random_matrix(9, 4, rng);
    const auto bytes = encode_features(m);
    CHECK(bytes.size() == 16 + 9 * 4 * 4);
    CHECK(bytes.substr(0, 4) == "SCDF");
    const Matrix back = decode_features(bytes);
    CHECK(back == m.cast<float>().cast<double>());
    CHECK_THROWS_AS(decode_features(bytes.substr(0, bytes.size() - 1)), ValidationError);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_features(bad), ValidationError);
    // little-endian header
    CHECK(static_cast<unsigned char>(bytes[8]) == 9);
    CHECK(bytes[9] == 0);
}
