#include "oracles.hpp"

#include "scdlab/bestrq.hpp"
#include "scdlab/encoder.hpp"
#include "scdlab/error.hpp"

#include <doctest.h>

#include <cmath>

using namespace scdlab;

namespace {

int nn_oracle(const RandomQuantizer& q, const RowVector& frame) {
    const RowVector z = frame * q.projection;
    int best = 0;
    double best_d = INFINITY;
    for (int k = 0; k < q.codebook_size(); ++k) {
        double d = 0;
        for (Eigen::Index j = 0; j < z.size(); ++j) d += (z(j) - q.codebook(k, j)) * (z(j) - q.codebook(k, j));
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

ModelConfig tiny() {
    ModelConfig c;
    c.input_dim = 6;
    c.model_dim = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ff_dim = 8;
    c.chunk_frames = 4;
    c.vocab_size = 5;
    c.conv1_channels = 2;
    c.conv2_channels = 2;
    c.seed = 3;
    return c;
}

} // namespace

TEST_CASE("quantizer construction") {
    const auto q = make_quantizer(6, 4, 16, 11);
    CHECK(q.projection.rows() == 6);
    CHECK(q.projection.cols() == 4);
    CHECK(q.codebook.rows() == 16);
    for (int k = 0; k < 16; ++k) CHECK(q.codebook.row(k).norm() == doctest::Approx(1.0).epsilon(1e-6));
    for (int a = 0; a < 16; ++a)
        for (int b = a + 1; b < 16; ++b) CHECK(q.codebook.row(a) != q.codebook.row(b));
    Matrix p = q.projection, c = q.codebook;
    round_to_float(p);
    round_to_float(c);
    CHECK(p == q.projection);
    CHECK(c == q.codebook);
    const auto q2 = make_quantizer(6, 4, 16, 11);
    CHECK(q2.projection == q.projection);
    CHECK(q2.codebook == q.codebook);
}

TEST_CASE("single-entry codebook labels everything 0") {
    Rng rng(1);
    const auto q = make_quantizer(5, 3, 1, 2);
    for (int l : quantize(q, testing::random_matrix(50, 5, rng))) CHECK(l == 0);
}

TEST_CASE("a frame projecting onto codebook row 3 gets label 3") {
    // square, invertible projection: solve for the frame that lands on row 3
    const auto q = make_quantizer(4, 4, 8, 5);
    const RowVector target = q.codebook.row(3);
    const RowVector frame = q.projection.transpose().fullPivLu().solve(target.transpose()).transpose();
    CHECK(((frame * q.projection) - target).norm() < 1e-12);
    CHECK(quantize(q, frame)[0] == 3);
}

TEST_CASE("quantize agrees with brute-force nearest neighbour") {
    Rng rng(2);
    const auto q = make_quantizer(12, 8, 16, 7);
    const Matrix x = testing::random_matrix(2000, 12, rng);
    const auto labels = quantize(q, x);
    for (Eigen::Index t = 0; t < x.rows(); ++t) CHECK(labels[static_cast<std::size_t>(t)] == nn_oracle(q, x.row(t)));
    CHECK_THROWS_AS(quantize(q, testing::random_matrix(3, 11, rng)), ValidationError);
}

TEST_CASE("quantizer survives a checkpoint parameter set") {
    const auto q = make_quantizer(6, 4, 16, 11);
    ParameterSet p;
    store_quantizer(p, q);
    CHECK(p.entry(std::string(kQuantizerCodebook)).frozen);
    const auto back = load_quantizer(decode_checkpoint(encode_checkpoint(Checkpoint{p, Json::object()})).params);
    CHECK(back.projection == q.projection);
    CHECK(back.codebook == q.codebook);
}

TEST_CASE("mask boundaries") {
    CHECK(sample_mask(50, 4, 0.0, 1).count() == 0);
    const auto all = sample_mask(50, 50, 1.0, 1);
    CHECK(all.count() == 50);
    const auto one = sample_mask(10, 3, 1.0, 9);
    CHECK(one.count() == 10);
    CHECK(sample_mask(40, 5, 0.1, 3).mask == sample_mask(40, 5, 0.1, 3).mask);
}

TEST_CASE("masked spans have the configured length unless truncated") {
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        const auto m = sample_mask(60, 5, 0.02, uniform_index(rng, 1u << 30)).mask;
        int run = 0;
        for (std::size_t t = 0; t <= m.size(); ++t) {
            if (t < m.size() && m[t]) {
                ++run;
                continue;
            }
            if (run > 0 && t < m.size()) CHECK(run >= 5);
            run = 0;
        }
    }
}

TEST_CASE("masked fraction matches the union-coverage formula") {
    const double p = 0.05;
    const int span = 4, T = 100, draws = 10000;
    long masked = 0, frames = 0;
    for (int i = 0; i < draws; ++i) {
        const auto m = sample_mask(T, span, p, static_cast<std::uint64_t>(i) * 7919 + 1).mask;
        for (int t = span - 1; t < T; ++t) {
            masked += m[static_cast<std::size_t>(t)];
            ++frames;
        }
    }
    const double want = 1.0 - std::pow(1.0 - p, span);
    CHECK(std::abs(static_cast<double>(masked) / frames - want) < 0.10 * want);
}

TEST_CASE("downsampled mask and labels") {
    const std::vector<std::uint8_t> m{0, 0, 0, 1, 0, 0, 0, 0, 1};
    CHECK(downsample_mask(m, 3) == std::vector<std::uint8_t>{1, 0, 1});
    const std::vector<int> labels{5, 6, 7, 8, 9, 1, 2, 3, 4};
    CHECK(downsample_labels(labels, 3) == std::vector<int>{5, 9, 4});
}

TEST_CASE("apply_mask zero-fills masked rows only") {
    Rng rng(5);
    const Matrix x = testing::random_matrix(5, 3, rng);
    const std::vector<std::uint8_t> m{0, 1, 0, 0, 1};
    const Matrix y = apply_mask(x, m);
    CHECK(y.row(1).isZero(0.0));
    CHECK(y.row(4).isZero(0.0));
    CHECK(y.row(0) == x.row(0));
    CHECK(y.row(3) == x.row(3));
}

TEST_CASE("masked prediction loss values") {
    const int K = 8;
    const Matrix uniform = Matrix::Constant(4, K, -std::log(double(K)));
    const std::vector<int> labels{1, 2, 3, 4};
    const std::vector<std::uint8_t> mask{1, 0, 1, 0};
    const auto u = masked_prediction_loss(uniform, labels, mask);
    CHECK(u.nll == doctest::Approx(std::log(double(K))));
    CHECK(u.targets == 2);
    CHECK(u.dlogp.row(1).isZero(0.0));
    CHECK(u.dlogp.row(3).isZero(0.0));

    Matrix onehot = Matrix::Constant(4, K, -1e3);
    for (int t = 0; t < 4; ++t) onehot(t, labels[static_cast<std::size_t>(t)]) = 0.0;
    CHECK(masked_prediction_loss(onehot, labels, mask).nll <= 1e-6);

    const std::vector<std::uint8_t> none(4, 0);
    CHECK_THROWS_WITH_AS(masked_prediction_loss(uniform, labels, none), "no prediction targets", ValidationError);
}

TEST_CASE("bestrq step gradients on the head and the encoder") {
    const auto cfg = tiny();
    auto params = init_parameters(cfg);
    params.erase_prefix(kDecoderPrefix);
    add_bestrq_head(params, 16, cfg.model_dim, 4);
    const auto q = make_quantizer(cfg.input_dim, 4, 16, 8);
    store_quantizer(params, q);

    Rng rng(6);
    const Matrix x = testing::random_matrix(24, cfg.input_dim, rng);
    const auto mask = sample_mask(24, 3, 0.2, 12);
    REQUIRE(mask.count() > 0);
    auto grads = params.zeros_like();
    const auto r = bestrq_step(params, cfg, q, x, 0, mask, grads);
    CHECK(r.targets > 0);
    CHECK(std::isfinite(r.nll));

    auto loss = [&] {
        auto scratch = params.zeros_like();
        return bestrq_step(params, cfg, q, x, 0, mask, scratch).nll;
    };
    for (const char* name : {"bestrq_head.weight", "bestrq_head.bias"}) {
        const auto g = testing::check_gradient(params.at(name), grads.at(name), loss, 100, rng);
        CHECK(g.max_rel < 1e-4);
    }
    CHECK(testing::check_gradient(params.at("layers.0.ff.w1"), grads.at("layers.0.ff.w1"), loss, 30, rng).max_rel <
          1e-4);
    // the quantizer is not a parameter
    CHECK(grads.at(std::string(kQuantizerProjection)).isZero(0.0));
    CHECK(grads.at(std::string(kQuantizerCodebook)).isZero(0.0));
}

TEST_CASE("bestrq step refuses an empty mask") {
    const auto cfg = tiny();
    auto params = init_parameters(cfg);
    add_bestrq_head(params, 4, cfg.model_dim, 4);
    const auto q = make_quantizer(cfg.input_dim, 4, 4, 8);
    Rng rng(7);
    auto grads = params.zeros_like();
    CHECK_THROWS_WITH_AS(bestrq_step(params, cfg, q, testing::random_matrix(16, 6, rng), 0, sample_mask(16, 2, 0.0, 1), grads),
                         "no prediction targets", ValidationError);
}
