#include "scdlab/ctc.hpp"
#include "scdlab/encoder.hpp"
#include "scdlab/features.hpp"
#include "scdlab/random.hpp"

#include <benchmark/benchmark.h>

#include <cmath>

using namespace scdlab;

namespace {

Matrix random_log_posteriors(int T, int V, Rng& rng) {
    Matrix m(T, V);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
    for (int t = 0; t < T; ++t) {
        const double lse = std::log(m.row(t).array().exp().sum());
        m.row(t).array() -= lse;
    }
    return m;
}

ModelConfig desk_model() {
    ModelConfig c;
    c.input_dim = 24;
    c.n_languages = 2;
    c.model_dim = 48;
    c.n_layers = 4;
    c.n_heads = 4;
    c.ff_dim = 96;
    c.chunk_frames = 128;
    c.vocab_size = 23;
    c.conv1_channels = 8;
    c.conv2_channels = 8;
    c.seed = 1;
    return c;
}

void BM_CtcLoss(benchmark::State& state) {
    const int T = static_cast<int>(state.range(0));
    Rng rng(1);
    const Matrix lp = random_log_posteriors(T, 32, rng);
    TokenSeq target;
    for (int i = 0; i < T / 4; ++i) target.push_back(1 + static_cast<int>(uniform_index(rng, 31)));
    for (auto _ : state) benchmark::DoNotOptimize(ctc_loss(lp, target, 0).nll);
    state.SetItemsProcessed(state.iterations() * T);
}
BENCHMARK(BM_CtcLoss)->Arg(250)->Arg(1000);

void BM_GreedyDecode(benchmark::State& state) {
    Rng rng(2);
    const Vocabulary vocab = build_vocab(std::vector<std::string>{"a b c d e f g h"}, TokenMode::Word);
    const LogPosteriorMatrix post{random_log_posteriors(1000, static_cast<int>(vocab.size()), rng), 0.04};
    for (auto _ : state) benchmark::DoNotOptimize(ctc_greedy_decode(post, vocab, DecodeConfig{4.0}).tokens.size());
}
BENCHMARK(BM_GreedyDecode);

void BM_EncoderForward(benchmark::State& state) {
    const auto cfg = desk_model();
    const auto params = init_parameters(cfg);
    Rng rng(3);
    Matrix x(static_cast<Eigen::Index>(state.range(0)), cfg.input_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
    for (auto _ : state) benchmark::DoNotOptimize(decoder_projection(params, encode(params, cfg, x, 0).hidden).sum());
}
BENCHMARK(BM_EncoderForward)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_LogMel(benchmark::State& state) {
    Rng rng(4);
    std::vector<double> wav(16000 * 10);
    for (auto& s : wav) s = 0.1 * standard_normal(rng);
    for (auto _ : state) benchmark::DoNotOptimize(logmel(wav, 16000).frames.sum());
}
BENCHMARK(BM_LogMel)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
