#pragma once

// Differentiable building blocks with hand-derived backward passes. Every
// backward accumulates (+=) into the parameter gradients it is given and
// returns the gradient with respect to its input.

#include "scdlab/linalg.hpp"

#include <vector>

namespace scdlab::layers {

// ---- elementwise ----

Matrix silu(const Matrix& x);
// d silu(x)/dx, elementwise, times dy.
Matrix silu_backward(const Matrix& x, const Matrix& dy);

// ---- linear: y = x W^T + b, W is out x in, b is 1 x out ----

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b);
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db);

// ---- row-wise layer normalization ----

inline constexpr double kLayerNormEps = 1e-6;

struct LayerNormCache {
    Matrix normalized; // (x - mean) / sigma
    Vector inv_sigma;
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache);
Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& gain, const Matrix& dy, Matrix& dgain,
                           Matrix& dbias);

// ---- row-wise log-softmax ----

Matrix log_softmax(const Matrix& logits);
// Given dL/d(logp) and logp, returns dL/d(logits).
Matrix log_softmax_backward(const Matrix& logp, const Matrix& dlogp);

// ---- 3x3 convolution, stride 2 in both axes, zero padding 1 ----
// A feature map stores `time * freq` positions as rows (time-major) and
// channels as columns.

struct FeatureMap {
    int time = 0;
    int freq = 0;
    Matrix data; // (time*freq) x channels
};

inline int strided_extent(int n) {
    return (n + 1) / 2;
}

struct ConvCache {
    int in_time = 0;
    int in_freq = 0;
    int in_channels = 0;
    Matrix patches; // (out positions) x (in_channels*9)
};

// w is out_channels x (in_channels*9) with column index ci*9 + kt*3 + kf.
FeatureMap conv2d_s2(const FeatureMap& x, const Matrix& w, const Matrix& b, ConvCache& cache);
FeatureMap conv2d_s2_backward(const ConvCache& cache, const Matrix& w, const FeatureMap& dy, Matrix& dw, Matrix& db);

// ---- multi-head self-attention with a block-diagonal chunk mask ----
// Frame i attends only to frames j with i/chunk == j/chunk. chunk <= 0 means
// unrestricted attention.

struct AttentionWeights {
    const Matrix& wq;
    const Matrix& bq;
    const Matrix& wk;
    const Matrix& bk;
    const Matrix& wv;
    const Matrix& bv;
    const Matrix& wo;
    const Matrix& bo;
};

struct AttentionGrads {
    Matrix& wq;
    Matrix& bq;
    Matrix& wk;
    Matrix& bk;
    Matrix& wv;
    Matrix& bv;
    Matrix& wo;
    Matrix& bo;
};

struct AttentionCache {
    Matrix x;
    Matrix q, k, v;
    Matrix context;                 // concatenated head outputs before wo
    std::vector<Matrix> probs;      // one per (chunk, head), chunk-major
    int heads = 1;
    int chunk = 0;
};

Matrix attention(const Matrix& x, const AttentionWeights& p, int heads, int chunk, AttentionCache& cache);
Matrix attention_backward(const AttentionCache& cache, const AttentionWeights& p, const Matrix& dy,
                          AttentionGrads& g);

// [begin, end) frame ranges of the attention chunks over n frames.
std::vector<std::pair<int, int>> chunk_ranges(int n, int chunk);

// ---- depthwise convolution over time ----
// w is kernel x channels with an odd, centred kernel; b is 1 x channels. Every
// chunk is zero-padded on its own so no output mixes frames of two chunks.
Matrix depthwise_conv_time(const Matrix& x, const Matrix& w, const Matrix& b, int chunk);
Matrix depthwise_conv_time_backward(const Matrix& x, const Matrix& w, const Matrix& dy, int chunk, Matrix& dw,
                                    Matrix& db);

} // namespace scdlab::layers
