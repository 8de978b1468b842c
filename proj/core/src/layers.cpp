#include "scdlab/layers.hpp"

#include "scdlab/error.hpp"

#include <cmath>

namespace scdlab::layers {

namespace {

double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

} // namespace

Matrix silu(const Matrix& x) {
    return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

Matrix silu_backward(const Matrix& x, const Matrix& dy) {
    return x.binaryExpr(dy, [](double v, double g) {
        const double s = sigmoid(v);
        return g * s * (1.0 + v * (1.0 - s));
    });
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
    if (x.cols() != w.cols() || b.cols() != w.rows()) {
        throw ValidationError("linear: shape mismatch");
    }
    Matrix y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
}

Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db) {
    dw.noalias() += dy.transpose() * x;
    db += dy.colwise().sum();
    return dy * w;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache) {
    const auto n = x.cols();
    cache.normalized.resize(x.rows(), n);
    cache.inv_sigma.resize(x.rows());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double mean = x.row(t).mean();
        const auto centered = (x.row(t).array() - mean).matrix();
        const double var = centered.squaredNorm() / static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_sigma(t) = inv;
        cache.normalized.row(t) = centered * inv;
    }
    Matrix y = (cache.normalized.array().rowwise() * gain.row(0).array()).matrix();
    y.rowwise() += bias.row(0);
    return y;
}

Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& gain, const Matrix& dy, Matrix& dgain,
                           Matrix& dbias) {
    dgain += (dy.array() * cache.normalized.array()).matrix().colwise().sum();
    dbias += dy.colwise().sum();
    const Matrix dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
    const auto n = static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index t = 0; t < dy.rows(); ++t) {
        const double mean_d = dxhat.row(t).sum() / n;
        const double mean_dx = dxhat.row(t).dot(cache.normalized.row(t)) / n;
        dx.row(t) = cache.inv_sigma(t) *
                    (dxhat.row(t).array() - mean_d - cache.normalized.row(t).array() * mean_dx).matrix();
    }
    return dx;
}

Matrix log_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const double mx = logits.row(t).maxCoeff();
        const double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
        out.row(t) = logits.row(t).array() - lse;
    }
    return out;
}

Matrix log_softmax_backward(const Matrix& logp, const Matrix& dlogp) {
    Matrix dz = dlogp;
    const Matrix p = logp.array().exp().matrix();
    for (Eigen::Index t = 0; t < dz.rows(); ++t) {
        dz.row(t) -= p.row(t) * dlogp.row(t).sum();
    }
    return dz;
}

FeatureMap conv2d_s2(const FeatureMap& x, const Matrix& w, const Matrix& b, ConvCache& cache) {
    const int cin = static_cast<int>(x.data.cols());
    if (w.cols() != cin * 9 || b.cols() != w.rows() || x.data.rows() != static_cast<Eigen::Index>(x.time) * x.freq) {
        throw ValidationError("conv2d_s2: shape mismatch");
    }
    const int ot = strided_extent(x.time);
    const int of = strided_extent(x.freq);
    cache.in_time = x.time;
    cache.in_freq = x.freq;
    cache.in_channels = cin;
    cache.patches = Matrix::Zero(static_cast<Eigen::Index>(ot) * of, cin * 9);
    for (int i = 0; i < ot; ++i) {
        for (int j = 0; j < of; ++j) {
            auto row = cache.patches.row(static_cast<Eigen::Index>(i) * of + j);
            for (int kt = 0; kt < 3; ++kt) {
                const int t = 2 * i + kt - 1;
                if (t < 0 || t >= x.time) continue;
                for (int kf = 0; kf < 3; ++kf) {
                    const int f = 2 * j + kf - 1;
                    if (f < 0 || f >= x.freq) continue;
                    const auto src = x.data.row(static_cast<Eigen::Index>(t) * x.freq + f);
                    for (int c = 0; c < cin; ++c) {
                        row(c * 9 + kt * 3 + kf) = src(c);
                    }
                }
            }
        }
    }
    FeatureMap y;
    y.time = ot;
    y.freq = of;
    y.data = cache.patches * w.transpose();
    y.data.rowwise() += b.row(0);
    return y;
}

FeatureMap conv2d_s2_backward(const ConvCache& cache, const Matrix& w, const FeatureMap& dy, Matrix& dw, Matrix& db) {
    dw.noalias() += dy.data.transpose() * cache.patches;
    db += dy.data.colwise().sum();
    const Matrix dpatches = dy.data * w;
    FeatureMap dx;
    dx.time = cache.in_time;
    dx.freq = cache.in_freq;
    dx.data = Matrix::Zero(static_cast<Eigen::Index>(cache.in_time) * cache.in_freq, cache.in_channels);
    for (int i = 0; i < dy.time; ++i) {
        for (int j = 0; j < dy.freq; ++j) {
            const auto row = dpatches.row(static_cast<Eigen::Index>(i) * dy.freq + j);
            for (int kt = 0; kt < 3; ++kt) {
                const int t = 2 * i + kt - 1;
                if (t < 0 || t >= cache.in_time) continue;
                for (int kf = 0; kf < 3; ++kf) {
                    const int f = 2 * j + kf - 1;
                    if (f < 0 || f >= cache.in_freq) continue;
                    auto dst = dx.data.row(static_cast<Eigen::Index>(t) * cache.in_freq + f);
                    for (int c = 0; c < cache.in_channels; ++c) {
                        dst(c) += row(c * 9 + kt * 3 + kf);
                    }
                }
            }
        }
    }
    return dx;
}

std::vector<std::pair<int, int>> chunk_ranges(int n, int chunk) {
    std::vector<std::pair<int, int>> out;
    if (chunk <= 0 || chunk >= n) {
        out.emplace_back(0, n);
        return out;
    }
    for (int s = 0; s < n; s += chunk) {
        out.emplace_back(s, std::min(n, s + chunk));
    }
    return out;
}

Matrix attention(const Matrix& x, const AttentionWeights& p, int heads, int chunk, AttentionCache& cache) {
    const auto model_dim = x.cols();
    if (heads < 1 || model_dim % heads != 0) {
        throw ValidationError("attention: model_dim must be divisible by heads");
    }
    const auto dh = model_dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.x = x;
    cache.heads = heads;
    cache.chunk = chunk;
    cache.q = linear(x, p.wq, p.bq);
    cache.k = linear(x, p.wk, p.bk);
    cache.v = linear(x, p.wv, p.bv);
    cache.context = Matrix::Zero(x.rows(), model_dim);
    cache.probs.clear();
    for (auto [begin, end] : chunk_ranges(static_cast<int>(x.rows()), chunk)) {
        const int len = end - begin;
        for (int h = 0; h < heads; ++h) {
            const auto q = cache.q.block(begin, h * dh, len, dh);
            const auto k = cache.k.block(begin, h * dh, len, dh);
            const auto v = cache.v.block(begin, h * dh, len, dh);
            Matrix s = scale * (q * k.transpose());
            for (int r = 0; r < len; ++r) {
                const double mx = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - mx).exp();
                s.row(r) /= s.row(r).sum();
            }
            cache.context.block(begin, h * dh, len, dh) = s * v;
            cache.probs.push_back(std::move(s));
        }
    }
    return linear(cache.context, p.wo, p.bo);
}

Matrix attention_backward(const AttentionCache& cache, const AttentionWeights& p, const Matrix& dy,
                          AttentionGrads& g) {
    const auto model_dim = cache.x.cols();
    const auto dh = model_dim / cache.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Matrix dcontext = linear_backward(cache.context, p.wo, dy, g.wo, g.bo);
    Matrix dq = Matrix::Zero(cache.q.rows(), model_dim);
    Matrix dk = Matrix::Zero(cache.k.rows(), model_dim);
    Matrix dv = Matrix::Zero(cache.v.rows(), model_dim);
    std::size_t idx = 0;
    for (auto [begin, end] : chunk_ranges(static_cast<int>(cache.x.rows()), cache.chunk)) {
        const int len = end - begin;
        for (int h = 0; h < cache.heads; ++h, ++idx) {
            const Matrix& a = cache.probs[idx];
            const auto q = cache.q.block(begin, h * dh, len, dh);
            const auto k = cache.k.block(begin, h * dh, len, dh);
            const auto v = cache.v.block(begin, h * dh, len, dh);
            const auto dout = dcontext.block(begin, h * dh, len, dh);
            dv.block(begin, h * dh, len, dh) = a.transpose() * dout;
            const Matrix da = dout * v.transpose();
            Matrix ds = a.array() * da.array();
            const Vector rows = ds.rowwise().sum();
            ds -= (a.array().colwise() * rows.array()).matrix();
            ds *= scale;
            dq.block(begin, h * dh, len, dh) = ds * k;
            dk.block(begin, h * dh, len, dh) = ds.transpose() * q;
        }
    }
    Matrix dx = linear_backward(cache.x, p.wq, dq, g.wq, g.bq);
    dx += linear_backward(cache.x, p.wk, dk, g.wk, g.bk);
    dx += linear_backward(cache.x, p.wv, dv, g.wv, g.bv);
    return dx;
}

Matrix depthwise_conv_time(const Matrix& x, const Matrix& w, const Matrix& b, int chunk) {
    const int half = static_cast<int>(w.rows()) / 2;
    Matrix y = b.replicate(x.rows(), 1);
    for (auto [begin, end] : chunk_ranges(static_cast<int>(x.rows()), chunk)) {
        for (int t = begin; t < end; ++t) {
            for (int k = 0; k < w.rows(); ++k) {
                const int s = t + k - half;
                if (s < begin || s >= end) continue;
                y.row(t).array() += w.row(k).array() * x.row(s).array();
            }
        }
    }
    return y;
}

Matrix depthwise_conv_time_backward(const Matrix& x, const Matrix& w, const Matrix& dy, int chunk, Matrix& dw,
                                    Matrix& db) {
    const int half = static_cast<int>(w.rows()) / 2;
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    db += dy.colwise().sum();
    for (auto [begin, end] : chunk_ranges(static_cast<int>(x.rows()), chunk)) {
        for (int t = begin; t < end; ++t) {
            for (int k = 0; k < w.rows(); ++k) {
                const int s = t + k - half;
                if (s < begin || s >= end) continue;
                dw.row(k).array() += dy.row(t).array() * x.row(s).array();
                dx.row(s).array() += dy.row(t).array() * w.row(k).array();
            }
        }
    }
    return dx;
}

} // namespace scdlab::layers
