#include "scdlab/bestrq.hpp"

#include "scdlab/error.hpp"
#include "scdlab/random.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace scdlab {

RandomQuantizer make_quantizer(int input_dim, int proj_dim, int codebook_size, std::uint64_t seed) {
    if (input_dim < 1 || proj_dim < 1 || codebook_size < 1) {
        throw ValidationError("quantizer dimensions must be positive");
    }
    RandomQuantizer q;
    q.seed = seed;
    Rng rng(derive_seed(seed, 0x5155414eULL));
    const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
    q.projection.resize(input_dim, proj_dim);
    for (Eigen::Index i = 0; i < q.projection.size(); ++i) {
        q.projection.data()[i] = uniform_real(rng, -bound, bound);
    }
    q.codebook.resize(codebook_size, proj_dim);
    for (int k = 0; k < codebook_size; ++k) {
        for (int d = 0; d < proj_dim; ++d) {
            q.codebook(k, d) = standard_normal(rng);
        }
        q.codebook.row(k).normalize();
    }
    round_to_float(q.projection);
    round_to_float(q.codebook);
    return q;
}

std::vector<int> quantize(const RandomQuantizer& q, const Matrix& features) {
    if (features.cols() != q.projection.rows()) {
        throw ValidationError("quantize: feature dimension " + std::to_string(features.cols()) +
                              " does not match quantizer input " + std::to_string(q.projection.rows()));
    }
    const Matrix projected = features * q.projection;
    std::vector<int> labels(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index t = 0; t < projected.rows(); ++t) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < q.codebook.rows(); ++k) {
            const double d = (projected.row(t) - q.codebook.row(k)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        labels[static_cast<std::size_t>(t)] = best;
    }
    return labels;
}

void store_quantizer(ParameterSet& params, const RandomQuantizer& q) {
    params.add(std::string(kQuantizerProjection), q.projection, true);
    params.add(std::string(kQuantizerCodebook), q.codebook, true);
}

RandomQuantizer load_quantizer(const ParameterSet& params) {
    RandomQuantizer q;
    q.projection = params.at(kQuantizerProjection);
    q.codebook = params.at(kQuantizerCodebook);
    if (q.projection.cols() != q.codebook.cols()) {
        throw ValidationError("quantizer projection and codebook widths differ");
    }
    return q;
}

int MaskSpec::count() const {
    return std::accumulate(mask.begin(), mask.end(), 0);
}

MaskSpec sample_mask(int frames, int span_frames, double mask_prob, std::uint64_t seed) {
    if (span_frames < 1) {
        throw ValidationError("span_frames must be >= 1");
    }
    MaskSpec spec;
    spec.span_frames = span_frames;
    spec.mask_prob = mask_prob;
    spec.mask.assign(static_cast<std::size_t>(std::max(frames, 0)), 0);
    Rng rng(seed);
    for (int t = 0; t < frames; ++t) {
        if (bernoulli(rng, mask_prob)) {
            for (int s = t; s < std::min(frames, t + span_frames); ++s) {
                spec.mask[static_cast<std::size_t>(s)] = 1;
            }
        }
    }
    return spec;
}

std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& mask, int out_frames) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(out_frames), 0);
    for (std::size_t t = 0; t < mask.size(); ++t) {
        const auto o = t / kDownsampleFactor;
        if (mask[t] && o < out.size()) out[o] = 1;
    }
    return out;
}

std::vector<int> downsample_labels(const std::vector<int>& labels, int out_frames) {
    std::vector<int> out(static_cast<std::size_t>(out_frames), 0);
    for (int o = 0; o < out_frames; ++o) {
        const auto src = static_cast<std::size_t>(o) * kDownsampleFactor;
        if (src < labels.size()) out[static_cast<std::size_t>(o)] = labels[src];
    }
    return out;
}

Matrix apply_mask(const Matrix& features, const std::vector<std::uint8_t>& mask) {
    Matrix out = features;
    for (std::size_t t = 0; t < mask.size() && static_cast<Eigen::Index>(t) < out.rows(); ++t) {
        if (mask[t]) out.row(static_cast<Eigen::Index>(t)).setZero();
    }
    return out;
}

MaskedPredictionLoss masked_prediction_loss(const Matrix& logp, const std::vector<int>& labels,
                                            const std::vector<std::uint8_t>& mask) {
    if (labels.size() != static_cast<std::size_t>(logp.rows()) || mask.size() != labels.size()) {
        throw ValidationError("masked_prediction_loss: label/mask length mismatch");
    }
    MaskedPredictionLoss out;
    out.dlogp = Matrix::Zero(logp.rows(), logp.cols());
    for (std::size_t t = 0; t < mask.size(); ++t) {
        if (mask[t]) ++out.targets;
    }
    if (out.targets == 0) {
        throw ValidationError("no prediction targets");
    }
    const double w = 1.0 / out.targets;
    for (std::size_t t = 0; t < mask.size(); ++t) {
        if (!mask[t]) continue;
        const auto row = static_cast<Eigen::Index>(t);
        const int label = labels[t];
        if (label < 0 || label >= logp.cols()) {
            throw ValidationError("masked_prediction_loss: label out of range");
        }
        out.nll -= w * logp(row, label);
        out.dlogp(row, label) = -w;
    }
    return out;
}

void add_bestrq_head(ParameterSet& params, int codebook_size, int model_dim, std::uint64_t seed) {
    init_linear(params, std::string(kBestRqHeadPrefix), codebook_size, model_dim, seed);
}

BestRqStepResult bestrq_step(const ParameterSet& params, const ModelConfig& cfg, const RandomQuantizer& q,
                             const Matrix& features, int language_id, const MaskSpec& mask, ParameterSet& grads) {
    if (mask.mask.size() != static_cast<std::size_t>(features.rows())) {
        throw ValidationError("bestrq_step: mask length differs from frame count");
    }
    const int out_frames = downsampled_frames(static_cast<int>(features.rows()));
    const auto labels = downsample_labels(quantize(q, features), out_frames);
    const auto ds_mask = downsample_mask(mask.mask, out_frames);

    const ForwardPass pass = encode(params, cfg, apply_mask(features, mask.mask), language_id);
    const std::string head(kBestRqHeadPrefix);
    const Matrix logp = head_forward(params, head, pass.hidden);
    const auto loss = masked_prediction_loss(logp, labels, ds_mask);
    const Matrix dhidden = head_backward(params, head, pass.hidden, logp, loss.dlogp, grads);
    encode_backward(params, cfg, pass, dhidden, grads);
    return {loss.nll, loss.targets};
}

} // namespace scdlab
