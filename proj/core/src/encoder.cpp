#include "scdlab/encoder.hpp"

#include "scdlab/error.hpp"
#include "scdlab/random.hpp"

#include <charconv>
#include <cmath>

namespace scdlab {

namespace {

std::uint64_t name_tag(std::string_view name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = uniform_real(rng, -bound, bound);
        }
    }
    return m;
}

Matrix reshape(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    return Eigen::Map<const Matrix>(m.data(), rows, cols);
}

struct BlockParams {
    const Matrix& norm1_gain;
    const Matrix& norm1_bias;
    layers::AttentionWeights attn;
    const Matrix& conv_norm_gain;
    const Matrix& conv_norm_bias;
    const Matrix& conv_w;
    const Matrix& conv_b;
    const Matrix& norm2_gain;
    const Matrix& norm2_bias;
    const Matrix& w1;
    const Matrix& b1;
    const Matrix& w2;
    const Matrix& b2;
};

BlockParams block_params(const ParameterSet& p, int layer) {
    const auto pre = layer_prefix(layer);
    return BlockParams{
        p.at(pre + "attn_norm.gain"),
        p.at(pre + "attn_norm.bias"),
        layers::AttentionWeights{p.at(pre + "attn.wq"), p.at(pre + "attn.bq"), p.at(pre + "attn.wk"),
                                 p.at(pre + "attn.bk"), p.at(pre + "attn.wv"), p.at(pre + "attn.bv"),
                                 p.at(pre + "attn.wo"), p.at(pre + "attn.bo")},
        p.at(pre + "conv_norm.gain"),
        p.at(pre + "conv_norm.bias"),
        p.at(pre + "conv.weight"),
        p.at(pre + "conv.bias"),
        p.at(pre + "ff_norm.gain"),
        p.at(pre + "ff_norm.bias"),
        p.at(pre + "ff.w1"),
        p.at(pre + "ff.b1"),
        p.at(pre + "ff.w2"),
        p.at(pre + "ff.b2"),
    };
}

} // namespace

int ModelConfig::feature_encoder_dim() const {
    return conv2_channels * layers::strided_extent(layers::strided_extent(input_dim));
}

void ModelConfig::validate() const {
    if (input_dim < 1 || n_languages < 1 || model_dim < 1 || ff_dim < 1 || vocab_size < 2 || conv1_channels < 1 ||
        conv2_channels < 1) {
        throw ValidationError("model config: dimensions must be positive (vocab_size >= 2)");
    }
    if (n_layers < 1) {
        throw ValidationError("model config: n_layers must be >= 1");
    }
    if (n_heads < 1 || model_dim % n_heads != 0) {
        throw ValidationError("model config: model_dim must be divisible by n_heads");
    }
    if (chunk_frames < 1) {
        throw ValidationError("model config: chunk_frames must be >= 1");
    }
    if (conv_kernel < 1 || conv_kernel % 2 == 0) {
        throw ValidationError("model config: conv_kernel must be odd and >= 1");
    }
}

Json ModelConfig::to_json() const {
    return Json{{"input_dim", input_dim},         {"n_languages", n_languages},
                {"model_dim", model_dim},         {"n_layers", n_layers},
                {"n_heads", n_heads},             {"ff_dim", ff_dim},
                {"chunk_frames", chunk_frames},   {"conv_kernel", conv_kernel},
                {"vocab_size", vocab_size},
                {"conv1_channels", conv1_channels}, {"conv2_channels", conv2_channels},
                {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
    ModelConfig c;
    c.input_dim = j.value("input_dim", c.input_dim);
    c.n_languages = j.value("n_languages", c.n_languages);
    c.model_dim = j.value("model_dim", c.model_dim);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    c.chunk_frames = j.value("chunk_frames", c.chunk_frames);
    c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.conv1_channels = j.value("conv1_channels", c.conv1_channels);
    c.conv2_channels = j.value("conv2_channels", c.conv2_channels);
    c.seed = j.value("seed", c.seed);
    return c;
}

int downsampled_frames(int frames) {
    return layers::strided_extent(layers::strided_extent(frames));
}

std::string layer_prefix(int layer) {
    return "layers." + std::to_string(layer) + ".";
}

void init_linear(ParameterSet& params, const std::string& prefix, int n_out, int in_dim, std::uint64_t seed) {
    const std::string wname = prefix + "weight";
    params.add(wname, uniform_matrix(n_out, in_dim, 1.0 / std::sqrt(in_dim), derive_seed(seed, name_tag(wname))));
    params.add(prefix + "bias", Matrix::Zero(1, n_out));
}

ParameterSet init_parameters(const ModelConfig& cfg) {
    cfg.validate();
    ParameterSet p;
    auto dense = [&](const std::string& name, int rows, int cols) {
        p.add(name, uniform_matrix(rows, cols, 1.0 / std::sqrt(cols), derive_seed(cfg.seed, name_tag(name))));
    };
    auto zeros = [&](const std::string& name, int cols) { p.add(name, Matrix::Zero(1, cols)); };
    auto ones = [&](const std::string& name, int cols) { p.add(name, Matrix::Ones(1, cols)); };

    dense("feature_encoder.conv1.weight", cfg.conv1_channels, 9);
    zeros("feature_encoder.conv1.bias", cfg.conv1_channels);
    dense("feature_encoder.conv2.weight", cfg.conv2_channels, cfg.conv1_channels * 9);
    zeros("feature_encoder.conv2.bias", cfg.conv2_channels);
    dense("input_projection.weight", cfg.model_dim, cfg.feature_encoder_dim() + cfg.n_languages);
    zeros("input_projection.bias", cfg.model_dim);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto pre = layer_prefix(l);
        ones(pre + "attn_norm.gain", cfg.model_dim);
        zeros(pre + "attn_norm.bias", cfg.model_dim);
        for (const char* w : {"q", "k", "v", "o"}) {
            dense(pre + "attn.w" + w, cfg.model_dim, cfg.model_dim);
            zeros(pre + "attn.b" + w, cfg.model_dim);
        }
        ones(pre + "conv_norm.gain", cfg.model_dim);
        zeros(pre + "conv_norm.bias", cfg.model_dim);
        // depthwise: fan-in is the kernel length
        p.add(pre + "conv.weight", uniform_matrix(cfg.conv_kernel, cfg.model_dim, 1.0 / std::sqrt(cfg.conv_kernel),
                                                  derive_seed(cfg.seed, name_tag(pre + "conv.weight"))));
        zeros(pre + "conv.bias", cfg.model_dim);
        ones(pre + "ff_norm.gain", cfg.model_dim);
        zeros(pre + "ff_norm.bias", cfg.model_dim);
        dense(pre + "ff.w1", cfg.ff_dim, cfg.model_dim);
        zeros(pre + "ff.b1", cfg.ff_dim);
        dense(pre + "ff.w2", cfg.model_dim, cfg.ff_dim);
        zeros(pre + "ff.b2", cfg.model_dim);
    }
    init_linear(p, std::string(kDecoderPrefix), cfg.vocab_size, cfg.model_dim, cfg.seed);
    return p;
}

void validate_shapes(const ParameterSet& params, const ModelConfig& cfg) {
    const ParameterSet ref = init_parameters(cfg);
    std::string problems;
    for (const auto& e : ref.entries()) {
        if (!params.contains(e.name)) {
            problems += "\n  missing " + e.name;
            continue;
        }
        const auto& got = params.at(e.name);
        if (got.rows() != e.value.rows() || got.cols() != e.value.cols()) {
            problems += "\n  " + e.name + ": expected " + std::to_string(e.value.rows()) + "x" +
                        std::to_string(e.value.cols()) + ", got " + std::to_string(got.rows()) + "x" +
                        std::to_string(got.cols());
        }
    }
    if (!problems.empty()) {
        throw ValidationError("tensor shapes do not match the model config:" + problems);
    }
}

Matrix feature_encoder(const ParameterSet& params, const ModelConfig& cfg, const Matrix& x,
                       FeatureEncoderCache& cache) {
    if (x.rows() < kDownsampleFactor) {
        throw ValidationError("too few frames");
    }
    if (x.cols() != cfg.input_dim) {
        throw ValidationError("feature dimension " + std::to_string(x.cols()) + " does not match model input_dim " +
                              std::to_string(cfg.input_dim));
    }
    cache.frames = static_cast<int>(x.rows());
    layers::FeatureMap in{static_cast<int>(x.rows()), static_cast<int>(x.cols()), reshape(x, x.size(), 1)};
    auto c1 = layers::conv2d_s2(in, params.at("feature_encoder.conv1.weight"), params.at("feature_encoder.conv1.bias"),
                                cache.conv1);
    cache.pre1 = c1.data;
    c1.data = layers::silu(c1.data);
    auto c2 = layers::conv2d_s2(c1, params.at("feature_encoder.conv2.weight"), params.at("feature_encoder.conv2.bias"),
                                cache.conv2);
    cache.pre2 = c2.data;
    const Matrix act = layers::silu(c2.data);
    return reshape(act, c2.time, static_cast<Eigen::Index>(c2.freq) * act.cols());
}

Matrix attach_language(const ParameterSet& params, const ModelConfig& cfg, const Matrix& hidden, int language_id,
                       Matrix& concat) {
    if (language_id < 0 || language_id >= cfg.n_languages) {
        throw ValidationError("language_id " + std::to_string(language_id) + " out of range [0, " +
                              std::to_string(cfg.n_languages) + ")");
    }
    concat = Matrix::Zero(hidden.rows(), hidden.cols() + cfg.n_languages);
    concat.leftCols(hidden.cols()) = hidden;
    concat.col(hidden.cols() + language_id).setOnes();
    return layers::linear(concat, params.at("input_projection.weight"), params.at("input_projection.bias"));
}

Matrix encoder_blocks(const ParameterSet& params, const ModelConfig& cfg, const Matrix& x, int chunk_frames,
                      std::vector<BlockCache>& caches) {
    caches.assign(static_cast<std::size_t>(cfg.n_layers), BlockCache{});
    Matrix h = x;
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& c = caches[static_cast<std::size_t>(l)];
        const auto p = block_params(params, l);
        const Matrix n1 = layers::layer_norm(h, p.norm1_gain, p.norm1_bias, c.norm1);
        h += layers::attention(n1, p.attn, cfg.n_heads, chunk_frames, c.attn);
        c.conv_in = layers::layer_norm(h, p.conv_norm_gain, p.conv_norm_bias, c.norm_conv);
        c.conv_pre = layers::depthwise_conv_time(c.conv_in, p.conv_w, p.conv_b, chunk_frames);
        h += layers::silu(c.conv_pre);
        c.ff_in = layers::layer_norm(h, p.norm2_gain, p.norm2_bias, c.norm2);
        c.ff_pre = layers::linear(c.ff_in, p.w1, p.b1);
        c.ff_act = layers::silu(c.ff_pre);
        h += layers::linear(c.ff_act, p.w2, p.b2);
    }
    return h;
}

ForwardPass encode(const ParameterSet& params, const ModelConfig& cfg, const Matrix& features, int language_id) {
    ForwardPass pass;
    pass.fe_out = feature_encoder(params, cfg, features, pass.fe);
    const Matrix projected = attach_language(params, cfg, pass.fe_out, language_id, pass.projected_in);
    pass.hidden = encoder_blocks(params, cfg, projected, cfg.chunk_frames, pass.blocks);
    return pass;
}

Matrix encode_backward(const ParameterSet& params, const ModelConfig& cfg, const ForwardPass& pass,
                       const Matrix& dhidden, ParameterSet& grads) {
    Matrix dh = dhidden;
    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& c = pass.blocks[static_cast<std::size_t>(l)];
        const auto p = block_params(params, l);
        const auto pre = layer_prefix(l);
        // feed-forward branch
        Matrix dact = layers::linear_backward(c.ff_act, p.w2, dh, grads.at(pre + "ff.w2"), grads.at(pre + "ff.b2"));
        Matrix dpre = layers::silu_backward(c.ff_pre, dact);
        Matrix dn2 = layers::linear_backward(c.ff_in, p.w1, dpre, grads.at(pre + "ff.w1"), grads.at(pre + "ff.b1"));
        dh += layers::layer_norm_backward(c.norm2, p.norm2_gain, dn2, grads.at(pre + "ff_norm.gain"),
                                          grads.at(pre + "ff_norm.bias"));
        // temporal convolution branch
        Matrix dconv = layers::silu_backward(c.conv_pre, dh);
        Matrix dnc = layers::depthwise_conv_time_backward(c.conv_in, p.conv_w, dconv, c.attn.chunk,
                                                          grads.at(pre + "conv.weight"), grads.at(pre + "conv.bias"));
        dh += layers::layer_norm_backward(c.norm_conv, p.conv_norm_gain, dnc, grads.at(pre + "conv_norm.gain"),
                                          grads.at(pre + "conv_norm.bias"));
        // attention branch
        layers::AttentionGrads ag{grads.at(pre + "attn.wq"), grads.at(pre + "attn.bq"), grads.at(pre + "attn.wk"),
                                  grads.at(pre + "attn.bk"), grads.at(pre + "attn.wv"), grads.at(pre + "attn.bv"),
                                  grads.at(pre + "attn.wo"), grads.at(pre + "attn.bo")};
        Matrix dn1 = layers::attention_backward(c.attn, p.attn, dh, ag);
        dh += layers::layer_norm_backward(c.norm1, p.norm1_gain, dn1, grads.at(pre + "attn_norm.gain"),
                                          grads.at(pre + "attn_norm.bias"));
    }
    const Matrix dconcat = layers::linear_backward(pass.projected_in, params.at("input_projection.weight"), dh,
                                                   grads.at("input_projection.weight"),
                                                   grads.at("input_projection.bias"));
    const Matrix dfe = dconcat.leftCols(pass.fe_out.cols());

    const int t2 = static_cast<int>(pass.fe_out.rows());
    const int channels2 = static_cast<int>(pass.fe.pre2.cols());
    layers::FeatureMap d2{t2, static_cast<int>(pass.fe.pre2.rows()) / t2,
                          layers::silu_backward(pass.fe.pre2, reshape(dfe, pass.fe.pre2.rows(), channels2))};
    layers::FeatureMap d1 = layers::conv2d_s2_backward(pass.fe.conv2, params.at("feature_encoder.conv2.weight"), d2,
                                                       grads.at("feature_encoder.conv2.weight"),
                                                       grads.at("feature_encoder.conv2.bias"));
    d1.data = layers::silu_backward(pass.fe.pre1, d1.data);
    layers::FeatureMap d0 = layers::conv2d_s2_backward(pass.fe.conv1, params.at("feature_encoder.conv1.weight"), d1,
                                                       grads.at("feature_encoder.conv1.weight"),
                                                       grads.at("feature_encoder.conv1.bias"));
    return reshape(d0.data, d0.time, d0.freq);
}

Matrix head_forward(const ParameterSet& params, const std::string& prefix, const Matrix& hidden) {
    return layers::log_softmax(layers::linear(hidden, params.at(prefix + "weight"), params.at(prefix + "bias")));
}

Matrix decoder_projection(const ParameterSet& params, const Matrix& hidden) {
    return head_forward(params, std::string(kDecoderPrefix), hidden);
}

Matrix head_backward(const ParameterSet& params, const std::string& prefix, const Matrix& hidden,
                     const Matrix& logp, const Matrix& dlogp, ParameterSet& grads) {
    const Matrix dlogits = layers::log_softmax_backward(logp, dlogp);
    return layers::linear_backward(hidden, params.at(prefix + "weight"), dlogits, grads.at(prefix + "weight"),
                                   grads.at(prefix + "bias"));
}

FreezeSpec FreezeSpec::parse(std::string_view text) {
    FreezeSpec spec;
    if (text == "all") {
        return spec;
    }
    auto parse_k = [&](std::string_view digits) {
        int k = -1;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
        if (ec != std::errc() || ptr != digits.data() + digits.size() || k < 0) {
            throw ValidationError("bad layer count in freeze spec '" + std::string(text) + "'");
        }
        return k;
    };
    if (text.starts_with("first_and_last_")) {
        spec.selection = LayerSelection::FirstAndLastK;
        spec.k = parse_k(text.substr(15));
    } else if (text.starts_with("first_")) {
        spec.selection = LayerSelection::FirstK;
        spec.k = parse_k(text.substr(6));
    } else if (text.starts_with("last_")) {
        spec.selection = LayerSelection::LastK;
        spec.k = parse_k(text.substr(5));
    } else {
        throw ValidationError("unknown freeze spec '" + std::string(text) +
                              "' (expected all | first_<k> | last_<k> | first_and_last_<k>)");
    }
    return spec;
}

std::string FreezeSpec::to_string() const {
    switch (selection) {
    case LayerSelection::All: return "all";
    case LayerSelection::FirstK: return "first_" + std::to_string(k);
    case LayerSelection::LastK: return "last_" + std::to_string(k);
    case LayerSelection::FirstAndLastK: return "first_and_last_" + std::to_string(k);
    }
    return "all";
}

bool TrainableMask::trainable(const std::string& name) const {
    auto it = flags.find(name);
    return it != flags.end() && it->second;
}

std::vector<int> TrainableMask::trainable_layers(int n_layers) const {
    std::vector<int> out;
    for (int l = 0; l < n_layers; ++l) {
        const auto pre = layer_prefix(l);
        for (const auto& [name, on] : flags) {
            if (on && name.starts_with(pre)) {
                out.push_back(l);
                break;
            }
        }
    }
    return out;
}

TrainableMask select_trainable(const ParameterSet& params, const ModelConfig& cfg, const FreezeSpec& spec) {
    if (spec.selection != LayerSelection::All && spec.k > cfg.n_layers) {
        throw ValidationError("freeze spec selects " + std::to_string(spec.k) + " layers but the model has " +
                              std::to_string(cfg.n_layers));
    }
    auto layer_selected = [&](int l) {
        switch (spec.selection) {
        case LayerSelection::All: return true;
        case LayerSelection::FirstK: return l < spec.k;
        case LayerSelection::LastK: return l >= cfg.n_layers - spec.k;
        case LayerSelection::FirstAndLastK: return l < spec.k || l >= cfg.n_layers - spec.k;
        }
        return true;
    };
    TrainableMask mask;
    for (const auto& e : params.entries()) {
        bool on = !e.frozen;
        if (e.name.starts_with("layers.")) {
            const auto dot = e.name.find('.', 7);
            const int l = std::stoi(e.name.substr(7, dot - 7));
            on = on && layer_selected(l);
        }
        mask.flags[e.name] = on;
    }
    return mask;
}

} // namespace scdlab
