#pragma once

#include "scdlab/io.hpp"
#include "scdlab/layers.hpp"
#include "scdlab/linalg.hpp"
#include "scdlab/params.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace scdlab {

struct ModelConfig {
    int input_dim = 24;
    int n_languages = 1;
    int model_dim = 48;
    int n_layers = 4;
    int n_heads = 4;
    int ff_dim = 96;
    int chunk_frames = 64; // post-downsampling frames per attention chunk
    int conv_kernel = 5;   // depthwise temporal convolution in each block (odd)
    int vocab_size = 8;
    int conv1_channels = 8;
    int conv2_channels = 8;
    std::uint64_t seed = 1;

    // Width of one flattened frame leaving the feature encoder.
    int feature_encoder_dim() const;
    void validate() const;
    Json to_json() const;
    static ModelConfig from_json(const Json& j);
};

inline constexpr int kDownsampleFactor = 4;
// ceil(ceil(T/2)/2)
int downsampled_frames(int frames);

// Tensor names.
inline constexpr std::string_view kDecoderPrefix = "decoder_projection.";
std::string layer_prefix(int layer);

// Fan-in scaled uniform weights, zero biases, unit norm gains. Each tensor draws
// from its own stream derived from (seed, name), so adding or removing a tensor
// never changes the others.
ParameterSet init_parameters(const ModelConfig& cfg);

// Adds `<prefix>weight` (n_out x in_dim) and `<prefix>bias` (1 x n_out).
void init_linear(ParameterSet& params, const std::string& prefix, int n_out, int in_dim, std::uint64_t seed);

// Throws ValidationError listing every tensor whose shape disagrees with cfg.
void validate_shapes(const ParameterSet& params, const ModelConfig& cfg);

// ---- forward / backward ----

struct FeatureEncoderCache {
    int frames = 0;
    layers::ConvCache conv1, conv2;
    Matrix pre1, pre2; // pre-activation conv outputs
};

struct BlockCache {
    layers::LayerNormCache norm1, norm2, norm_conv;
    Matrix conv_in;  // normalized input to the temporal convolution
    Matrix conv_pre; // convolution output before SiLU
    layers::AttentionCache attn;
    Matrix ff_in;  // normalized input to the feed-forward
    Matrix ff_pre; // pre-activation hidden
    Matrix ff_act;
};

struct ForwardPass {
    FeatureEncoderCache fe;
    Matrix fe_out;       // T' x D'
    Matrix projected_in; // T' x (D' + L)
    std::vector<BlockCache> blocks;
    Matrix hidden; // T' x model_dim
};

// Two stride-2 convolutions with SiLU; returns T' x D'. Throws on T < 4.
Matrix feature_encoder(const ParameterSet& params, const ModelConfig& cfg, const Matrix& x,
                       FeatureEncoderCache& cache);

// [hidden ; one_hot(language)] projected to model_dim. `concat` receives the
// concatenated input.
Matrix attach_language(const ParameterSet& params, const ModelConfig& cfg, const Matrix& hidden, int language_id,
                       Matrix& concat);

// Pre-norm blocks: x += attn(LN(x)) with the chunk mask, x += SiLU(dwconv(LN(x)))
// confined to the same chunks, x += FF(LN(x)).
Matrix encoder_blocks(const ParameterSet& params, const ModelConfig& cfg, const Matrix& x, int chunk_frames,
                      std::vector<BlockCache>& caches);

ForwardPass encode(const ParameterSet& params, const ModelConfig& cfg, const Matrix& features, int language_id);

// Accumulates parameter gradients from dL/d(hidden). Returns dL/d(features).
Matrix encode_backward(const ParameterSet& params, const ModelConfig& cfg, const ForwardPass& pass,
                       const Matrix& dhidden, ParameterSet& grads);

// Linear map to vocabulary logits followed by row-wise log-softmax.
Matrix decoder_projection(const ParameterSet& params, const Matrix& hidden);

// Generic linear + log-softmax head backward for a head stored under `prefix`.
// Returns dL/d(hidden).
Matrix head_backward(const ParameterSet& params, const std::string& prefix, const Matrix& hidden,
                     const Matrix& logp, const Matrix& dlogp, ParameterSet& grads);
Matrix head_forward(const ParameterSet& params, const std::string& prefix, const Matrix& hidden);

// ---- selective fine-tuning ----

enum class LayerSelection { All, FirstK, LastK, FirstAndLastK };

struct FreezeSpec {
    LayerSelection selection = LayerSelection::All;
    int k = 0;

    // "all", "first_<k>", "last_<k>", "first_and_last_<k>"
    static FreezeSpec parse(std::string_view text);
    std::string to_string() const;
};

struct TrainableMask {
    std::map<std::string, bool> flags;

    bool trainable(const std::string& name) const;
    std::vector<int> trainable_layers(int n_layers) const;
};

// Feature encoder, input projection, and output heads are always trainable;
// encoder layers follow the selection.
TrainableMask select_trainable(const ParameterSet& params, const ModelConfig& cfg, const FreezeSpec& spec);

} // namespace scdlab
