#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ma3e/geometry.hpp"
#include "ma3e/patching.hpp"
#include "ma3e/rng.hpp"
#include "ma3e/tensor.hpp"

namespace ma3e {

struct ModelConfig {
    int image_size = 96;
    int p = 8;
    int channels = 3;
    int enc_dim = 64;
    int enc_depth = 2;
    int enc_heads = 4;
    int dec_dim = 32;
    int dec_depth = 1;
    int dec_heads = 4;
    int mlp_ratio = 4;
    bool use_angle_embedding = true;
    std::uint64_t seed = 0;

    int grid() const { return image_size / p; }
    int num_patches() const { return grid() * grid(); }
    int patch_dim() const { return p * p * channels; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& config);

struct LinearParams {
    Matrix weight;  // out x in
    Matrix bias;    // 1 x out
};

struct NormParams {
    Matrix gamma;  // 1 x dim
    Matrix beta;   // 1 x dim
};

// Pre-norm transformer block: x + attn(norm1(x)), then + mlp(norm2(.)).
struct BlockParams {
    NormParams norm1;
    LinearParams qkv;
    LinearParams proj;
    NormParams norm2;
    LinearParams fc1;
    LinearParams fc2;
};

struct ModelParams {
    LinearParams patch_embed;
    Matrix angle_embed;  // 1 x enc_dim, shared by every rotated-crop token
    Matrix mask_token;   // 1 x dec_dim
    std::vector<BlockParams> encoder_blocks;
    NormParams encoder_norm;
    LinearParams enc_to_dec;
    std::vector<BlockParams> decoder_blocks;
    NormParams decoder_norm;
    LinearParams pred_head;

    // Fixed 2D sine-cosine tables; constants, never learned or checkpointed.
    Matrix pos_embed_enc;  // N x enc_dim
    Matrix pos_embed_dec;  // N x dec_dim
};

struct NamedParam {
    std::string name;
    Matrix* value;
};
struct ConstNamedParam {
    std::string name;
    const Matrix* value;
};

// Every learnable tensor in a fixed order; pos tables are excluded.
std::vector<NamedParam> learnable_params(ModelParams& params);
std::vector<ConstNamedParam> learnable_params(const ModelParams& params);
std::size_t parameter_count(const ModelParams& params);

// Same shapes as `params` with every learnable entry zero (pos tables copied).
ModelParams zeros_like(const ModelParams& params);

Matrix sincos_pos_table(int grid, int dim);

/// Xavier-uniform linear weights, zero biases, unit norms, N(0, 0.02^2) for the
/// angle embedding and mask token.
ModelParams init_params(const ModelConfig& config, Rng& rng);

// Builds params with an rng seeded from config.seed.
ModelParams init_params(const ModelConfig& config);

struct ForwardOutput {
    Matrix predictions;  // N x p^2 C, one row per grid position
    Matrix latents;      // visible tokens after the encoder, in visible_order()
};

// Intermediates for one transformer block, kept for the backward pass.
struct BlockCache {
    Matrix xhat1;
    std::vector<double> rstd1;
    Matrix normed1;
    Matrix qkv;
    std::vector<Matrix> attn;  // per head, softmax probabilities
    Matrix context;
    Matrix mid;
    Matrix xhat2;
    std::vector<double> rstd2;
    Matrix normed2;
    Matrix hidden_pre;
    Matrix hidden;
};

struct ForwardCache {
    std::vector<int> visible;
    Matrix visible_patches;
    std::vector<BlockCache> encoder;
    Matrix enc_xhat;
    std::vector<double> enc_rstd;
    Matrix latents;
    std::vector<BlockCache> decoder;
    Matrix dec_xhat;
    std::vector<double> dec_rstd;
    Matrix dec_normed;
};

/// Patch-embeds the visible patches of `input` in visible_order(), adds their
/// encoder positions, and adds angle_embed to crop-visible tokens when enabled.
/// Masked patch content is never read.
Matrix embed_visible(const PatchSet& input, const MaskLayout& layout, const ModelParams& params,
                     const ModelConfig& config);
Matrix embed_visible(const CompositeSample& sample, const MaskLayout& layout, const ModelParams& params,
                     const ModelConfig& config);

// Encoder blocks followed by the final encoder norm.
Matrix encode(const Matrix& tokens, const ModelParams& params, const ModelConfig& config, ForwardCache* cache = nullptr);

/// Projects latents to the decoder width, scatters them to their grid slots,
/// fills masked slots with mask_token, adds decoder positions, runs the decoder
/// and predicts every one of the N patches.
ForwardOutput decode(const Matrix& latents, const MaskLayout& layout, const ModelParams& params,
                     const ModelConfig& config, ForwardCache* cache = nullptr);

ForwardOutput forward(const PatchSet& input, const MaskLayout& layout, const ModelParams& params,
                      const ModelConfig& config, ForwardCache* cache = nullptr);

/// Reverse pass from dL/dpredictions. Accumulates into `grads` (same layout as params).
void backward(const ForwardCache& cache, const Matrix& d_predictions, const MaskLayout& layout,
              const ModelParams& params, const ModelConfig& config, ModelParams& grads);

}  // namespace ma3e
