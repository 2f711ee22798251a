#pragma once

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mcae/kernels.hpp"
#include "mcae/mat.hpp"
#include "mcae/tokenizer.hpp"

namespace mcae {

struct EncoderConfig {
    Index embed_dim = 192;
    Index depth = 12;
    Index heads = 3;
    Index patch_size = 16;
    Index image_size = 256;
    Real mlp_ratio = 4;

    Index grid() const { return image_size / patch_size; }
    Index num_tokens() const { return grid() * grid(); }
    Index token_dim() const { return channels * patch_size * patch_size; }
    Index mlp_hidden() const { return static_cast<Index>(static_cast<Real>(embed_dim) * mlp_ratio); }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct DecoderConfig {
    Index width = 512;
    Index depth = 8;
    Index heads = 8;
    Real mlp_ratio = 4;

    Index mlp_hidden() const { return static_cast<Index>(static_cast<Real>(width) * mlp_ratio); }

    friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

void validate(const EncoderConfig& cfg);
void validate(const DecoderConfig& cfg);

// Weight is in × out: y = x · W + b for row-vector tokens.
struct Linear {
    Mat weight;
    Mat bias;  // 1 × out
};

struct BlockParams {
    Mat ln1_gain, ln1_shift;
    Linear qkv;
    Linear proj;
    Mat ln2_gain, ln2_shift;
    Linear fc1, fc2;
};

struct EncoderParams {
    Linear patch_embed;
    Mat pos;  // n × embed_dim, fixed
    std::vector<BlockParams> blocks;
    Mat norm_gain, norm_shift;
};

struct DecoderParams {
    Linear embed;
    Mat mask_token;  // 1 × width
    Mat pos;         // n × width, fixed
    std::vector<BlockParams> blocks;
    Mat norm_gain, norm_shift;
    Linear pred;
};

struct HeadParams {
    Linear fc;  // embed_dim × 2
};

enum class ParamGroup { encoder, decoder, head };

template <typename M>
struct BasicParamRef {
    std::string name;
    M* tensor;
    ParamGroup group;
    bool trainable;  // false for the fixed positional tables
    bool decays;     // weight decay applies (linear weights only)
};
using ParamRef = BasicParamRef<Mat>;
using ConstParamRef = BasicParamRef<const Mat>;

struct ModelParams {
    EncoderConfig encoder_cfg;
    DecoderConfig decoder_cfg;
    EncoderParams encoder;
    DecoderParams decoder;
    HeadParams head;

    // Every tensor in a fixed order; names are stable checkpoint keys.
    std::vector<ParamRef> refs();
    std::vector<ConstParamRef> refs() const;

    ModelParams zeros_like() const;
    void set_zero();
    // Accumulates `other` tensor by tensor (shapes must match).
    void add(const ModelParams& other);
    bool all_finite() const;
    // Rounds every tensor to float32 precision so checkpoints round-trip exactly.
    void round_to_storage_precision();

    friend bool operator==(const ModelParams& a, const ModelParams& b);
};

// Fixed 2-D sin-cos table: first half of each row encodes the grid row,
// second half the grid column, each as [sin(p·ω_k), cos(p·ω_k)] with
// ω_k = 10000^(−k/(dim/4)).
Mat sinusoidal_positions_2d(Index grid_rows, Index grid_cols, Index dim);

ModelParams init_params(const EncoderConfig& enc, const DecoderConfig& dec, std::uint64_t seed);
// Fresh 2-class head (truncated normal weights, zero bias).
void reset_head(ModelParams& params, std::uint64_t seed);

struct BlockCache {
    Mat a1;
    kernels::LayerNormCache ln1;
    Mat qkv;
    std::vector<Mat> attn;  // softmax probabilities per head
    Mat ctx;
    Mat a2;
    kernels::LayerNormCache ln2;
    Mat pre_act;
    Mat act;
};

struct EncoderCache {
    Mat tokens;
    std::vector<Index> idx;
    std::vector<BlockCache> blocks;
    Mat block_out;  // output of the last transformer block (before final norm)
    kernels::LayerNormCache norm;
};

struct DecoderCache {
    MaskPlan plan;
    Mat latent;
    std::vector<BlockCache> blocks;
    kernels::LayerNormCache norm;
    Mat normed;
};

Mat block_forward(const BlockParams& p, Index heads, const Mat& x, BlockCache* cache);
Mat block_backward(const BlockParams& p, Index heads, const BlockCache& cache, const Mat& dy, BlockParams& grads);

// Latents (|visible| × embed_dim) for the visible tokens at grid positions `visible_idx`.
Mat encode(const ModelParams& params, const Mat& visible_tokens, std::span<const Index> visible_idx,
           EncoderCache* cache = nullptr);
void encode_backward(const ModelParams& params, const EncoderCache& cache, const Mat& dlatent, ModelParams& grads);
// Gradient with respect to the last block's output (used by Grad-CAM).
Mat encode_backward_to_block_out(const ModelParams& params, const EncoderCache& cache, const Mat& dlatent,
                                 ModelParams& grads);

// Predicted tokens for the whole grid (n × token_dim).
Mat decode(const ModelParams& params, const Mat& latent, const MaskPlan& plan, DecoderCache* cache = nullptr);
// Returns the gradient with respect to the latent.
Mat decode_backward(const ModelParams& params, const DecoderCache& cache, const Mat& dpred, ModelParams& grads);

struct AggregateFeature {
    std::vector<Real> vector;
    bool normalized = false;
};

// Mean over tokens followed by L2 normalization.
AggregateFeature aggregate(const Mat& latent);
// Gradient of a loss with respect to the latent given its gradient w.r.t. the normalized feature.
Mat aggregate_backward(const Mat& latent, std::span<const Real> dfeature);

using Logits = std::array<Real, 2>;  // index 0 = spoof, 1 = live

struct ClassifierCache {
    EncoderCache encoder;
    Mat latent;
    std::vector<Real> pooled;
};

Logits classify_tokens(const ModelParams& params, const TokenSequence& seq, ClassifierCache* cache = nullptr);
Logits classify(const ModelParams& params, const Image& image);
// Accumulates head gradients and, when `through_encoder`, encoder gradients.
void classify_backward(const ModelParams& params, const ClassifierCache& cache, const Logits& dlogits,
                       ModelParams& grads, bool through_encoder);
// Gradient of the logits' linear functional `dlogits` w.r.t. the last block output.
Mat classify_backward_to_block_out(const ModelParams& params, const ClassifierCache& cache, const Logits& dlogits);

std::array<Real, 2> softmax(const Logits& logits);

}  // namespace mcae
