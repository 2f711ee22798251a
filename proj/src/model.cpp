#include "mcae/model.hpp"

#include <cmath>
#include <numeric>

namespace mcae {

using kernels::matmul;
using kernels::matmul_nt;
using kernels::matmul_tn;
using kernels::matmul_tn_acc;

void validate(const EncoderConfig& cfg) {
    if (cfg.embed_dim == 0 || cfg.depth == 0 || cfg.heads == 0 || cfg.patch_size == 0 || cfg.image_size == 0)
        throw ConfigError("encoder config: all sizes must be positive");
    if (cfg.embed_dim % cfg.heads != 0) throw ConfigError("encoder config: embed_dim must be divisible by heads");
    if (cfg.embed_dim % 4 != 0) throw ConfigError("encoder config: embed_dim must be divisible by 4");
    if (cfg.image_size % cfg.patch_size != 0)
        throw ConfigError("encoder config: image_size must be divisible by patch_size");
    if (cfg.mlp_hidden() == 0) throw ConfigError("encoder config: mlp_ratio too small");
}

void validate(const DecoderConfig& cfg) {
    if (cfg.width == 0 || cfg.depth == 0 || cfg.heads == 0) throw ConfigError("decoder config: sizes must be positive");
    if (cfg.width % cfg.heads != 0) throw ConfigError("decoder config: width must be divisible by heads");
    if (cfg.width % 4 != 0) throw ConfigError("decoder config: width must be divisible by 4");
    if (cfg.mlp_hidden() == 0) throw ConfigError("decoder config: mlp_ratio too small");
}

// ---------------------------------------------------------------------------
// Parameter enumeration

namespace {

template <typename M, typename Params>
std::vector<BasicParamRef<M>> collect_refs(Params& p) {
    std::vector<BasicParamRef<M>> out;
    auto add = [&](std::string name, M& t, ParamGroup g, bool trainable, bool decays) {
        out.push_back({std::move(name), &t, g, trainable, decays});
    };
    auto add_linear = [&](const std::string& name, auto& lin, ParamGroup g) {
        add(name + ".weight", lin.weight, g, true, true);
        add(name + ".bias", lin.bias, g, true, false);
    };
    auto add_blocks = [&](const std::string& prefix, auto& blocks, ParamGroup g) {
        for (Index i = 0; i < blocks.size(); ++i) {
            const std::string b = prefix + ".blocks." + std::to_string(i);
            auto& blk = blocks[i];
            add(b + ".ln1.gain", blk.ln1_gain, g, true, false);
            add(b + ".ln1.shift", blk.ln1_shift, g, true, false);
            add_linear(b + ".attn.qkv", blk.qkv, g);
            add_linear(b + ".attn.proj", blk.proj, g);
            add(b + ".ln2.gain", blk.ln2_gain, g, true, false);
            add(b + ".ln2.shift", blk.ln2_shift, g, true, false);
            add_linear(b + ".mlp.fc1", blk.fc1, g);
            add_linear(b + ".mlp.fc2", blk.fc2, g);
        }
    };
    constexpr auto E = ParamGroup::encoder;
    constexpr auto D = ParamGroup::decoder;
    add_linear("encoder.patch_embed", p.encoder.patch_embed, E);
    add("encoder.pos_embed", p.encoder.pos, E, false, false);
    add_blocks("encoder", p.encoder.blocks, E);
    add("encoder.norm.gain", p.encoder.norm_gain, E, true, false);
    add("encoder.norm.shift", p.encoder.norm_shift, E, true, false);

    add_linear("decoder.embed", p.decoder.embed, D);
    add("decoder.mask_token", p.decoder.mask_token, D, true, false);
    add("decoder.pos_embed", p.decoder.pos, D, false, false);
    add_blocks("decoder", p.decoder.blocks, D);
    add("decoder.norm.gain", p.decoder.norm_gain, D, true, false);
    add("decoder.norm.shift", p.decoder.norm_shift, D, true, false);
    add_linear("decoder.pred", p.decoder.pred, D);

    add_linear("head.fc", p.head.fc, ParamGroup::head);
    return out;
}

}  // namespace

std::vector<ParamRef> ModelParams::refs() { return collect_refs<Mat>(*this); }
std::vector<ConstParamRef> ModelParams::refs() const { return collect_refs<const Mat>(*this); }

ModelParams ModelParams::zeros_like() const {
    ModelParams z = *this;
    z.set_zero();
    return z;
}

void ModelParams::set_zero() {
    for (auto& r : refs()) r.tensor->fill(0);
}

void ModelParams::add(const ModelParams& other) {
    auto mine = refs();
    auto theirs = other.refs();
    if (mine.size() != theirs.size()) throw std::invalid_argument("ModelParams::add: structure mismatch");
    for (Index i = 0; i < mine.size(); ++i) *mine[i].tensor += *theirs[i].tensor;
}

bool ModelParams::all_finite() const {
    for (const auto& r : refs())
        for (Real v : r.tensor->values())
            if (!std::isfinite(v)) return false;
    return true;
}

void ModelParams::round_to_storage_precision() {
    for (auto& r : refs())
        for (Real& v : r.tensor->values()) v = static_cast<Real>(static_cast<float>(v));
}

bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.encoder_cfg == b.encoder_cfg) || !(a.decoder_cfg == b.decoder_cfg)) return false;
    auto ra = a.refs();
    auto rb = b.refs();
    if (ra.size() != rb.size()) return false;
    for (Index i = 0; i < ra.size(); ++i)
        if (!(*ra[i].tensor == *rb[i].tensor)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Initialization

Mat sinusoidal_positions_2d(Index grid_rows, Index grid_cols, Index dim) {
    if (dim % 4 != 0) throw std::invalid_argument("sinusoidal_positions_2d: dim must be divisible by 4");
    const Index quarter = dim / 4;
    Mat pos(grid_rows * grid_cols, dim);
    for (Index r = 0; r < grid_rows; ++r)
        for (Index c = 0; c < grid_cols; ++c) {
            auto row = pos.row(r * grid_cols + c);
            for (Index k = 0; k < quarter; ++k) {
                const Real omega = 1.0 / std::pow(10000.0, static_cast<Real>(k) / static_cast<Real>(quarter));
                row[k] = std::sin(static_cast<Real>(r) * omega);
                row[quarter + k] = std::cos(static_cast<Real>(r) * omega);
                row[2 * quarter + k] = std::sin(static_cast<Real>(c) * omega);
                row[3 * quarter + k] = std::cos(static_cast<Real>(c) * omega);
            }
        }
    return pos;
}

namespace {

constexpr Real init_std = 0.02;

void trunc_normal(Mat& m, std::mt19937_64& rng) {
    std::normal_distribution<Real> nd(0, init_std);
    for (Real& v : m.values()) {
        Real x;
        do x = nd(rng);
        while (std::abs(x) > 2 * init_std);
        v = x;
    }
}

Linear make_linear(Index in, Index out, std::mt19937_64& rng) {
    Linear l{Mat(in, out), Mat(1, out)};
    trunc_normal(l.weight, rng);
    return l;
}

BlockParams make_block(Index dim, Index hidden, std::mt19937_64& rng) {
    BlockParams b;
    b.ln1_gain = Mat(1, dim, 1.0);
    b.ln1_shift = Mat(1, dim);
    b.qkv = make_linear(dim, 3 * dim, rng);
    b.proj = make_linear(dim, dim, rng);
    b.ln2_gain = Mat(1, dim, 1.0);
    b.ln2_shift = Mat(1, dim);
    b.fc1 = make_linear(dim, hidden, rng);
    b.fc2 = make_linear(hidden, dim, rng);
    return b;
}

}  // namespace

ModelParams init_params(const EncoderConfig& enc, const DecoderConfig& dec, std::uint64_t seed) {
    validate(enc);
    validate(dec);
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.encoder_cfg = enc;
    p.decoder_cfg = dec;
    const Index E = enc.embed_dim;
    const Index W = dec.width;
    const Index g = enc.grid();

    p.encoder.patch_embed = make_linear(enc.token_dim(), E, rng);
    p.encoder.pos = sinusoidal_positions_2d(g, g, E);
    for (Index i = 0; i < enc.depth; ++i) p.encoder.blocks.push_back(make_block(E, enc.mlp_hidden(), rng));
    p.encoder.norm_gain = Mat(1, E, 1.0);
    p.encoder.norm_shift = Mat(1, E);

    p.decoder.embed = make_linear(E, W, rng);
    p.decoder.mask_token = Mat(1, W);
    trunc_normal(p.decoder.mask_token, rng);
    p.decoder.pos = sinusoidal_positions_2d(g, g, W);
    for (Index i = 0; i < dec.depth; ++i) p.decoder.blocks.push_back(make_block(W, dec.mlp_hidden(), rng));
    p.decoder.norm_gain = Mat(1, W, 1.0);
    p.decoder.norm_shift = Mat(1, W);
    p.decoder.pred = make_linear(W, enc.token_dim(), rng);

    p.head.fc = make_linear(E, 2, rng);
    return p;
}

void reset_head(ModelParams& params, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    params.head.fc = make_linear(params.encoder_cfg.embed_dim, 2, rng);
}

// ---------------------------------------------------------------------------
// Transformer block

namespace {

Mat linear_forward(const Linear& l, const Mat& x) {
    Mat y = matmul(x, l.weight);
    kernels::add_row_bias(y, l.bias);
    return y;
}

// Accumulates weight/bias gradients and returns dx.
Mat linear_backward(const Linear& l, const Mat& x, const Mat& dy, Linear& g) {
    matmul_tn_acc(x, dy, g.weight);
    kernels::accumulate_col_sums(dy, g.bias);
    return matmul_nt(dy, l.weight);
}

Mat slice_cols(const Mat& m, Index start, Index count) {
    Mat out(m.rows(), count);
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < count; ++c) out(r, c) = m(r, start + c);
    return out;
}

void write_cols(Mat& dst, Index start, const Mat& src) {
    for (Index r = 0; r < src.rows(); ++r)
        for (Index c = 0; c < src.cols(); ++c) dst(r, start + c) = src(r, c);
}

}  // namespace

Mat block_forward(const BlockParams& p, Index heads, const Mat& x, BlockCache* cache) {
    const Index T = x.rows();
    const Index D = x.cols();
    const Index hd = D / heads;
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(hd));

    BlockCache local;
    BlockCache& c = cache ? *cache : local;

    c.a1 = kernels::layer_norm(x, p.ln1_gain, p.ln1_shift, &c.ln1);
    c.qkv = linear_forward(p.qkv, c.a1);
    c.ctx = Mat(T, D);
    c.attn.assign(heads, Mat());
    for (Index h = 0; h < heads; ++h) {
        const Mat q = slice_cols(c.qkv, h * hd, hd);
        const Mat k = slice_cols(c.qkv, D + h * hd, hd);
        const Mat v = slice_cols(c.qkv, 2 * D + h * hd, hd);
        Mat s = matmul_nt(q, k);
        for (Real& e : s.values()) e *= scale;
        kernels::softmax_rows(s);
        write_cols(c.ctx, h * hd, matmul(s, v));
        c.attn[h] = std::move(s);
    }
    Mat h1 = linear_forward(p.proj, c.ctx);
    h1 += x;

    c.a2 = kernels::layer_norm(h1, p.ln2_gain, p.ln2_shift, &c.ln2);
    c.pre_act = linear_forward(p.fc1, c.a2);
    c.act = c.pre_act;
    for (Real& e : c.act.values()) e = kernels::gelu(e);
    Mat y = linear_forward(p.fc2, c.act);
    y += h1;
    return y;
}

Mat block_backward(const BlockParams& p, Index heads, const BlockCache& c, const Mat& dy, BlockParams& g) {
    const Index D = dy.cols();
    const Index hd = D / heads;
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(hd));

    // MLP branch
    Mat dact = linear_backward(p.fc2, c.act, dy, g.fc2);
    for (Index i = 0; i < dact.size(); ++i) dact.values()[i] *= kernels::gelu_grad(c.pre_act.values()[i]);
    Mat da2 = linear_backward(p.fc1, c.a2, dact, g.fc1);
    Mat dh1 = kernels::layer_norm_backward(da2, p.ln2_gain, c.ln2, g.ln2_gain, g.ln2_shift);
    dh1 += dy;

    // Attention branch
    const Mat dctx = linear_backward(p.proj, c.ctx, dh1, g.proj);
    Mat dqkv(c.qkv.rows(), c.qkv.cols());
    for (Index h = 0; h < heads; ++h) {
        const Mat q = slice_cols(c.qkv, h * hd, hd);
        const Mat k = slice_cols(c.qkv, D + h * hd, hd);
        const Mat v = slice_cols(c.qkv, 2 * D + h * hd, hd);
        const Mat& P = c.attn[h];
        const Mat dout = slice_cols(dctx, h * hd, hd);
        const Mat dP = matmul_nt(dout, v);
        const Mat dv = matmul_tn(P, dout);
        Mat ds(P.rows(), P.cols());
        for (Index r = 0; r < P.rows(); ++r) {
            Real dot = 0;
            for (Index col = 0; col < P.cols(); ++col) dot += dP(r, col) * P(r, col);
            for (Index col = 0; col < P.cols(); ++col) ds(r, col) = P(r, col) * (dP(r, col) - dot) * scale;
        }
        write_cols(dqkv, h * hd, matmul(ds, k));
        write_cols(dqkv, D + h * hd, matmul_tn(ds, q));
        write_cols(dqkv, 2 * D + h * hd, dv);
    }
    const Mat da1 = linear_backward(p.qkv, c.a1, dqkv, g.qkv);
    Mat dx = kernels::layer_norm_backward(da1, p.ln1_gain, c.ln1, g.ln1_gain, g.ln1_shift);
    dx += dh1;
    return dx;
}

// ---------------------------------------------------------------------------
// Encoder / decoder

Mat encode(const ModelParams& params, const Mat& visible_tokens, std::span<const Index> visible_idx,
           EncoderCache* cache) {
    const auto& enc = params.encoder;
    if (visible_tokens.rows() == 0) throw std::invalid_argument("encode: need at least one visible token");
    if (visible_tokens.rows() != visible_idx.size()) throw std::invalid_argument("encode: token/index count mismatch");
    if (visible_tokens.cols() != params.encoder_cfg.token_dim())
        throw std::invalid_argument("encode: token dimension mismatch");

    Mat h = linear_forward(enc.patch_embed, visible_tokens);
    const Mat pos = gather_rows(enc.pos, visible_idx);  // throws on out-of-range positions
    h += pos;

    EncoderCache local;
    EncoderCache& c = cache ? *cache : local;
    if (cache) {
        c.tokens = visible_tokens;
        c.idx.assign(visible_idx.begin(), visible_idx.end());
    }
    c.blocks.assign(enc.blocks.size(), BlockCache{});
    for (Index b = 0; b < enc.blocks.size(); ++b)
        h = block_forward(enc.blocks[b], params.encoder_cfg.heads, h, cache ? &c.blocks[b] : nullptr);
    Mat latent = kernels::layer_norm(h, enc.norm_gain, enc.norm_shift, cache ? &c.norm : nullptr);
    if (cache) c.block_out = std::move(h);
    return latent;
}

Mat encode_backward_to_block_out(const ModelParams& params, const EncoderCache& cache, const Mat& dlatent,
                                 ModelParams& grads) {
    return kernels::layer_norm_backward(dlatent, params.encoder.norm_gain, cache.norm, grads.encoder.norm_gain,
                                        grads.encoder.norm_shift);
}

void encode_backward(const ModelParams& params, const EncoderCache& cache, const Mat& dlatent, ModelParams& grads) {
    Mat dh = encode_backward_to_block_out(params, cache, dlatent, grads);
    for (Index b = params.encoder.blocks.size(); b-- > 0;)
        dh = block_backward(params.encoder.blocks[b], params.encoder_cfg.heads, cache.blocks[b], dh,
                            grads.encoder.blocks[b]);
    matmul_tn_acc(cache.tokens, dh, grads.encoder.patch_embed.weight);
    kernels::accumulate_col_sums(dh, grads.encoder.patch_embed.bias);
}

Mat decode(const ModelParams& params, const Mat& latent, const MaskPlan& plan, DecoderCache* cache) {
    const auto& dec = params.decoder;
    const Index n = params.encoder_cfg.num_tokens();
    if (plan.n() != n) throw std::invalid_argument("decode: plan size does not match token grid");
    if (latent.rows() != plan.visible_idx.size() || latent.cols() != params.encoder_cfg.embed_dim)
        throw std::invalid_argument("decode: latent inconsistent with mask plan");

    const Mat z = linear_forward(dec.embed, latent);
    const Index W = params.decoder_cfg.width;
    Mat h(n, W);
    for (Index i = 0; i < plan.visible_idx.size(); ++i)
        std::copy_n(z.row(i).data(), W, h.row(plan.visible_idx[i]).data());
    for (Index m : plan.masked_idx) std::copy_n(dec.mask_token.data(), W, h.row(m).data());
    h += dec.pos;

    DecoderCache local;
    DecoderCache& c = cache ? *cache : local;
    if (cache) {
        c.plan = plan;
        c.latent = latent;
    }
    c.blocks.assign(dec.blocks.size(), BlockCache{});
    for (Index b = 0; b < dec.blocks.size(); ++b)
        h = block_forward(dec.blocks[b], params.decoder_cfg.heads, h, cache ? &c.blocks[b] : nullptr);
    Mat normed = kernels::layer_norm(h, dec.norm_gain, dec.norm_shift, cache ? &c.norm : nullptr);
    Mat pred = linear_forward(dec.pred, normed);
    if (cache) c.normed = std::move(normed);
    return pred;
}

Mat decode_backward(const ModelParams& params, const DecoderCache& c, const Mat& dpred, ModelParams& grads) {
    const auto& dec = params.decoder;
    auto& g = grads.decoder;
    const Mat dnormed = linear_backward(dec.pred, c.normed, dpred, g.pred);
    Mat dh = kernels::layer_norm_backward(dnormed, dec.norm_gain, c.norm, g.norm_gain, g.norm_shift);
    for (Index b = dec.blocks.size(); b-- > 0;)
        dh = block_backward(dec.blocks[b], params.decoder_cfg.heads, c.blocks[b], dh, g.blocks[b]);

    const Index W = params.decoder_cfg.width;
    for (Index m : c.plan.masked_idx)
        for (Index k = 0; k < W; ++k) g.mask_token(0, k) += dh(m, k);
    const Mat dz = gather_rows(dh, c.plan.visible_idx);
    return linear_backward(dec.embed, c.latent, dz, g.embed);
}

// ---------------------------------------------------------------------------
// Aggregation and classification

namespace {

std::vector<Real> mean_rows(const Mat& m) {
    std::vector<Real> mean(m.cols(), 0.0);
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) mean[c] += m(r, c);
    for (Real& v : mean) v /= static_cast<Real>(m.rows());
    return mean;
}

Real l2_norm(std::span<const Real> v) {
    Real s = 0;
    for (Real x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

AggregateFeature aggregate(const Mat& latent) {
    if (latent.rows() == 0) throw std::invalid_argument("aggregate: empty latent");
    AggregateFeature f{mean_rows(latent), true};
    const Real norm = l2_norm(f.vector);
    if (norm == 0) throw std::domain_error("aggregate: zero-norm mean feature");
    for (Real& v : f.vector) v /= norm;
    return f;
}

Mat aggregate_backward(const Mat& latent, std::span<const Real> dfeature) {
    const auto mean = mean_rows(latent);
    const Real norm = l2_norm(mean);
    Real dot = 0;
    for (Index c = 0; c < mean.size(); ++c) dot += mean[c] / norm * dfeature[c];
    Mat d(latent.rows(), latent.cols());
    const auto rows = static_cast<Real>(latent.rows());
    for (Index c = 0; c < mean.size(); ++c) {
        const Real dmean = (dfeature[c] - mean[c] / norm * dot) / norm;
        for (Index r = 0; r < latent.rows(); ++r) d(r, c) = dmean / rows;
    }
    return d;
}

Logits classify_tokens(const ModelParams& params, const TokenSequence& seq, ClassifierCache* cache) {
    const MaskPlan plan = all_visible(seq.count());
    ClassifierCache local;
    ClassifierCache& c = cache ? *cache : local;
    c.latent = encode(params, seq.tokens, plan.visible_idx, cache ? &c.encoder : nullptr);
    c.pooled = mean_rows(c.latent);
    Logits logits{};
    for (Index k = 0; k < 2; ++k) {
        Real s = params.head.fc.bias(0, k);
        for (Index e = 0; e < c.pooled.size(); ++e) s += c.pooled[e] * params.head.fc.weight(e, k);
        logits[k] = s;
    }
    return logits;
}

Logits classify(const ModelParams& params, const Image& image) {
    return classify_tokens(params, patchify(image, params.encoder_cfg.patch_size));
}

namespace {

Mat pooled_backward_to_latent(const ModelParams& params, const ClassifierCache& c, const Logits& dlogits) {
    const Index E = c.pooled.size();
    const auto rows = static_cast<Real>(c.latent.rows());
    Mat dlatent(c.latent.rows(), E);
    for (Index e = 0; e < E; ++e) {
        const Real dp = dlogits[0] * params.head.fc.weight(e, 0) + dlogits[1] * params.head.fc.weight(e, 1);
        for (Index r = 0; r < c.latent.rows(); ++r) dlatent(r, e) = dp / rows;
    }
    return dlatent;
}

}  // namespace

void classify_backward(const ModelParams& params, const ClassifierCache& c, const Logits& dlogits,
                       ModelParams& grads, bool through_encoder) {
    for (Index e = 0; e < c.pooled.size(); ++e)
        for (Index k = 0; k < 2; ++k) grads.head.fc.weight(e, k) += c.pooled[e] * dlogits[k];
    for (Index k = 0; k < 2; ++k) grads.head.fc.bias(0, k) += dlogits[k];
    if (!through_encoder) return;
    encode_backward(params, c.encoder, pooled_backward_to_latent(params, c, dlogits), grads);
}

Mat classify_backward_to_block_out(const ModelParams& params, const ClassifierCache& c, const Logits& dlogits) {
    ModelParams scratch;
    scratch.encoder.norm_gain = Mat(1, params.encoder_cfg.embed_dim);
    scratch.encoder.norm_shift = Mat(1, params.encoder_cfg.embed_dim);
    return encode_backward_to_block_out(params, c.encoder, pooled_backward_to_latent(params, c, dlogits), scratch);
}

std::array<Real, 2> softmax(const Logits& logits) {
    const Real m = std::max(logits[0], logits[1]);
    const Real e0 = std::exp(logits[0] - m);
    const Real e1 = std::exp(logits[1] - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace mcae
