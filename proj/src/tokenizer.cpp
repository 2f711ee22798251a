#include "mcae/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mcae {

TokenSequence patchify(const Image& image, Index patch_size) {
    if (patch_size == 0 || image.height % patch_size != 0 || image.width % patch_size != 0)
        throw std::invalid_argument("patchify: image size must be divisible by patch size");
    TokenSequence seq;
    seq.patch_size = patch_size;
    seq.grid_rows = image.height / patch_size;
    seq.grid_cols = image.width / patch_size;
    const Index dim = channels * patch_size * patch_size;
    seq.tokens = Mat(seq.grid_rows * seq.grid_cols, dim);
    for (Index gr = 0; gr < seq.grid_rows; ++gr)
        for (Index gc = 0; gc < seq.grid_cols; ++gc) {
            auto tok = seq.tokens.row(gr * seq.grid_cols + gc);
            Index k = 0;
            for (Index py = 0; py < patch_size; ++py)
                for (Index px = 0; px < patch_size; ++px)
                    for (Index c = 0; c < channels; ++c)
                        tok[k++] = image.at(gr * patch_size + py, gc * patch_size + px, c);
        }
    return seq;
}

Image unpatchify(const TokenSequence& seq) {
    const Index p = seq.patch_size;
    if (seq.tokens.rows() != seq.grid_rows * seq.grid_cols || seq.tokens.cols() != channels * p * p)
        throw std::invalid_argument("unpatchify: token matrix inconsistent with grid");
    Image img(seq.grid_rows * p, seq.grid_cols * p);
    for (Index gr = 0; gr < seq.grid_rows; ++gr)
        for (Index gc = 0; gc < seq.grid_cols; ++gc) {
            auto tok = seq.tokens.row(gr * seq.grid_cols + gc);
            Index k = 0;
            for (Index py = 0; py < p; ++py)
                for (Index px = 0; px < p; ++px)
                    for (Index c = 0; c < channels; ++c) img.at(gr * p + py, gc * p + px, c) = tok[k++];
        }
    return img;
}

Index masked_count(Index n, Real ratio) {
    // Nudge so exact halves such as 0.35·10 round up despite binary error in `ratio`.
    return static_cast<Index>(std::floor(ratio * static_cast<Real>(n) + 0.5 + 1e-9));
}

MaskPlan sample_mask(Index n, Real ratio, std::mt19937_64& rng) {
    if (n == 0) throw std::invalid_argument("sample_mask: n must be positive");
    if (!(ratio >= 0 && ratio < 1)) throw ConfigError("mask ratio must lie in [0, 1)");
    const Index k = std::min(masked_count(n, ratio), n - 1);
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    MaskPlan plan;
    plan.ratio = ratio;
    plan.masked_idx.assign(perm.begin(), perm.begin() + static_cast<long>(k));
    plan.visible_idx.assign(perm.begin() + static_cast<long>(k), perm.end());
    std::sort(plan.masked_idx.begin(), plan.masked_idx.end());
    std::sort(plan.visible_idx.begin(), plan.visible_idx.end());
    return plan;
}

MaskPlan all_visible(Index n) {
    MaskPlan plan;
    plan.visible_idx.resize(n);
    std::iota(plan.visible_idx.begin(), plan.visible_idx.end(), Index{0});
    return plan;
}

int indicator_mask(Index i, const MaskPlan& plan) {
    if (i >= plan.n()) throw std::out_of_range("indicator_mask: index out of range");
    return std::binary_search(plan.masked_idx.begin(), plan.masked_idx.end(), i) ? 1 : 0;
}

MaskedTokens apply_mask(const TokenSequence& seq, const MaskPlan& plan) {
    if (plan.n() != seq.count()) throw std::invalid_argument("apply_mask: plan size does not match sequence");
    return {gather_rows(seq.tokens, plan.visible_idx), gather_rows(seq.tokens, plan.masked_idx)};
}

Mat scatter_tokens(const Mat& visible, const Mat& masked, const MaskPlan& plan) {
    if (visible.rows() != plan.visible_idx.size() || masked.rows() != plan.masked_idx.size())
        throw std::invalid_argument("scatter_tokens: row counts do not match plan");
    const Index d = visible.rows() ? visible.cols() : masked.cols();
    Mat out(plan.n(), d);
    for (Index i = 0; i < plan.visible_idx.size(); ++i)
        std::copy_n(visible.row(i).data(), d, out.row(plan.visible_idx[i]).data());
    for (Index i = 0; i < plan.masked_idx.size(); ++i)
        std::copy_n(masked.row(i).data(), d, out.row(plan.masked_idx[i]).data());
    return out;
}

}  // namespace mcae
