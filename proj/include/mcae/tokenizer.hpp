#pragma once

#include <random>
#include <vector>

#include "mcae/data.hpp"
#include "mcae/mat.hpp"

namespace mcae {

// n × (3·P²) matrix of flattened patch pixels, patches in row-major grid order,
// each patch flattened as (row, col, channel).
struct TokenSequence {
    Mat tokens;
    Index grid_rows = 0;
    Index grid_cols = 0;
    Index patch_size = 0;

    Index count() const { return tokens.rows(); }
};

struct MaskPlan {
    std::vector<Index> visible_idx;  // sorted
    std::vector<Index> masked_idx;   // sorted
    Real ratio = 0;

    Index n() const { return visible_idx.size() + masked_idx.size(); }
};

TokenSequence patchify(const Image& image, Index patch_size);
Image unpatchify(const TokenSequence& seq);

// round-half-up(ratio · n)
Index masked_count(Index n, Real ratio);

MaskPlan sample_mask(Index n, Real ratio, std::mt19937_64& rng);
MaskPlan all_visible(Index n);

// 1 if token i is masked under the plan, else 0.
int indicator_mask(Index i, const MaskPlan& plan);

struct MaskedTokens {
    Mat visible;  // rows of the sequence at plan.visible_idx
    Mat masked;   // rows at plan.masked_idx (reconstruction targets)
};

MaskedTokens apply_mask(const TokenSequence& seq, const MaskPlan& plan);

// Inverse of apply_mask: writes visible/masked rows back into an n × d matrix.
Mat scatter_tokens(const Mat& visible, const Mat& masked, const MaskPlan& plan);

}  // namespace mcae
