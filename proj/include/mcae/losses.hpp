#pragma once

#include <span>

#include "mcae/mat.hpp"
#include "mcae/tokenizer.hpp"

namespace mcae {

struct ContrastiveConfig {
    Real temperature = 0.1;
    Real lambda_live_cross = 2.0;  // live positive from another domain
    Real lambda_live_same = 1.0;   // live positive from the same domain
    Real lambda_spoof = 1.0;       // spoof positive (any domain)
    bool include_spoof_positives = true;
};

void validate(const ContrastiveConfig& cfg);

enum class Stage { rec_only, rec_plus_con };

const char* to_string(Stage s);

struct LossReport {
    Real rec = 0;
    Real con = 0;
    Real total = 0;
    Stage stage = Stage::rec_only;
};

/// Masked reconstruction loss: (1/n) Σ_i e_i · 1_mask(i), with e_i the mean
/// squared error over the token's dimensions. `pred` and `target` are n × d.
/// When `grad` is non-null it receives dL/dpred (zero rows at visible positions).
Real reconstruction_loss(const Mat& pred, const Mat& target, const MaskPlan& plan, Mat* grad = nullptr);

/// Pairwise cosine similarities of the rows of `features`.
Mat cosine_similarity_matrix(const Mat& features);

/// Positive-pair weight λ(i, j) for anchor i and positive j; 0 means the pair is not counted.
Real pair_weight(Label anchor_label, int anchor_domain, int positive_domain, const ContrastiveConfig& cfg);

/// Domain-weighted supervised contrastive loss over L2-normalized rows of
/// `features`. Each sample is an anchor; for every positive j (same label,
/// j ≠ i) the pair term is
///   −log( λ e^{s_ij/τ} / (λ e^{s_ij/τ} + Σ_{k: y_k ≠ y_i} e^{s_ik/τ}) )
/// and the loss is the mean over counted pairs (0 when there are none).
/// When `grad` is non-null it receives dL/dfeatures.
Real supcon_loss(const Mat& features, std::span<const Label> labels, std::span<const int> domains,
                 const ContrastiveConfig& cfg, Mat* grad = nullptr);

LossReport total_loss(Real rec, Real con, Real beta, Stage stage);

}  // namespace mcae
