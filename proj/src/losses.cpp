#include "mcae/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mcae/kernels.hpp"

namespace mcae {

void validate(const ContrastiveConfig& cfg) {
    if (!(cfg.temperature > 0)) throw ConfigError("contrastive temperature must be positive");
    if (cfg.lambda_live_cross < 0 || cfg.lambda_live_same < 0 || cfg.lambda_spoof < 0)
        throw ConfigError("contrastive weights must be non-negative");
}

const char* to_string(Stage s) { return s == Stage::rec_only ? "rec_only" : "rec_plus_con"; }

Real reconstruction_loss(const Mat& pred, const Mat& target, const MaskPlan& plan, Mat* grad) {
    if (!pred.same_shape(target)) throw std::invalid_argument("reconstruction_loss: shape mismatch");
    if (pred.rows() != plan.n()) throw std::invalid_argument("reconstruction_loss: plan does not match token count");
    const auto n = static_cast<Real>(pred.rows());
    const auto d = static_cast<Real>(pred.cols());
    if (grad) *grad = Mat(pred.rows(), pred.cols());
    Real loss = 0;
    for (Index i : plan.masked_idx) {
        Real e = 0;
        for (Index c = 0; c < pred.cols(); ++c) {
            const Real diff = pred(i, c) - target(i, c);
            e += diff * diff;
            if (grad) (*grad)(i, c) = 2.0 * diff / (n * d);
        }
        loss += e / d;
    }
    return loss / n;
}

Mat cosine_similarity_matrix(const Mat& features) {
    const Index N = features.rows();
    std::vector<Real> norms(N);
    for (Index i = 0; i < N; ++i) {
        Real s = 0;
        for (Real v : features.row(i)) s += v * v;
        if (s == 0) throw std::domain_error("cosine_similarity_matrix: zero-norm row");
        norms[i] = std::sqrt(s);
    }
    Mat sim(N, N);
    for (Index i = 0; i < N; ++i)
        for (Index j = i; j < N; ++j) {
            Real dot = 0;
            for (Index c = 0; c < features.cols(); ++c) dot += features(i, c) * features(j, c);
            const Real s = i == j ? 1.0 : std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
            sim(i, j) = s;
            sim(j, i) = s;
        }
    return sim;
}

Real pair_weight(Label anchor_label, int anchor_domain, int positive_domain, const ContrastiveConfig& cfg) {
    if (anchor_label == Label::spoof) return cfg.include_spoof_positives ? cfg.lambda_spoof : 0.0;
    return anchor_domain == positive_domain ? cfg.lambda_live_same : cfg.lambda_live_cross;
}

Real supcon_loss(const Mat& features, std::span<const Label> labels, std::span<const int> domains,
                 const ContrastiveConfig& cfg, Mat* grad) {
    validate(cfg);
    const Index N = features.rows();
    if (N < 2) throw std::invalid_argument("supcon_loss: need at least 2 samples");
    if (labels.size() != N || domains.size() != N) throw std::invalid_argument("supcon_loss: length mismatch");
    for (Index i = 0; i < N; ++i) {
        Real s = 0;
        for (Real v : features.row(i)) s += v * v;
        if (std::abs(std::sqrt(s) - 1.0) > 1e-4) throw std::invalid_argument("supcon_loss: features must be L2-normalized");
    }

    const Real tau = cfg.temperature;
    const Mat s = kernels::matmul_nt(features, features);
    Mat ds(N, N);  // dL/ds_ij before the 1/pairs factor
    Real total = 0;
    Index pairs = 0;
    std::vector<Index> negatives;
    for (Index i = 0; i < N; ++i) {
        negatives.clear();
        for (Index k = 0; k < N; ++k)
            if (labels[k] != labels[i]) negatives.push_back(k);
        Real neg_max = -std::numeric_limits<Real>::infinity();
        for (Index k : negatives) neg_max = std::max(neg_max, s(i, k) / tau);

        for (Index j = 0; j < N; ++j) {
            if (j == i || labels[j] != labels[i]) continue;
            const Real lambda = pair_weight(labels[i], domains[i], domains[j], cfg);
            if (lambda <= 0) continue;
            const Real a = s(i, j) / tau + std::log(lambda);
            const Real m = std::max(a, neg_max);
            Real z = std::exp(a - m);
            for (Index k : negatives) z += std::exp(s(i, k) / tau - m);
            const Real log_z = m + std::log(z);
            total += log_z - a;
            ++pairs;
            if (grad) {
                ds(i, j) += (std::exp(a - log_z) - 1.0) / tau;
                for (Index k : negatives) ds(i, k) += std::exp(s(i, k) / tau - log_z) / tau;
            }
        }
    }
    if (pairs == 0) {
        if (grad) *grad = Mat(N, features.cols());
        return 0;
    }
    const Real inv = 1.0 / static_cast<Real>(pairs);
    if (grad) {
        for (Real& v : ds.values()) v *= inv;
        // s_ij = f_i · f_j  ⇒  df_i += ds_ij f_j, df_j += ds_ij f_i
        Mat sym(N, N);
        for (Index i = 0; i < N; ++i)
            for (Index j = 0; j < N; ++j) sym(i, j) = ds(i, j) + ds(j, i);
        *grad = kernels::matmul(sym, features);
    }
    return total * inv;
}

LossReport total_loss(Real rec, Real con, Real beta, Stage stage) {
    if (beta < 0) throw ConfigError("beta must be non-negative");
    if (stage == Stage::rec_only) return {rec, 0, rec, stage};
    return {rec, con, rec + beta * con, stage};
}

}  // namespace mcae
