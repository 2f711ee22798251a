#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcae/checkpoint.hpp"
#include "mcae/data.hpp"
#include "mcae/mat.hpp"
#include "mcae/model.hpp"

namespace mcae {

// ---------------------------------------------------------------------------
// Information quantities on finite alphabets

// Probability table over named variables, row-major with the last variable
// varying fastest.
class DiscreteJoint {
  public:
    DiscreteJoint(std::vector<std::string> names, std::vector<Index> sizes, std::vector<Real> pmf);

    const std::vector<std::string>& names() const { return names_; }
    const std::vector<Index>& sizes() const { return sizes_; }
    const std::vector<Real>& pmf() const { return pmf_; }

    Index index_of(const std::string& name) const;
    // Marginal over `vars` (in the given order).
    DiscreteJoint marginal(std::span<const std::string> vars) const;
    // Shannon entropy in bits of the marginal over `vars`.
    Real entropy(std::span<const std::string> vars) const;

  private:
    std::vector<std::string> names_;
    std::vector<Index> sizes_;
    std::vector<Real> pmf_;
};

// Joint over (x, y, z) = p(x) p(y|x) p(z|y); conditionals are row-stochastic
// matrices given as row-major vectors.
DiscreteJoint make_markov_chain(std::vector<std::string> names, std::span<const Real> p_x,
                                std::span<const Real> p_y_given_x, Index ny, std::span<const Real> p_z_given_y,
                                Index nz);

Real mutual_information(const DiscreteJoint& joint, std::span<const std::string> vars_a,
                        std::span<const std::string> vars_b);
Real mutual_information(const DiscreteJoint& joint, const std::string& a, const std::string& b);
Real conditional_mutual_information(const DiscreteJoint& joint, const std::string& a, const std::string& b,
                                    const std::string& given);

struct DpiReport {
    Real info_first_last = 0;   // I(first; last)
    Real info_middle_last = 0;  // I(middle; last)
    Real gap = 0;               // I(middle; last) − I(first; last)
    Real markov_residual = 0;   // I(first; last | middle)
    bool dpi_holds = false;     // I(first; last) ≤ I(middle; last)
    bool sandwich_holds = false;  // I(middle; last) − slack ≤ I(first; last) ≤ I(middle; last)
};

// For a Markov chain first – middle – last, processing the middle variable
// cannot create information about `last`: I(first; last) ≤ I(middle; last).
// Throws ConfigError when I(first; last | middle) exceeds `markov_tol`.
DpiReport verify_dpi_chain(const DiscreteJoint& joint, const std::string& first, const std::string& middle,
                           const std::string& last, Real slack, Real tol = 1e-10, Real markov_tol = 1e-10);

// ---------------------------------------------------------------------------
// Gaussian log-likelihood versus squared error

struct VariationalReport {
    Real sigma = 0;
    Index dim = 0;
    Real mean_log_q = 0;          // E[log Normal(x | μ, σ²I)]
    Real mean_squared_error = 0;  // E[‖x − μ‖²]
    Real c1 = 0;                  // −(d/2)·ln(2πσ²)
    Real c2 = 0;                  // 1/(2σ²)
    Real fitted_slope = 0;        // least squares of log q_i on ‖x_i − μ_i‖²
    Real fitted_intercept = 0;
    Real max_residual = 0;        // max_i |log q_i − (c1 − c2·‖x_i − μ_i‖²)|
};

VariationalReport variational_mse_equivalence(std::span<const std::vector<Real>> x,
                                              std::span<const std::vector<Real>> mu, Real sigma);

// ---------------------------------------------------------------------------
// Visualizations

inline constexpr Real mask_gray = 0.5;

// Rows of (original, masked view, reconstruction) triplets, each S×S.
Image render_reconstructions(const Checkpoint& checkpoint, std::span<const Image> images, Real mask_ratio,
                             std::uint64_t seed, const std::optional<std::filesystem::path>& out_path = std::nullopt);

struct AttentionMap {
    Mat heatmap;                      // S × S in [0, 1]
    std::vector<Real> token_scores;   // rectified per-token activation before upsampling
};

AttentionMap attention_map(const ModelParams& params, const Image& image, Label target_class);
void write_heatmap(const Mat& heatmap, const std::filesystem::path& path);

// Replaces the listed patches with gray.
Image mask_patches(const Image& image, Index patch_size, std::span<const Index> patches);

struct EmbeddingCloud {
    Mat points;  // N × 2
    std::vector<Label> labels;
    std::vector<int> domains;
};

struct TsneTrace {
    std::vector<Real> kl;  // KL(P‖Q) after every iteration, unexaggerated
    Index exaggeration_iters = 0;
};

inline constexpr Real tsne_exaggeration = 12.0;

EmbeddingCloud tsne_embed(const Mat& features, Real perplexity, Index iters, std::uint64_t seed,
                          TsneTrace* trace = nullptr);

void write_embedding_csv(const EmbeddingCloud& cloud, const std::filesystem::path& path);

}  // namespace mcae
