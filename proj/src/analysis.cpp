#include "mcae/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <tuple>

#include "mcae/tokenizer.hpp"

namespace mcae {

// ---------------------------------------------------------------------------
// DiscreteJoint

DiscreteJoint::DiscreteJoint(std::vector<std::string> names, std::vector<Index> sizes, std::vector<Real> pmf)
    : names_(std::move(names)), sizes_(std::move(sizes)), pmf_(std::move(pmf)) {
    if (names_.size() != sizes_.size() || names_.empty())
        throw ConfigError("DiscreteJoint: need one size per variable name");
    for (Index i = 0; i < names_.size(); ++i)
        for (Index j = i + 1; j < names_.size(); ++j)
            if (names_[i] == names_[j]) throw ConfigError("DiscreteJoint: duplicate variable " + names_[i]);
    Index cells = 1;
    for (Index s : sizes_) {
        if (s == 0) throw ConfigError("DiscreteJoint: empty alphabet");
        cells *= s;
    }
    if (pmf_.size() != cells) throw ConfigError("DiscreteJoint: table size does not match alphabet sizes");
    Real total = 0;
    for (Real p : pmf_) {
        if (!(p >= 0)) throw ConfigError("DiscreteJoint: negative or NaN probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("DiscreteJoint: probabilities sum to " + format_real(total));
}

Index DiscreteJoint::index_of(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ConfigError("unknown variable: " + name);
    return static_cast<Index>(it - names_.begin());
}

DiscreteJoint DiscreteJoint::marginal(std::span<const std::string> vars) const {
    std::vector<Index> axes;
    std::vector<std::string> names;
    std::vector<Index> sizes;
    for (const auto& v : vars) {
        axes.push_back(index_of(v));
        names.push_back(v);
        sizes.push_back(sizes_[axes.back()]);
    }
    Index cells = 1;
    for (Index s : sizes) cells *= s;
    std::vector<Real> out(cells, 0.0);
    std::vector<Index> digit(sizes_.size(), 0);
    for (Index flat = 0; flat < pmf_.size(); ++flat) {
        Index rem = flat;
        for (Index k = sizes_.size(); k-- > 0;) {
            digit[k] = rem % sizes_[k];
            rem /= sizes_[k];
        }
        Index target = 0;
        for (Index k = 0; k < axes.size(); ++k) target = target * sizes[k] + digit[axes[k]];
        out[target] += pmf_[flat];
    }
    // Re-summing can drift by a few ulps; renormalize so the invariant holds.
    const Real total = std::accumulate(out.begin(), out.end(), 0.0);
    for (Real& p : out) p /= total;
    return DiscreteJoint(std::move(names), std::move(sizes), std::move(out));
}

Real DiscreteJoint::entropy(std::span<const std::string> vars) const {
    if (vars.empty()) return 0.0;
    const DiscreteJoint m = marginal(vars);
    Real h = 0;
    for (Real p : m.pmf())
        if (p > 0) h -= p * std::log2(p);
    return h;
}

DiscreteJoint make_markov_chain(std::vector<std::string> names, std::span<const Real> p_x,
                                std::span<const Real> p_y_given_x, Index ny, std::span<const Real> p_z_given_y,
                                Index nz) {
    const Index nx = p_x.size();
    if (names.size() != 3) throw ConfigError("make_markov_chain: need three variable names");
    if (p_y_given_x.size() != nx * ny || p_z_given_y.size() != ny * nz)
        throw ConfigError("make_markov_chain: conditional table has the wrong shape");
    std::vector<Real> pmf(nx * ny * nz);
    for (Index x = 0; x < nx; ++x)
        for (Index y = 0; y < ny; ++y)
            for (Index z = 0; z < nz; ++z)
                pmf[(x * ny + y) * nz + z] = p_x[x] * p_y_given_x[x * ny + y] * p_z_given_y[y * nz + z];
    return DiscreteJoint(std::move(names), {nx, ny, nz}, std::move(pmf));
}

namespace {

std::vector<std::string> concat(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::string> out(a.begin(), a.end());
    for (const auto& v : b) {
        if (std::find(out.begin(), out.end(), v) != out.end())
            throw ConfigError("variable listed twice: " + v);
        out.push_back(v);
    }
    return out;
}

}  // namespace

Real mutual_information(const DiscreteJoint& joint, std::span<const std::string> vars_a,
                        std::span<const std::string> vars_b) {
    const auto both = concat(vars_a, vars_b);
    const Real mi = joint.entropy(vars_a) + joint.entropy(vars_b) - joint.entropy(both);
    return std::max(mi, 0.0);
}

Real mutual_information(const DiscreteJoint& joint, const std::string& a, const std::string& b) {
    const std::string va[] = {a};
    const std::string vb[] = {b};
    return mutual_information(joint, va, vb);
}

Real conditional_mutual_information(const DiscreteJoint& joint, const std::string& a, const std::string& b,
                                    const std::string& given) {
    const std::string ac[] = {a, given};
    const std::string bc[] = {b, given};
    const std::string abc[] = {a, b, given};
    const std::string c[] = {given};
    const Real cmi = joint.entropy(ac) + joint.entropy(bc) - joint.entropy(abc) - joint.entropy(c);
    return std::max(cmi, 0.0);
}

DpiReport verify_dpi_chain(const DiscreteJoint& joint, const std::string& first, const std::string& middle,
                           const std::string& last, Real slack, Real tol, Real markov_tol) {
    if (slack < 0) throw ConfigError("verify_dpi_chain: slack must be nonnegative");
    DpiReport r;
    r.markov_residual = conditional_mutual_information(joint, first, last, middle);
    if (r.markov_residual > markov_tol)
        throw ConfigError("verify_dpi_chain: joint is not a Markov chain " + first + " - " + middle + " - " + last +
                          " (conditional MI " + format_real(r.markov_residual) + " bits)");
    r.info_first_last = mutual_information(joint, first, last);
    r.info_middle_last = mutual_information(joint, middle, last);
    r.gap = r.info_middle_last - r.info_first_last;
    r.dpi_holds = r.info_first_last <= r.info_middle_last + tol;
    r.sandwich_holds = r.dpi_holds && r.info_middle_last - slack <= r.info_first_last + tol;
    return r;
}

// ---------------------------------------------------------------------------
// Gaussian log-likelihood

VariationalReport variational_mse_equivalence(std::span<const std::vector<Real>> x,
                                              std::span<const std::vector<Real>> mu, Real sigma) {
    if (!(sigma > 0)) throw ConfigError("variational_mse_equivalence: sigma must be positive");
    if (x.empty() || x.size() != mu.size()) throw ConfigError("variational_mse_equivalence: need paired samples");
    const Index d = x[0].size();
    for (Index i = 0; i < x.size(); ++i)
        if (x[i].size() != d || mu[i].size() != d) throw ConfigError("variational_mse_equivalence: ragged samples");

    VariationalReport r;
    r.sigma = sigma;
    r.dim = d;
    const Real var = sigma * sigma;
    r.c1 = -0.5 * static_cast<Real>(d) * std::log(2 * std::numbers::pi * var);
    r.c2 = 1.0 / (2 * var);

    const Index n = x.size();
    std::vector<Real> log_q(n), sq(n);
    const Real log_norm = -0.5 * std::log(2 * std::numbers::pi * var);
    for (Index i = 0; i < n; ++i) {
        Real lq = 0, e = 0;
        for (Index k = 0; k < d; ++k) {
            const Real diff = x[i][k] - mu[i][k];
            lq += log_norm - diff * diff / (2 * var);
            e += diff * diff;
        }
        log_q[i] = lq;
        sq[i] = e;
    }
    const auto nn = static_cast<Real>(n);
    r.mean_log_q = std::accumulate(log_q.begin(), log_q.end(), 0.0) / nn;
    r.mean_squared_error = std::accumulate(sq.begin(), sq.end(), 0.0) / nn;

    Real sxx = 0, sxy = 0;
    for (Index i = 0; i < n; ++i) {
        sxx += (sq[i] - r.mean_squared_error) * (sq[i] - r.mean_squared_error);
        sxy += (sq[i] - r.mean_squared_error) * (log_q[i] - r.mean_log_q);
    }
    // Undefined when every sample has the same error.
    r.fitted_slope = sxx > 0 ? sxy / sxx : std::numeric_limits<Real>::quiet_NaN();
    r.fitted_intercept = sxx > 0 ? r.mean_log_q - r.fitted_slope * r.mean_squared_error
                                 : std::numeric_limits<Real>::quiet_NaN();
    for (Index i = 0; i < n; ++i)
        r.max_residual = std::max(r.max_residual, std::abs(log_q[i] - (r.c1 - r.c2 * sq[i])));
    return r;
}

// ---------------------------------------------------------------------------
// Reconstructions

namespace {

void check_image_size(const Image& img, const EncoderConfig& cfg) {
    if (img.height != cfg.image_size || img.width != cfg.image_size)
        throw ConfigError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                          ", model expects " + std::to_string(cfg.image_size));
}

void paste(Image& dst, const Image& src, Index y0, Index x0) {
    for (Index y = 0; y < src.height; ++y)
        for (Index x = 0; x < src.width; ++x)
            for (Index c = 0; c < channels; ++c) dst.at(y0 + y, x0 + x, c) = src.at(y, x, c);
}

}  // namespace

Image render_reconstructions(const Checkpoint& checkpoint, std::span<const Image> images, Real mask_ratio,
                             std::uint64_t seed, const std::optional<std::filesystem::path>& out_path) {
    if (!checkpoint.has_decoder) throw ConfigError("render_reconstructions: checkpoint has no decoder");
    if (images.empty()) throw ConfigError("render_reconstructions: no images");
    const auto& params = checkpoint.params;
    const Index S = params.encoder_cfg.image_size;
    const Index P = params.encoder_cfg.patch_size;
    for (const auto& img : images) check_image_size(img, params.encoder_cfg);

    std::mt19937_64 rng(seed);
    std::vector<MaskPlan> plans;
    for (Index i = 0; i < images.size(); ++i) plans.push_back(sample_mask(params.encoder_cfg.num_tokens(), mask_ratio, rng));

    Image grid(images.size() * S, 3 * S);
#pragma omp parallel for schedule(static)
    for (long li = 0; li < static_cast<long>(images.size()); ++li) {
        const auto i = static_cast<Index>(li);
        const TokenSequence seq = patchify(images[i], P);
        const MaskPlan& plan = plans[i];
        const Mat latent = encode(params, gather_rows(seq.tokens, plan.visible_idx), plan.visible_idx);
        const Mat pred = decode(params, latent, plan);

        TokenSequence masked_view = seq;
        TokenSequence recon = seq;
        for (Index t : plan.masked_idx) {
            std::fill(masked_view.tokens.row(t).begin(), masked_view.tokens.row(t).end(), mask_gray);
            std::copy(pred.row(t).begin(), pred.row(t).end(), recon.tokens.row(t).begin());
        }
        paste(grid, images[i], i * S, 0);
        paste(grid, unpatchify(masked_view), i * S, S);
        paste(grid, unpatchify(recon), i * S, 2 * S);
    }
    if (out_path) write_image(grid, *out_path);
    return grid;
}

// ---------------------------------------------------------------------------
// Grad-CAM

AttentionMap attention_map(const ModelParams& params, const Image& image, Label target_class) {
    const auto& cfg = params.encoder_cfg;
    check_image_size(image, cfg);
    const TokenSequence seq = patchify(image, cfg.patch_size);
    ClassifierCache cache;
    classify_tokens(params, seq, &cache);
    Logits dlogits{0, 0};
    dlogits[static_cast<Index>(to_int(target_class))] = 1;
    const Mat grad = classify_backward_to_block_out(params, cache, dlogits);
    const Mat& act = cache.encoder.block_out;

    const Index n = act.rows();
    const Index E = act.cols();
    std::vector<Real> alpha(E, 0.0);
    for (Index t = 0; t < n; ++t)
        for (Index c = 0; c < E; ++c) alpha[c] += grad(t, c);
    for (Real& a : alpha) a /= static_cast<Real>(n);

    AttentionMap out;
    out.token_scores.assign(n, 0.0);
    for (Index t = 0; t < n; ++t) {
        Real s = 0;
        for (Index c = 0; c < E; ++c) s += alpha[c] * act(t, c);
        out.token_scores[t] = std::max(s, 0.0);
    }

    // Bilinear upsampling with token values at patch centres.
    const Index g = cfg.grid();
    const Index S = cfg.image_size;
    const auto P = static_cast<Real>(cfg.patch_size);
    out.heatmap = Mat(S, S);
    const auto sample = [&](Real v) {
        const Real pos = std::clamp((v + 0.5) / P - 0.5, 0.0, static_cast<Real>(g - 1));
        const auto lo = static_cast<Index>(std::floor(pos));
        const Index hi = std::min(lo + 1, g - 1);
        return std::tuple{lo, hi, pos - static_cast<Real>(lo)};
    };
    for (Index y = 0; y < S; ++y) {
        const auto [y0, y1, fy] = sample(static_cast<Real>(y));
        for (Index x = 0; x < S; ++x) {
            const auto [x0, x1, fx] = sample(static_cast<Real>(x));
            const auto at = [&](Index r, Index c) { return out.token_scores[r * g + c]; };
            const Real top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
            const Real bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
            out.heatmap(y, x) = top * (1 - fy) + bottom * fy;
        }
    }
    const auto [mn, mx] = std::minmax_element(out.heatmap.values().begin(), out.heatmap.values().end());
    const Real lo = *mn, range = *mx - *mn;
    for (Real& v : out.heatmap.values()) v = range > 0 ? (v - lo) / range : 0.0;
    return out;
}

void write_heatmap(const Mat& heatmap, const std::filesystem::path& path) {
    Image img(heatmap.rows(), heatmap.cols());
    for (Index y = 0; y < img.height; ++y)
        for (Index x = 0; x < img.width; ++x)
            for (Index c = 0; c < channels; ++c) img.at(y, x, c) = heatmap(y, x);
    write_image(img, path);
}

Image mask_patches(const Image& image, Index patch_size, std::span<const Index> patches) {
    Image out = image;
    const Index g = image.width / patch_size;
    for (Index p : patches) {
        const Index r = p / g, c = p % g;
        for (Index y = r * patch_size; y < (r + 1) * patch_size; ++y)
            for (Index x = c * patch_size; x < (c + 1) * patch_size; ++x)
                for (Index ch = 0; ch < channels; ++ch) out.at(y, x, ch) = mask_gray;
    }
    return out;
}

// ---------------------------------------------------------------------------
// t-SNE

namespace {

// Conditional affinities P(j|i) with bandwidths matched to the perplexity.
Mat conditional_affinities(const Mat& dist2, Real perplexity) {
    const Index n = dist2.rows();
    const Real target = std::log(perplexity);
    Mat p(n, n);
    std::vector<Real> row(n);
    for (Index i = 0; i < n; ++i) {
        Real dmin = std::numeric_limits<Real>::infinity();
        for (Index j = 0; j < n; ++j)
            if (j != i) dmin = std::min(dmin, dist2(i, j));
        Real beta = 1, lo = 0, hi = std::numeric_limits<Real>::infinity();
        for (int it = 0; it < 200; ++it) {
            Real sum = 0, weighted = 0;
            for (Index j = 0; j < n; ++j) {
                row[j] = j == i ? 0.0 : std::exp(-beta * (dist2(i, j) - dmin));
                sum += row[j];
                weighted += row[j] * (dist2(i, j) - dmin);
            }
            const Real h = std::log(sum) + beta * weighted / sum;
            for (Index j = 0; j < n; ++j) p(i, j) = row[j] / sum;
            if (std::abs(h - target) < 1e-5) break;
            if (h > target) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
    }
    return p;
}

Real tsne_kl(const Mat& P, const Mat& Y) {
    const Index n = Y.rows();
    Real z = 0;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            if (i != j) {
                const Real dx = Y(i, 0) - Y(j, 0), dy = Y(i, 1) - Y(j, 1);
                z += 1.0 / (1.0 + dx * dx + dy * dy);
            }
    Real kl = 0;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            if (i != j) {
                const Real dx = Y(i, 0) - Y(j, 0), dy = Y(i, 1) - Y(j, 1);
                const Real q = std::max(1.0 / (1.0 + dx * dx + dy * dy) / z, 1e-12);
                kl += P(i, j) * std::log(P(i, j) / q);
            }
    return kl;
}

Mat tsne_gradient(const Mat& P, const Mat& Y, Real exaggeration) {
    const Index n = Y.rows();
    Mat w(n, n);
    Real z = 0;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            if (i != j) {
                const Real dx = Y(i, 0) - Y(j, 0), dy = Y(i, 1) - Y(j, 1);
                w(i, j) = 1.0 / (1.0 + dx * dx + dy * dy);
                z += w(i, j);
            }
    Mat g(n, 2);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            if (i != j) {
                const Real m = 4.0 * (exaggeration * P(i, j) - w(i, j) / z) * w(i, j);
                g(i, 0) += m * (Y(i, 0) - Y(j, 0));
                g(i, 1) += m * (Y(i, 1) - Y(j, 1));
            }
    return g;
}

void center(Mat& Y) {
    for (Index c = 0; c < 2; ++c) {
        Real mean = 0;
        for (Index i = 0; i < Y.rows(); ++i) mean += Y(i, c);
        mean /= static_cast<Real>(Y.rows());
        for (Index i = 0; i < Y.rows(); ++i) Y(i, c) -= mean;
    }
}

}  // namespace

EmbeddingCloud tsne_embed(const Mat& features, Real perplexity, Index iters, std::uint64_t seed, TsneTrace* trace) {
    const Index n = features.rows();
    if (n < 2 || n > 2000) throw ConfigError("tsne_embed: need 2 to 2000 points");
    if (!(perplexity > 1) || !(perplexity < static_cast<Real>(n)))
        throw ConfigError("tsne_embed: perplexity must lie in (1, N)");

    Mat dist2(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            Real s = 0;
            for (Index k = 0; k < features.cols(); ++k) {
                const Real d = features(i, k) - features(j, k);
                s += d * d;
            }
            dist2(i, j) = dist2(j, i) = s;
        }
    const Mat cond = conditional_affinities(dist2, perplexity);
    Mat P(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            if (i != j) P(i, j) = std::max((cond(i, j) + cond(j, i)) / (2.0 * static_cast<Real>(n)), 1e-12);

    std::mt19937_64 rng(seed);
    std::normal_distribution<Real> normal(0.0, 1e-2);
    Mat Y(n, 2);
    for (Real& v : Y.values()) v = normal(rng);

    TsneTrace local;
    TsneTrace& tr = trace ? *trace : local;
    tr.kl.clear();
    tr.exaggeration_iters = iters / 4;

    // Early exaggeration: momentum with per-coordinate gains.
    const Real lr = std::max(static_cast<Real>(n) / tsne_exaggeration / 4.0, 50.0);
    Mat update(n, 2), gains(n, 2);
    gains.fill(1.0);
    for (Index it = 0; it < tr.exaggeration_iters; ++it) {
        const Mat g = tsne_gradient(P, Y, tsne_exaggeration);
        for (Index k = 0; k < Y.values().size(); ++k) {
            Real& gain = gains.values()[k];
            const bool same_sign = (g.values()[k] > 0) == (update.values()[k] > 0);
            gain = std::max(same_sign ? gain * 0.8 : gain + 0.2, 0.01);
            update.values()[k] = 0.5 * update.values()[k] - lr * gain * g.values()[k];
            Y.values()[k] += update.values()[k];
        }
        center(Y);
        tr.kl.push_back(tsne_kl(P, Y));
    }

    // Afterwards plain descent with a backtracked step, so KL never increases.
    Real step = lr;
    Real kl = tsne_kl(P, Y);
    for (Index it = tr.exaggeration_iters; it < iters; ++it) {
        const Mat g = tsne_gradient(P, Y, 1.0);
        for (int attempt = 0; attempt < 60; ++attempt) {
            Mat trial = Y;
            for (Index k = 0; k < trial.values().size(); ++k) trial.values()[k] -= step * g.values()[k];
            center(trial);
            const Real trial_kl = tsne_kl(P, trial);
            if (trial_kl <= kl) {
                Y = std::move(trial);
                kl = trial_kl;
                step *= 1.1;
                break;
            }
            step *= 0.5;
        }
        tr.kl.push_back(kl);
    }

    for (Real v : Y.values())
        if (!std::isfinite(v)) throw RuntimeError("tsne_embed: embedding diverged");
    return EmbeddingCloud{std::move(Y), {}, {}};
}

void write_embedding_csv(const EmbeddingCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write embedding file: " + path.string());
    out << "x,y,label,domain\n";
    for (Index i = 0; i < cloud.points.rows(); ++i) {
        out << format_real(cloud.points(i, 0)) << ',' << format_real(cloud.points(i, 1)) << ',';
        if (i < cloud.labels.size()) out << to_int(cloud.labels[i]);
        out << ',';
        if (i < cloud.domains.size()) out << cloud.domains[i];
        out << '\n';
    }
}

}  // namespace mcae
