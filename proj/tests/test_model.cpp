#include <doctest.h>

#include <cmath>
#include <random>

#include "mcae/losses.hpp"
#include "mcae/model.hpp"
#include "mcae/tokenizer.hpp"
#include "mcae/trainer.hpp"
#include "test_support.hpp"

using namespace mcae;
using namespace mcae::testing;

namespace {

// Micro parameters pushed away from the tiny init so every nonlinearity is exercised.
ModelParams perturbed_micro(std::uint64_t seed) {
    const RunConfig cfg = micro_config();
    ModelParams p = init_params(cfg.encoder, cfg.decoder, seed);
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<Real> nd(0, 0.3);
    for (auto& r : p.refs())
        if (r.trainable)
            for (Real& v : r.tensor->values()) v += nd(rng);
    return p;
}

struct MicroBatch {
    std::vector<TokenSequence> seqs;
    std::vector<MaskPlan> plans;
    std::vector<Label> labels{Label::live, Label::live, Label::spoof, Label::spoof, Label::live};
    std::vector<int> domains{0, 1, 0, 1, 2};
};

MicroBatch micro_batch(std::uint64_t seed, Real ratio = 0.5) {
    std::mt19937_64 rng(seed);
    MicroBatch b;
    for (Index i = 0; i < b.labels.size(); ++i) {
        b.seqs.push_back(patchify(random_image(8, rng), 4));
        b.plans.push_back(sample_mask(4, ratio, rng));
    }
    return b;
}

void check_pretrain_gradient(const PretrainWeights& w) {
    const ModelParams p = perturbed_micro(3);
    const MicroBatch b = micro_batch(11);
    const ContrastiveConfig cc;
    ModelParams g = p.zeros_like();
    pretrain_objective(p, b.seqs, b.plans, b.labels, b.domains, w, cc, &g);
    const auto errors = gradient_errors(p, g, [&](const ModelParams& q) {
        return pretrain_objective(q, b.seqs, b.plans, b.labels, b.domains, w, cc, nullptr).total;
    });
    for (const auto& e : errors) {
        CAPTURE(e.name);
        CHECK(e.error < 1e-6);
    }
}

}  // namespace

TEST_CASE("positional table row 0 holds sin(0) and cos(0)") {
    const Mat pos = sinusoidal_positions_2d(4, 4, 16);
    Real sum = 0;
    for (Real v : pos.row(0)) {
        CHECK((v == 0.0 || v == 1.0));
        sum += v;
    }
    CHECK(sum == 8.0);
    CHECK_THROWS_AS(sinusoidal_positions_2d(2, 2, 6), std::invalid_argument);
}

TEST_CASE("positional rows are distinct") {
    const Mat pos = sinusoidal_positions_2d(4, 4, 16);
    for (Index a = 0; a < pos.rows(); ++a)
        for (Index b = a + 1; b < pos.rows(); ++b) {
            Real d = 0;
            for (Index k = 0; k < pos.cols(); ++k) d += std::abs(pos(a, k) - pos(b, k));
            CHECK(d > 1e-3);
        }
}

TEST_CASE("init is deterministic and truncated") {
    const RunConfig cfg = micro_config();
    const ModelParams a = init_params(cfg.encoder, cfg.decoder, 5);
    const ModelParams b = init_params(cfg.encoder, cfg.decoder, 5);
    const ModelParams c = init_params(cfg.encoder, cfg.decoder, 6);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    for (const auto& r : a.refs()) {
        if (!r.decays) continue;
        for (Real v : r.tensor->values()) CHECK(std::abs(v) <= 0.04);
    }
    CHECK(a.encoder.blocks[0].ln1_gain(0, 0) == 1.0);
    CHECK(a.encoder.blocks[0].qkv.bias(0, 0) == 0.0);
}

TEST_CASE("init standard deviation matches the truncated normal") {
    EncoderConfig enc{.embed_dim = 64, .depth = 1, .heads = 2, .patch_size = 4, .image_size = 16};
    const ModelParams p = init_params(enc, {64, 1, 2}, 1);
    const auto& w = p.encoder.blocks[0].fc1.weight.values();
    Real s = 0;
    for (Real v : w) s += v * v;
    const Real sd = std::sqrt(s / static_cast<Real>(w.size()));
    // 2σ truncation shrinks the standard deviation to about 0.88σ.
    CHECK(sd == doctest::Approx(0.02 * 0.8796).epsilon(0.03));
}

TEST_CASE("config validation") {
    CHECK_THROWS_AS(validate(EncoderConfig{.embed_dim = 10, .heads = 3}), std::invalid_argument);
    CHECK_THROWS_AS(validate(EncoderConfig{.patch_size = 16, .image_size = 250}), std::invalid_argument);
    CHECK_THROWS_AS(validate(DecoderConfig{.width = 6, .depth = 1, .heads = 2}), std::invalid_argument);
    CHECK_NOTHROW(validate(EncoderConfig{}));
    CHECK_NOTHROW(validate(DecoderConfig{}));
}

TEST_CASE("encoder and decoder shapes") {
    const ModelParams p = perturbed_micro(1);
    const MicroBatch b = micro_batch(2, 0.75);
    const auto& plan = b.plans[0];
    const Mat latent = encode(p, gather_rows(b.seqs[0].tokens, plan.visible_idx), plan.visible_idx);
    CHECK(latent.rows() == plan.visible_idx.size());
    CHECK(latent.cols() == 8);
    const Mat pred = decode(p, latent, plan);
    CHECK(pred.rows() == 4);
    CHECK(pred.cols() == 48);
}

TEST_CASE("encoder rejects bad inputs") {
    const ModelParams p = perturbed_micro(1);
    const std::vector<Index> idx{0, 9};
    CHECK_THROWS(encode(p, Mat(2, 48), idx));
    const std::vector<Index> ok{0};
    CHECK_THROWS_AS(encode(p, Mat(1, 47), ok), std::invalid_argument);
    CHECK_THROWS_AS(encode(p, Mat(0, 48), std::vector<Index>{}), std::invalid_argument);
}

TEST_CASE("latents ignore masked patches") {
    const ModelParams p = perturbed_micro(4);
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Image img = random_image(8, rng);
        const MaskPlan plan = sample_mask(4, 0.5, rng);
        const TokenSequence seq = patchify(img, 4);
        const Mat before = encode(p, gather_rows(seq.tokens, plan.visible_idx), plan.visible_idx);
        const Index m = plan.masked_idx[0];
        const Index r = m / 2, c = m % 2;
        for (Index y = r * 4; y < r * 4 + 4; ++y)
            for (Index x = c * 4; x < c * 4 + 4; ++x) img.at(y, x, 1) += 0.5;
        const TokenSequence seq2 = patchify(img, 4);
        const Mat after = encode(p, gather_rows(seq2.tokens, plan.visible_idx), plan.visible_idx);
        CHECK(before == after);
    }
}

TEST_CASE("aggregate feature is unit length") {
    std::mt19937_64 rng(1);
    const Mat latent = random_mat(5, 8, rng);
    const auto f = aggregate(latent);
    CHECK(f.normalized);
    CHECK(l2(f.vector) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS(aggregate(Mat(3, 8)));
}

TEST_CASE("aggregate backward matches finite differences") {
    std::mt19937_64 rng(2);
    Mat latent = random_mat(3, 6, rng);
    const std::vector<Real> w{0.3, -1.2, 0.5, 0.9, -0.1, 0.4};
    const auto objective = [&](const Mat& l) {
        const auto f = aggregate(l);
        Real s = 0;
        for (Index i = 0; i < w.size(); ++i) s += w[i] * f.vector[i];
        return s;
    };
    const Mat analytic = aggregate_backward(latent, w);
    std::vector<Real> numeric;
    for (Index k = 0; k < latent.size(); ++k) {
        const Real saved = latent.values()[k];
        latent.values()[k] = saved + 1e-6;
        const Real up = objective(latent);
        latent.values()[k] = saved - 1e-6;
        const Real down = objective(latent);
        latent.values()[k] = saved;
        numeric.push_back((up - down) / 2e-6);
    }
    CHECK(relative_error(analytic.values(), numeric) < 1e-7);
}

TEST_CASE("zero head gives even odds") {
    ModelParams p = perturbed_micro(2);
    p.head.fc.weight.fill(0);
    p.head.fc.bias.fill(0);
    std::mt19937_64 rng(1);
    const auto prob = softmax(classify(p, random_image(8, rng)));
    CHECK(prob[0] == 0.5);
    CHECK(prob[1] == 0.5);
}

TEST_CASE("softmax is stable for large logits") {
    const auto p = softmax({1000.0, 1001.0});
    CHECK(p[0] + p[1] == doctest::Approx(1.0));
    CHECK(p[1] > p[0]);
}

TEST_CASE("reconstruction gradient matches finite differences") { check_pretrain_gradient({1, 0, false}); }

TEST_CASE("contrastive gradient matches finite differences") { check_pretrain_gradient({0, 1, true}); }

TEST_CASE("combined gradient matches finite differences") { check_pretrain_gradient({1, 0.7, true}); }

TEST_CASE("classification gradient matches finite differences") {
    const ModelParams p = perturbed_micro(8);
    const MicroBatch b = micro_batch(12);
    ModelParams g = p.zeros_like();
    finetune_objective(p, b.seqs, b.labels, true, &g);
    const auto errors = gradient_errors(p, g, [&](const ModelParams& q) {
        return finetune_objective(q, b.seqs, b.labels, true, nullptr).loss;
    });
    for (const auto& e : errors) {
        CAPTURE(e.name);
        CHECK(e.error < 1e-6);
    }
}

TEST_CASE("mask token receives gradient from reconstruction") {
    const ModelParams p = perturbed_micro(3);
    const MicroBatch b = micro_batch(5);
    ModelParams g = p.zeros_like();
    pretrain_objective(p, b.seqs, b.plans, b.labels, b.domains, {1, 0, false}, {}, &g);
    CHECK(l2(g.decoder.mask_token.values()) > 0);
    CHECK(l2(g.head.fc.weight.values()) == 0);
}

TEST_CASE("grad-cam target gradient matches finite differences") {
    const ModelParams p = perturbed_micro(6);
    std::mt19937_64 rng(4);
    const TokenSequence seq = patchify(random_image(8, rng), 4);
    ClassifierCache cache;
    classify_tokens(p, seq, &cache);
    const Mat analytic = classify_backward_to_block_out(p, cache, {0, 1});
    CHECK(analytic.rows() == 4);
    CHECK(analytic.cols() == 8);
    // The final norm and pooling after the last block are cheap to replay.
    const auto head_logit = [&](const Mat& block_out) {
        const Mat latent = kernels::layer_norm(block_out, p.encoder.norm_gain, p.encoder.norm_shift, nullptr);
        Real s = p.head.fc.bias(0, 1);
        for (Index e = 0; e < 8; ++e) {
            Real m = 0;
            for (Index r = 0; r < latent.rows(); ++r) m += latent(r, e);
            s += m / static_cast<Real>(latent.rows()) * p.head.fc.weight(e, 1);
        }
        return s;
    };
    Mat x = cache.encoder.block_out;
    std::vector<Real> numeric;
    for (Index k = 0; k < x.size(); ++k) {
        const Real saved = x.values()[k];
        x.values()[k] = saved + 1e-6;
        const Real up = head_logit(x);
        x.values()[k] = saved - 1e-6;
        const Real down = head_logit(x);
        x.values()[k] = saved;
        numeric.push_back((up - down) / 2e-6);
    }
    CHECK(relative_error(analytic.values(), numeric) < 1e-6);
}
