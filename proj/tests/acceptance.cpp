// Acceptance suite: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "mcae/analysis.hpp"
#include "mcae/cli.hpp"
#include "mcae/eval.hpp"
#include "mcae/losses.hpp"
#include "mcae/trainer.hpp"
#include "test_support.hpp"

using namespace mcae;
using namespace mcae::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) pass = false;
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [failed]");
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mcae_acceptance_" + name);
    fs::remove_all(p);
    return p;
}

// ---------------------------------------------------------------------------
// 1. Loss oracles

Real supcon_reference(const Mat& f, const std::vector<Label>& y, const std::vector<int>& d,
                      const ContrastiveConfig& cfg) {
    Real total = 0;
    int pairs = 0;
    for (Index i = 0; i < f.rows(); ++i)
        for (Index j = 0; j < f.rows(); ++j) {
            if (i == j || y[i] != y[j]) continue;
            const Real lambda = y[i] == Label::spoof ? cfg.lambda_spoof
                                : d[i] == d[j]       ? cfg.lambda_live_same
                                                     : cfg.lambda_live_cross;
            Real sij = 0;
            for (Index c = 0; c < f.cols(); ++c) sij += f(i, c) * f(j, c);
            const Real pos = lambda * std::exp(sij / cfg.temperature);
            Real neg = 0;
            for (Index k = 0; k < f.rows(); ++k) {
                if (y[k] == y[i]) continue;
                Real sik = 0;
                for (Index c = 0; c < f.cols(); ++c) sik += f(i, c) * f(k, c);
                neg += std::exp(sik / cfg.temperature);
            }
            total -= std::log(pos / (pos + neg));
            ++pairs;
        }
    return pairs ? total / pairs : 0.0;
}

Outcome loss_oracles() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<Index> n_dist(2, 16), d_dist(1, 32);
    std::uniform_int_distribution<int> coin(0, 1), dom(0, 3);
    std::uniform_real_distribution<Real> tau(0.05, 1.0), lam(0.1, 3.0);
    Real worst_con = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const Index n = n_dist(rng), d = d_dist(rng);
        const Mat f = normalized_rows(random_mat(n, d, rng));
        std::vector<Label> y;
        std::vector<int> dm;
        for (Index i = 0; i < n; ++i) {
            y.push_back(coin(rng) ? Label::live : Label::spoof);
            dm.push_back(dom(rng));
        }
        ContrastiveConfig cfg;
        cfg.temperature = tau(rng);
        cfg.lambda_live_cross = lam(rng);
        cfg.lambda_live_same = lam(rng);
        cfg.lambda_spoof = lam(rng);
        worst_con = std::max(worst_con, std::abs(supcon_loss(f, y, dm, cfg) - supcon_reference(f, y, dm, cfg)));
    }
    Real worst_rec = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const Index n = 1 + trial % 64, d = 1 + trial % 48;
        const Mat pred = random_mat(n, d, rng), target = random_mat(n, d, rng);
        const MaskPlan plan = sample_mask(n, 0.05 * (trial % 20), rng);
        Real ref = 0;
        for (Index i = 0; i < n; ++i) {
            if (!indicator_mask(i, plan)) continue;
            Real e = 0;
            for (Index c = 0; c < d; ++c) e += (pred(i, c) - target(i, c)) * (pred(i, c) - target(i, c));
            ref += e / static_cast<Real>(d);
        }
        ref /= static_cast<Real>(n);
        worst_rec = std::max(worst_rec, std::abs(reconstruction_loss(pred, target, plan) - ref));
    }
    Outcome o;
    o.require(worst_con < 1e-6, "supcon max |diff| " + fmt("%.2e", worst_con) + " over 200 batches");
    o.require(worst_rec < 1e-6, "reconstruction max |diff| " + fmt("%.2e", worst_rec));
    return o;
}

// ---------------------------------------------------------------------------
// 2. Gradient checks

Outcome gradient_checks() {
    const RunConfig cfg = micro_config();
    ModelParams p = init_params(cfg.encoder, cfg.decoder, 202);
    std::mt19937_64 rng(203);
    std::normal_distribution<Real> nd(0, 0.3);
    for (auto& r : p.refs())
        if (r.trainable)
            for (Real& v : r.tensor->values()) v += nd(rng);

    const std::vector<Label> labels{Label::live, Label::spoof, Label::live, Label::spoof, Label::live, Label::spoof};
    const std::vector<int> domains{0, 0, 1, 1, 2, 2};
    std::vector<TokenSequence> seqs;
    std::vector<MaskPlan> plans;
    for (Index i = 0; i < labels.size(); ++i) {
        seqs.push_back(patchify(random_image(8, rng), 4));
        plans.push_back(sample_mask(4, 0.5, rng));
    }
    Outcome o;
    for (const auto& [name, w] : {std::pair{"rec", PretrainWeights{1, 0, false}}, std::pair{"con", PretrainWeights{0, 1, true}}}) {
        ModelParams g = p.zeros_like();
        pretrain_objective(p, seqs, plans, labels, domains, w, cfg.contrastive, &g);
        const auto errors = gradient_errors(p, g, [&](const ModelParams& q) {
            return pretrain_objective(q, seqs, plans, labels, domains, w, cfg.contrastive, nullptr).total;
        });
        Real worst = 0;
        std::string worst_name;
        for (const auto& e : errors)
            if (e.error >= worst) {
                worst = e.error;
                worst_name = e.name;
            }
        o.require(worst < 1e-3, std::string(name) + " worst rel err " + fmt("%.2e", worst) + " (" + worst_name + ", " +
                                    std::to_string(errors.size()) + " tensors)");
    }
    return o;
}

// ---------------------------------------------------------------------------
// 3. Mask plans

Outcome mask_plans() {
    Outcome o;
    bool counts = true;
    for (Index n = 1; n <= 1024; ++n)
        for (int step = 0; step < 20; ++step)
            counts = counts && masked_count(n, 0.05 * step) == (2 * static_cast<Index>(step) * n + 20) / 40;
    o.require(counts, "round(ratio*n) on n<=1024 x ratio grid");

    std::mt19937_64 rng(303);
    const MaskPlan first = sample_mask(256, 0.85, rng);
    o.require(first.masked_idx.size() == 218 && first.visible_idx.size() == 38,
              "256 -> " + std::to_string(first.masked_idx.size()) + " masked / " +
                  std::to_string(first.visible_idx.size()) + " visible");

    std::vector<int> hits(256, 0);
    bool partition = true;
    for (int draw = 0; draw < 10000; ++draw) {
        const MaskPlan plan = sample_mask(256, 0.85, rng);
        std::vector<int> seen(256, 0);
        for (Index i : plan.visible_idx) ++seen[i];
        for (Index i : plan.masked_idx) {
            ++seen[i];
            ++hits[i];
        }
        partition = partition && std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
    }
    o.require(partition, "partition over 10000 draws");
    Real worst = 0;
    for (int h : hits) worst = std::max(worst, std::abs(h / 10000.0 - 0.85));
    o.require(worst <= 0.02, "max |freq - 0.85| " + fmt("%.4f", worst));
    return o;
}

// ---------------------------------------------------------------------------
// 4. Visible-only dependence

Outcome visible_only() {
    const RunConfig cfg = micro_config();
    const ModelParams p = init_params(cfg.encoder, cfg.decoder, 404);
    std::mt19937_64 rng(405);
    std::uniform_real_distribution<Real> u(-1, 1);
    int identical = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Image img = random_image(8, rng);
        const MaskPlan plan = sample_mask(4, 0.75, rng);
        const Mat before = encode(p, gather_rows(patchify(img, 4).tokens, plan.visible_idx), plan.visible_idx);
        for (Index m : plan.masked_idx)
            for (Index y = (m / 2) * 4; y < (m / 2) * 4 + 4; ++y)
                for (Index x = (m % 2) * 4; x < (m % 2) * 4 + 4; ++x)
                    for (Index c = 0; c < 3; ++c) img.at(y, x, c) += u(rng);
        const Mat after = encode(p, gather_rows(patchify(img, 4).tokens, plan.visible_idx), plan.visible_idx);
        identical += before == after;
    }
    Outcome o;
    o.require(identical == 20, std::to_string(identical) + "/20 trials bit-identical");
    return o;
}

// ---------------------------------------------------------------------------
// 5. Overfit sanity

Outcome overfit() {
    const RunConfig cfg = micro_config();
    LabeledBatch batch;
    for (const auto& ds : make_synthetic_domains(2, 2, 8, 505))
        for (const auto& s : ds.samples) {
            batch.images.push_back(s.image);
            batch.labels.push_back(s.label);
            batch.domains.push_back(s.domain);
        }
    TrainState st = make_train_state(init_params(cfg.encoder, cfg.decoder, 506), 506);
    Real first = 0, tail = 0;
    for (int step = 0; step < 300; ++step) {
        const Real rec = pretrain_step(st, batch, cfg).loss.rec;
        if (step == 0) first = rec;
        if (step >= 290) tail += rec / 10;
    }
    Outcome o;
    o.require(tail < 0.05 * first, "8 images, 300 steps: final/initial = " + fmt("%.4f", tail / first));
    return o;
}

// ---------------------------------------------------------------------------
// 6. Contrastive direction

Real cross_domain_live_cosine(const ModelParams& p, std::span<const DomainDataset> ds) {
    std::vector<std::pair<int, std::vector<Real>>> f;
    for (const auto& d : ds)
        for (const auto& s : d.samples) {
            if (s.label != Label::live) continue;
            const TokenSequence seq = patchify(s.image, p.encoder_cfg.patch_size);
            const MaskPlan all = all_visible(seq.count());
            f.emplace_back(d.domain_id, aggregate(encode(p, seq.tokens, all.visible_idx)).vector);
        }
    Real sum = 0;
    Index n = 0;
    for (Index i = 0; i < f.size(); ++i)
        for (Index j = 0; j < f.size(); ++j) {
            if (f[i].first == f[j].first) continue;
            Real c = 0;
            for (Index k = 0; k < f[i].second.size(); ++k) c += f[i].second[k] * f[j].second[k];
            sum += c;
            ++n;
        }
    return sum / static_cast<Real>(n);
}

Outcome contrastive_direction() {
    const auto domains = make_synthetic_domains(3, 100, 8, 11);
    const std::vector<DomainDataset> train{domains[0], domains[1]};
    Real cos[2], auc[2];
    for (int run = 0; run < 2; ++run) {
        RunConfig cfg = micro_config();
        cfg.schedule.beta = run == 0 ? 1.0 : 0.0;
        const PretrainResult pre = pretrain(train, cfg);
        cos[run] = cross_domain_live_cosine(pre.params, train);
        auc[run] = compute_auc(score_dataset(finetune(pre.params, train, cfg).params, domains[2]));
    }
    Outcome o;
    o.require(cos[0] > cos[1], "live-live cross-domain cosine full " + fmt("%.4f", cos[0]) + " vs beta=0 " + fmt("%.4f", cos[1]));
    o.require(auc[0] >= auc[1], "held-out AUC full " + fmt("%.2f", auc[0]) + " vs beta=0 " + fmt("%.2f", auc[1]));
    return o;
}

// ---------------------------------------------------------------------------
// 7. Synthetic leave-one-out

Outcome synthetic_loo() {
    const auto domains = make_synthetic_domains(4, 100, 8, 7);
    const auto rows = run_loo_protocol(domains, micro_config());
    Outcome o;
    for (const auto& r : rows)
        o.require(r.auc >= 90.0 && r.hter <= 15.0,
                  r.test_domain + " AUC " + fmt("%.2f", r.auc) + " HTER " + fmt("%.2f", r.hter));
    o.require(rows.size() == 4, std::to_string(rows.size()) + " folds");
    return o;
}

// ---------------------------------------------------------------------------
// 8. Metric oracles

Outcome metric_oracles() {
    std::mt19937_64 rng(808);
    std::uniform_int_distribution<Index> n_dist(2, 200);
    std::uniform_real_distribution<Real> u(0, 1);
    std::uniform_int_distribution<int> coarse(0, 20);
    Real worst_auc = 0, worst_hter = 0;
    for (int trial = 0; trial < 100; ++trial) {
        ScoredSet s;
        const Index n = n_dist(rng);
        for (Index i = 0; i < n; ++i) {
            const Label l = i == 0 ? Label::live : i == 1 ? Label::spoof : (u(rng) < 0.5 ? Label::live : Label::spoof);
            s.labels.push_back(l);
            s.scores.push_back(trial % 4 == 0 ? coarse(rng) / 20.0 : u(rng) + (l == Label::live ? 0.3 : 0.0));
        }
        Real good = 0, pairs = 0;
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j)
                if (s.labels[i] == Label::live && s.labels[j] == Label::spoof) {
                    pairs += 1;
                    good += s.scores[i] > s.scores[j] ? 1.0 : s.scores[i] == s.scores[j] ? 0.5 : 0.0;
                }
        worst_auc = std::max(worst_auc, std::abs(compute_auc(s) - 100 * good / pairs));

        std::vector<Real> sorted = s.scores;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        std::vector<Real> cand{-std::numeric_limits<Real>::infinity()};
        for (Index i = 0; i + 1 < sorted.size(); ++i) cand.push_back((sorted[i] + sorted[i + 1]) / 2);
        cand.push_back(std::numeric_limits<Real>::infinity());
        Real best_gap = 2, best_hter = 0;
        for (Real t : cand) {
            Real fa = 0, fr = 0, nl = 0, ns = 0;
            for (Index i = 0; i < n; ++i) {
                if (s.labels[i] == Label::live) {
                    nl += 1;
                    fr += s.scores[i] < t;
                } else {
                    ns += 1;
                    fa += s.scores[i] >= t;
                }
            }
            const Real gap = std::abs(fa / ns - fr / nl), hter = 50 * (fa / ns + fr / nl);
            if (gap < best_gap || (gap == best_gap && hter < best_hter)) {
                best_gap = gap;
                best_hter = hter;
            }
        }
        worst_hter = std::max(worst_hter, std::abs(compute_hter(s).hter - best_hter));
    }
    ScoredSet hand{{0.9, 0.4, 0.6, 0.1}, {Label::live, Label::live, Label::spoof, Label::spoof}};
    const Real hand_auc = compute_auc(hand);
    const HterResult hand_hter = compute_hter(hand);
    Outcome o;
    o.require(worst_auc < 1e-9, "AUC vs pair count max |diff| " + fmt("%.1e", worst_auc));
    o.require(worst_hter < 1e-9, "HTER vs threshold sweep max |diff| " + fmt("%.1e", worst_hter));
    o.require(hand_auc == 75.0, "hand AUC " + fmt("%.1f", hand_auc) + " (expected 75.0)");
    o.require(hand_hter.hter == 25.0, "hand HTER " + fmt("%.1f", hand_hter.hter) + " at threshold " +
                                          fmt("%.2f", hand_hter.threshold) + " with FAR " + fmt("%.2f", hand_hter.far) +
                                          " FRR " + fmt("%.2f", hand_hter.frr) + " (expected 25.0)");
    return o;
}

// ---------------------------------------------------------------------------
// 9. Theory suite

Outcome theory_suite() {
    const std::vector<std::string> ab{"A", "B"};
    Outcome o;
    const Real zero = mutual_information(DiscreteJoint(ab, {2, 2}, {0.25, 0.25, 0.25, 0.25}), "A", "B");
    const Real one = mutual_information(DiscreteJoint(ab, {2, 2}, {0.5, 0, 0, 0.5}), "A", "B");
    const Real hand = mutual_information(DiscreteJoint(ab, {2, 2}, {0.4, 0.1, 0.1, 0.4}), "A", "B");
    o.require(std::abs(zero) < 1e-6 && std::abs(one - 1) < 1e-6 && std::abs(hand - 0.2781) < 1e-4 &&
                  std::abs(hand - 0.2780719051126377) < 1e-6,
              "MI " + fmt("%.6f", zero) + ", " + fmt("%.6f", one) + ", " + fmt("%.6f", hand) + " bits");

    std::mt19937_64 rng(909);
    std::exponential_distribution<Real> e(1.0);
    const auto simplex = [&](Index n) {
        std::vector<Real> p(n);
        Real s = 0;
        for (Real& v : p) s += (v = e(rng));
        for (Real& v : p) v /= s;
        return p;
    };
    int holding = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto px = simplex(3);
        std::vector<Real> pyx, pzy;
        for (int r = 0; r < 3; ++r) {
            const auto a = simplex(3), b = simplex(3);
            pyx.insert(pyx.end(), a.begin(), a.end());
            pzy.insert(pzy.end(), b.begin(), b.end());
        }
        const DiscreteJoint j = make_markov_chain({"A", "T", "G"}, px, pyx, 3, pzy, 3);
        const DpiReport r = verify_dpi_chain(j, "A", "T", "G", 1.0, 1e-10);
        holding += r.dpi_holds && r.info_first_last <= r.info_middle_last + 1e-10;
    }
    o.require(holding == 100, "DPI holds on " + std::to_string(holding) + "/100 chains");

    std::normal_distribution<Real> nd(0, 1);
    for (Real sigma : {0.5, 1.0, 2.0}) {
        std::vector<std::vector<Real>> x(64, std::vector<Real>(16)), mu(64, std::vector<Real>(16));
        for (Index i = 0; i < 64; ++i)
            for (Index k = 0; k < 16; ++k) {
                mu[i][k] = nd(rng);
                x[i][k] = mu[i][k] + sigma * nd(rng);
            }
        const Real slope = variational_mse_equivalence(x, mu, sigma).fitted_slope;
        const Real want = -1 / (2 * sigma * sigma);
        o.require(std::abs(slope - want) < 1e-9, "sigma " + fmt("%.1f", sigma) + " slope " + fmt("%.12f", slope));
    }
    return o;
}

// ---------------------------------------------------------------------------
// 10. Schedule behavior

Outcome schedule_behavior() {
    const auto data = make_synthetic_domains(3, 8, 8, 1010);
    RunConfig cfg = micro_config();
    cfg.schedule.total_epochs = 10;
    const fs::path dir = scratch("schedule");
    const PretrainResult full = pretrain(data, cfg, dir);

    std::ifstream in(dir / "metrics.csv");
    std::string line;
    std::getline(in, line);
    int transitions = 0, con_before_gate = 0, con_after_gate = 0, reverted = 0;
    bool in_con = false, prev_con_stage = false;
    while (std::getline(in, line)) {
        std::stringstream row(line);
        std::string epoch, rec, con, stage;
        std::getline(row, epoch, ',');
        std::getline(row, rec, ',');
        std::getline(row, con, ',');
        std::getline(row, stage, ',');
        const bool con_stage = stage == "rec_plus_con";
        if (con_stage && !prev_con_stage) ++transitions;
        if (!con_stage && in_con) ++reverted;
        if (!con.empty()) (con_stage ? con_after_gate : con_before_gate) += 1;
        in_con = in_con || !con.empty();
        prev_con_stage = con_stage;
    }
    fs::remove_all(dir);

    RunConfig zero = cfg;
    zero.schedule.beta = 0;
    RunConfig off = cfg;
    off.schedule.switch_epoch.reset();
    off.schedule.switch_epoch_auto = false;
    off.schedule.epsilon = 0;
    const PretrainResult a = pretrain(data, zero);
    const PretrainResult b = pretrain(data, off);
    bool same_losses = a.metrics.size() == b.metrics.size();
    for (Index i = 0; same_losses && i < a.metrics.size(); ++i)
        same_losses = a.metrics[i].rec_loss == b.metrics[i].rec_loss;

    Outcome o;
    o.require(full.gate_fired_step.has_value() && transitions == 1,
              "gate fired once (epoch " + (full.gate_fired_epoch ? std::to_string(*full.gate_fired_epoch) : "-") + ")");
    o.require(con_before_gate == 0 && con_after_gate > 0 && reverted == 0,
              "con loss logged in " + std::to_string(con_after_gate) + " epochs, none before the gate");
    o.require(a.params == b.params && same_losses && !b.gate_fired_step,
              "beta=0 vs gate disabled bit-identical params and losses");
    return o;
}

// ---------------------------------------------------------------------------
// 11. Sweep plumbing

std::vector<std::string> csv_keys(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> keys;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) keys.push_back(line.substr(0, line.find(',')));
    return keys;
}

Outcome sweep_plumbing() {
    const fs::path dir = scratch("sweeps");
    const std::vector<std::string> common{"--preset", "micro", "--epochs", "1", "--finetune-epochs", "1",
                                          "--domains", "3", "--per-class", "2", "--batch-size", "12",
                                          "--max-folds", "1"};
    std::ostringstream sink;
    auto args_for = [&](const std::string& cmd, const fs::path& out) {
        std::vector<std::string> a{cmd};
        a.insert(a.end(), common.begin(), common.end());
        a.insert(a.end(), {"--out-dir", out.string()});
        return a;
    };
    const int rc_ratio = cli::dispatch(args_for("sweep-mask-ratio", dir / "ratio"), sink, sink);
    const int rc_dec = cli::dispatch(args_for("sweep-decoder", dir / "decoder"), sink, sink);
    const auto ratios = csv_keys(dir / "ratio" / "sweep_mask_ratio.csv");
    const auto decoders = csv_keys(dir / "decoder" / "sweep_decoder.csv");
    fs::remove_all(dir);
    const auto has = [](const std::vector<std::string>& v, const std::string& k) {
        return std::find(v.begin(), v.end(), k) != v.end();
    };
    Outcome o;
    o.require(rc_ratio == 0 && ratios.size() == 5 && has(ratios, "0.85"),
              "sweep-mask-ratio exit " + std::to_string(rc_ratio) + ", " + std::to_string(ratios.size()) + " rows");
    o.require(rc_dec == 0 && decoders.size() == 5 && has(decoders, "512x8"),
              "sweep-decoder exit " + std::to_string(rc_dec) + ", " + std::to_string(decoders.size()) + " rows");
    return o;
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "loss oracles", 30, loss_oracles},
        {2, "gradient checks", 120, gradient_checks},
        {3, "mask-plan properties", 10, mask_plans},
        {4, "visible-only dependence", 0, visible_only},
        {5, "overfit sanity", 180, overfit},
        {6, "contrastive direction", 1200, contrastive_direction},
        {7, "synthetic leave-one-out", 1800, synthetic_loo},
        {8, "metric oracles", 0, metric_oracles},
        {9, "theory suite", 60, theory_suite},
        {10, "schedule behavior", 0, schedule_behavior},
        {11, "sweep plumbing", 0, sweep_plumbing},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string timing = fmt("%.1fs", secs);
        if (c.budget_s > 0) {
            timing += " / " + fmt("%.0fs", c.budget_s);
            if (secs > c.budget_s) {
                o.pass = false;
                timing += " [over budget]";
            }
        }
        std::printf("CRITERION %2d %s  %s: %s (%s)\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                    timing.c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed ? 1 : 0;
}
