#include "mcae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "mcae/trainer.hpp"

namespace mcae {

ScoredSet score_dataset(const ModelParams& params, const DomainDataset& dataset) {
    ScoredSet out;
    const Index n = dataset.samples.size();
    out.scores.resize(n);
    out.labels.resize(n);
#pragma omp parallel for schedule(static)
    for (long li = 0; li < static_cast<long>(n); ++li) {
        const auto i = static_cast<Index>(li);
        const auto& s = dataset.samples[i];
        out.scores[i] = softmax(classify(params, s.image))[1];
        out.labels[i] = s.label;
    }
    return out;
}

namespace {

void check_two_classes(const ScoredSet& s, Index& live, Index& spoof) {
    if (s.scores.size() != s.labels.size()) throw std::invalid_argument("scored set: length mismatch");
    live = static_cast<Index>(std::count(s.labels.begin(), s.labels.end(), Label::live));
    spoof = s.labels.size() - live;
    if (live == 0 || spoof == 0) throw std::invalid_argument("metric needs both live and spoof samples");
}

}  // namespace

Real compute_auc(const ScoredSet& s) {
    Index n_live = 0, n_spoof = 0;
    check_two_classes(s, n_live, n_spoof);
    std::vector<Index> order(s.scores.size());
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return s.scores[a] < s.scores[b]; });
    // Average ranks over ties, then the rank-sum form of the U statistic.
    Real live_rank_sum = 0;
    for (Index i = 0; i < order.size();) {
        Index j = i;
        while (j < order.size() && s.scores[order[j]] == s.scores[order[i]]) ++j;
        const Real avg_rank = (static_cast<Real>(i + 1) + static_cast<Real>(j)) / 2.0;
        for (Index k = i; k < j; ++k)
            if (s.labels[order[k]] == Label::live) live_rank_sum += avg_rank;
        i = j;
    }
    const auto nl = static_cast<Real>(n_live);
    const auto ns = static_cast<Real>(n_spoof);
    const Real u = live_rank_sum - nl * (nl + 1) / 2.0;
    return 100.0 * u / (nl * ns);
}

HterResult compute_hter(const ScoredSet& s) {
    Index n_live = 0, n_spoof = 0;
    check_two_classes(s, n_live, n_spoof);
    std::vector<Index> order(s.scores.size());
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return s.scores[a] < s.scores[b]; });

    const Real inf = std::numeric_limits<Real>::infinity();
    // Threshold −∞: everything accepted.
    Index rejected_live = 0;
    Index rejected_spoof = 0;
    HterResult best;
    Real best_gap = inf;
    auto consider = [&](Real threshold) {
        const Real far = static_cast<Real>(n_spoof - rejected_spoof) / static_cast<Real>(n_spoof);
        const Real frr = static_cast<Real>(rejected_live) / static_cast<Real>(n_live);
        const Real gap = std::abs(far - frr);
        const Real hter = 50.0 * (far + frr);
        if (gap < best_gap || (gap == best_gap && hter < best.hter)) {
            best_gap = gap;
            best = {hter, threshold, far, frr};
        }
    };
    consider(-inf);
    for (Index i = 0; i < order.size();) {
        Index j = i;
        while (j < order.size() && s.scores[order[j]] == s.scores[order[i]]) ++j;
        for (Index k = i; k < j; ++k) (s.labels[order[k]] == Label::live ? rejected_live : rejected_spoof)++;
        const Real threshold = j < order.size() ? 0.5 * (s.scores[order[i]] + s.scores[order[j]]) : inf;
        consider(threshold);
        i = j;
    }
    return best;
}

FoldOutcome run_fold(std::span<const DomainDataset> train, const DomainDataset& test, const RunConfig& cfg,
                     const ProtocolOptions& options) {
    for (const auto& d : train)
        if (d.domain_name == test.domain_name)
            throw std::logic_error("protocol: test domain " + test.domain_name + " appears in the training set");

    FoldOutcome out;
    switch (options.init) {
        case InitMode::pretrain: out.pretrained = pretrain(train, cfg).params; break;
        case InitMode::random: out.pretrained = init_params(cfg.encoder, cfg.decoder, cfg.schedule.seed); break;
        case InitMode::external:
            if (!options.external_init) throw ConfigError("external init mode needs a checkpoint");
            out.pretrained = *options.external_init;
            break;
    }
    out.finetuned = finetune(out.pretrained, train, cfg).params;
    const ScoredSet scored = score_dataset(out.finetuned, test);
    const HterResult h = compute_hter(scored);

    auto& r = out.result;
    r.protocol = options.protocol;
    for (const auto& d : train) r.train_domains.push_back(d.domain_name);
    r.test_domain = test.domain_name;
    r.hter = h.hter;
    r.auc = compute_auc(scored);
    r.threshold = h.threshold;
    r.seed = cfg.schedule.seed;
    return out;
}

namespace {

std::vector<ProtocolResult> run_folds(const std::vector<std::vector<DomainDataset>>& trains,
                                      const std::vector<const DomainDataset*>& tests, const RunConfig& cfg,
                                      const ProtocolOptions& options) {
    const Index n = tests.size();
    std::vector<ProtocolResult> results(n);
    std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic) if (options.parallel_folds)
    for (long lf = 0; lf < static_cast<long>(n); ++lf) {
        const auto f = static_cast<Index>(lf);
        try {
            results[f] = run_fold(trains[f], *tests[f], cfg, options).result;
        } catch (...) {
            errors[f] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

}  // namespace

std::vector<ProtocolResult> run_loo_protocol(std::span<const DomainDataset> domains, const RunConfig& cfg,
                                             const ProtocolOptions& options) {
    if (domains.size() < 2) throw ConfigError("leave-one-out protocol needs at least 2 domains");
    std::vector<std::vector<DomainDataset>> trains;
    std::vector<const DomainDataset*> tests;
    const Index folds = std::min(domains.size(), options.max_folds.value_or(domains.size()));
    for (Index held = 0; held < folds; ++held) {
        std::vector<DomainDataset> train;
        for (Index d = 0; d < domains.size(); ++d)
            if (d != held) train.push_back(domains[d]);
        trains.push_back(std::move(train));
        tests.push_back(&domains[held]);
    }
    return run_folds(trains, tests, cfg, options);
}

std::vector<ProtocolResult> run_limited_source(std::span<const DomainDataset> sources,
                                               std::span<const DomainDataset> targets, const RunConfig& cfg,
                                               ProtocolOptions options) {
    if (sources.size() != 2) throw ConfigError("limited-source protocol needs exactly 2 source domains");
    if (targets.empty()) throw ConfigError("limited-source protocol needs at least one target domain");
    // Pre-training and fine-tuning depend only on the sources, so one trained
    // model serves every target.
    std::vector<DomainDataset> train(sources.begin(), sources.end());
    for (const auto& t : targets)
        for (const auto& s : train)
            if (s.domain_name == t.domain_name)
                throw std::logic_error("protocol: target domain " + t.domain_name + " is also a source");

    const FoldOutcome base = run_fold(train, targets[0], cfg, options);
    std::vector<ProtocolResult> results{base.result};
    for (Index t = 1; t < targets.size(); ++t) {
        const ScoredSet scored = score_dataset(base.finetuned, targets[t]);
        ProtocolResult r = base.result;
        const HterResult h = compute_hter(scored);
        r.test_domain = targets[t].domain_name;
        r.hter = h.hter;
        r.auc = compute_auc(scored);
        r.threshold = h.threshold;
        results.push_back(std::move(r));
    }
    return results;
}

namespace {

std::string join(const std::vector<std::string>& v, const char* sep) {
    std::string out;
    for (Index i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
    return out;
}

}  // namespace

void write_results_csv(std::span<const ProtocolResult> results, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write results file: " + path.string());
    out << "protocol,train_domains,test_domain,hter,auc,threshold,seed,threshold_policy\n";
    for (const auto& r : results)
        out << r.protocol << ',' << join(r.train_domains, "+") << ',' << r.test_domain << ',' << format_real(r.hter)
            << ',' << format_real(r.auc) << ',' << format_real(r.threshold) << ',' << r.seed << ','
            << threshold_policy << '\n';
}

std::string format_summary_table(std::span<const ProtocolResult> results) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-40s | %9s | %9s\n", "Setting", "HTER(%)", "AUC(%)");
    os << line << std::string(64, '-') << '\n';
    Real hter = 0, auc = 0;
    for (const auto& r : results) {
        const std::string setting = join(r.train_domains, "&") + " to " + r.test_domain;
        std::snprintf(line, sizeof line, "%-40s | %9.2f | %9.2f\n", setting.c_str(), r.hter, r.auc);
        os << line;
        hter += r.hter;
        auc += r.auc;
    }
    if (!results.empty()) {
        const auto n = static_cast<Real>(results.size());
        std::snprintf(line, sizeof line, "%-40s | %9.2f | %9.2f\n", "mean", hter / n, auc / n);
        os << std::string(64, '-') << '\n' << line;
    }
    os << "threshold policy: " << threshold_policy << '\n';
    return os.str();
}

}  // namespace mcae
