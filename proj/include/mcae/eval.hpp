#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcae/config.hpp"
#include "mcae/data.hpp"
#include "mcae/model.hpp"

namespace mcae {

struct ScoredSet {
    std::vector<Real> scores;  // probability of live
    std::vector<Label> labels;
};

// Softmax live probability per sample, no augmentation.
ScoredSet score_dataset(const ModelParams& params, const DomainDataset& dataset);

// Mann–Whitney AUC in percent: P(live score > spoof score), ties count ½.
Real compute_auc(const ScoredSet& s);

struct HterResult {
    Real hter = 0;       // percent
    Real threshold = 0;  // samples with score >= threshold are accepted as live
    Real far = 0;        // spoof accepted / spoof
    Real frr = 0;        // live rejected / live
};

// HTER at the equal-error threshold chosen on the evaluated set itself.
// Candidates are −∞, the midpoints between adjacent distinct scores and +∞;
// the candidate minimizing |FAR − FRR| wins, ties going to lower HTER and
// then to the smaller threshold.
HterResult compute_hter(const ScoredSet& s);

inline constexpr const char* threshold_policy = "eer_on_test_set";

struct ProtocolResult {
    std::string protocol;
    std::vector<std::string> train_domains;
    std::string test_domain;
    Real hter = 0;
    Real auc = 0;
    Real threshold = 0;
    std::uint64_t seed = 0;
};

enum class InitMode {
    pretrain,    // MCAE pre-training, then fine-tuning
    random,      // fine-tune from random initialization
    external,    // fine-tune from a supplied checkpoint's encoder
};

struct ProtocolOptions {
    std::string protocol = "loo";
    InitMode init = InitMode::pretrain;
    std::optional<ModelParams> external_init;
    bool parallel_folds = false;
    std::optional<Index> max_folds;  // leave-one-out: hold out only the first k domains
};

struct FoldOutcome {
    ProtocolResult result;
    ModelParams pretrained;
    ModelParams finetuned;
};

FoldOutcome run_fold(std::span<const DomainDataset> train, const DomainDataset& test, const RunConfig& cfg,
                     const ProtocolOptions& options);

std::vector<ProtocolResult> run_loo_protocol(std::span<const DomainDataset> domains, const RunConfig& cfg,
                                             const ProtocolOptions& options = {});

std::vector<ProtocolResult> run_limited_source(std::span<const DomainDataset> sources,
                                               std::span<const DomainDataset> targets, const RunConfig& cfg,
                                               ProtocolOptions options = {.protocol = "limited_source"});

void write_results_csv(std::span<const ProtocolResult> results, const std::filesystem::path& path);
std::string format_summary_table(std::span<const ProtocolResult> results);

}  // namespace mcae
