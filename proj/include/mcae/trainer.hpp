#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mcae/checkpoint.hpp"
#include "mcae/config.hpp"
#include "mcae/data.hpp"
#include "mcae/losses.hpp"
#include "mcae/model.hpp"
#include "mcae/optim.hpp"

namespace mcae {

// ---------------------------------------------------------------------------
// Batch objectives (forward + backward over a batch)
//
// Samples are processed in parallel; per-sample gradients are reduced in
// sample order, so the result is independent of the OpenMP thread count.

struct PretrainWeights {
    Real rec = 1;
    Real con = 0;             // weight of the contrastive term in the gradient
    bool evaluate_con = false;  // compute the contrastive value even when con == 0
};

LossReport pretrain_objective(const ModelParams& params, std::span<const TokenSequence> seqs,
                              std::span<const MaskPlan> plans, std::span<const Label> labels,
                              std::span<const int> domains, const PretrainWeights& weights,
                              const ContrastiveConfig& contrastive, ModelParams* grads);

struct ClassificationLoss {
    Real loss = 0;     // mean cross-entropy
    Index correct = 0;  // argmax hits
};

ClassificationLoss finetune_objective(const ModelParams& params, std::span<const TokenSequence> seqs,
                                      std::span<const Label> labels, bool through_encoder, ModelParams* grads);

// ---------------------------------------------------------------------------
// Pre-training

struct TrainState {
    ModelParams params;
    AdamW optimizer;
    Index epoch = 0;
    Index step = 0;
    Index total_steps = 0;   // for the learning-rate schedule; 0 = constant rate
    Index warmup_steps = 0;
    std::optional<Real> running_rec_loss;
    Stage stage = Stage::rec_only;
    std::optional<Index> gate_fired_step;
    std::mt19937_64 rng;
};

TrainState make_train_state(ModelParams params, std::uint64_t seed);

inline constexpr Real running_loss_decay = 0.99;

// Stage the next step should run in. Monotone: once rec_plus_con, always rec_plus_con.
Stage contrastive_gate(const TrainState& state, const ScheduleConfig& cfg);

struct StepReport {
    LossReport loss;
    Real learning_rate = 0;
    bool con_evaluated = false;
};

StepReport pretrain_step(TrainState& state, const LabeledBatch& batch, const RunConfig& cfg);

struct EpochMetrics {
    Index epoch = 0;
    Real rec_loss = 0;
    std::optional<Real> con_loss;  // absent when no step of the epoch ran the contrastive stage
    Stage stage = Stage::rec_only;
    Real learning_rate = 0;
};

struct PretrainResult {
    ModelParams params;
    std::vector<EpochMetrics> metrics;
    std::optional<Index> gate_fired_step;
    std::optional<Index> gate_fired_epoch;
};

// Runs total_epochs over the merged datasets. When `out_dir` is given, writes
// the checkpoint archive plus metrics.csv there.
PretrainResult pretrain(std::span<const DomainDataset> datasets, const RunConfig& cfg,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt);

void write_metrics_csv(const std::vector<EpochMetrics>& metrics, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneEpoch {
    Index epoch = 0;
    Real loss = 0;
    Real train_accuracy = 0;
};

struct FinetuneResult {
    ModelParams params;
    std::vector<FinetuneEpoch> history;
};

// Trains encoder + fresh linear head (head only when cfg.finetune.head_only)
// with 2-class cross-entropy on full token sequences.
FinetuneResult finetune(const ModelParams& pretrained, std::span<const DomainDataset> datasets, const RunConfig& cfg,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace mcae
