#include "mcae/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mcae {

namespace {

Index worker_count() {
#ifdef _OPENMP
    return static_cast<Index>(omp_get_max_threads());
#else
    return 1;
#endif
}

// Runs `backward(i, buffer)` for every sample with per-worker gradient
// buffers, then adds the buffers into `grads` in sample order.
template <typename Backward>
void reduce_sample_gradients(Index count, ModelParams& grads, Backward&& backward) {
    const Index chunk = std::max<Index>(1, std::min(worker_count(), count));
    std::vector<ModelParams> buffers(chunk, grads.zeros_like());
    for (Index start = 0; start < count; start += chunk) {
        const auto len = static_cast<long>(std::min(chunk, count - start));
#pragma omp parallel for schedule(static)
        for (long k = 0; k < len; ++k) {
            auto& buf = buffers[static_cast<Index>(k)];
            buf.set_zero();
            backward(start + static_cast<Index>(k), buf);
        }
        for (long k = 0; k < len; ++k) grads.add(buffers[static_cast<Index>(k)]);
    }
}

}  // namespace

LossReport pretrain_objective(const ModelParams& params, std::span<const TokenSequence> seqs,
                              std::span<const MaskPlan> plans, std::span<const Label> labels,
                              std::span<const int> domains, const PretrainWeights& weights,
                              const ContrastiveConfig& contrastive, ModelParams* grads) {
    const Index N = seqs.size();
    if (N == 0 || plans.size() != N || labels.size() != N || domains.size() != N)
        throw std::invalid_argument("pretrain_objective: inconsistent batch");

    std::vector<EncoderCache> enc_cache(N);
    std::vector<DecoderCache> dec_cache(N);
    std::vector<Mat> latents(N);
    std::vector<Mat> dpred(N);
    std::vector<Real> rec(N);
    const bool want_grad = grads != nullptr;
    const bool need_decoder = weights.rec != 0 || !want_grad;

#pragma omp parallel for schedule(static)
    for (long li = 0; li < static_cast<long>(N); ++li) {
        const auto i = static_cast<Index>(li);
        const Mat visible = gather_rows(seqs[i].tokens, plans[i].visible_idx);
        latents[i] = encode(params, visible, plans[i].visible_idx, want_grad ? &enc_cache[i] : nullptr);
        if (need_decoder) {
            const Mat pred = decode(params, latents[i], plans[i], want_grad ? &dec_cache[i] : nullptr);
            rec[i] = reconstruction_loss(pred, seqs[i].tokens, plans[i], want_grad ? &dpred[i] : nullptr);
        }
    }

    LossReport report;
    for (Real r : rec) report.rec += r;
    report.rec /= static_cast<Real>(N);

    const bool con_active = (weights.con != 0 || weights.evaluate_con) && N >= 2;
    const bool con_grad = want_grad && weights.con != 0 && N >= 2;
    Mat dfeatures;
    if (con_active) {
        const Index E = params.encoder_cfg.embed_dim;
        Mat features(N, E);
        for (Index i = 0; i < N; ++i) {
            const auto f = aggregate(latents[i]);
            std::copy(f.vector.begin(), f.vector.end(), features.row(i).begin());
        }
        report.con = supcon_loss(features, labels, domains, contrastive, con_grad ? &dfeatures : nullptr);
        report.stage = Stage::rec_plus_con;
    }
    report.total = weights.rec * report.rec + weights.con * report.con;

    if (want_grad) {
        const Real rec_scale = weights.rec / static_cast<Real>(N);
        reduce_sample_gradients(N, *grads, [&](Index i, ModelParams& buf) {
            Mat dlatent(latents[i].rows(), latents[i].cols());
            if (weights.rec != 0) {
                Mat dp = dpred[i];
                for (Real& v : dp.values()) v *= rec_scale;
                dlatent = decode_backward(params, dec_cache[i], dp, buf);
            }
            if (con_grad) {
                std::vector<Real> df(dfeatures.row(i).begin(), dfeatures.row(i).end());
                for (Real& v : df) v *= weights.con;
                dlatent += aggregate_backward(latents[i], df);
            }
            encode_backward(params, enc_cache[i], dlatent, buf);
        });
    }
    return report;
}

ClassificationLoss finetune_objective(const ModelParams& params, std::span<const TokenSequence> seqs,
                                      std::span<const Label> labels, bool through_encoder, ModelParams* grads) {
    const Index N = seqs.size();
    if (N == 0 || labels.size() != N) throw std::invalid_argument("finetune_objective: inconsistent batch");
    std::vector<ClassifierCache> cache(N);
    std::vector<Logits> dlogits(N);
    std::vector<Real> loss(N);
    std::vector<int> hit(N);

#pragma omp parallel for schedule(static)
    for (long li = 0; li < static_cast<long>(N); ++li) {
        const auto i = static_cast<Index>(li);
        const Logits logits = classify_tokens(params, seqs[i], &cache[i]);
        const auto prob = softmax(logits);
        const int y = to_int(labels[i]);
        const Real m = std::max(logits[0], logits[1]);
        const Real log_z = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
        loss[i] = log_z - logits[static_cast<Index>(y)];
        hit[i] = (logits[1] > logits[0] ? 1 : 0) == y;
        for (int k = 0; k < 2; ++k)
            dlogits[i][static_cast<Index>(k)] = (prob[static_cast<Index>(k)] - (k == y ? 1.0 : 0.0)) / static_cast<Real>(N);
    }

    ClassificationLoss out;
    for (Index i = 0; i < N; ++i) {
        out.loss += loss[i];
        out.correct += static_cast<Index>(hit[i]);
    }
    out.loss /= static_cast<Real>(N);

    if (grads) {
        reduce_sample_gradients(N, *grads, [&](Index i, ModelParams& buf) {
            classify_backward(params, cache[i], dlogits[i], buf, through_encoder);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------

TrainState make_train_state(ModelParams params, std::uint64_t seed) {
    TrainState s;
    s.optimizer = AdamW(params);
    s.params = std::move(params);
    s.rng.seed(seed);
    return s;
}

Stage contrastive_gate(const TrainState& state, const ScheduleConfig& cfg) {
    if (state.stage == Stage::rec_plus_con) return Stage::rec_plus_con;
    const auto sw = cfg.resolved_switch_epoch();
    const bool epoch_rule = sw && state.epoch >= *sw;
    const bool has_loss = state.running_rec_loss.has_value();
    const bool loss_rule = has_loss && *state.running_rec_loss < cfg.epsilon;
    switch (cfg.gate_mode) {
        case GateMode::loss_threshold:
            if (!has_loss) throw std::logic_error("contrastive_gate: queried before any training step");
            return loss_rule ? Stage::rec_plus_con : Stage::rec_only;
        case GateMode::epoch: return epoch_rule ? Stage::rec_plus_con : Stage::rec_only;
        case GateMode::either: return (epoch_rule || loss_rule) ? Stage::rec_plus_con : Stage::rec_only;
    }
    return Stage::rec_only;
}

StepReport pretrain_step(TrainState& state, const LabeledBatch& batch, const RunConfig& cfg) {
    const auto& sched = cfg.schedule;
    if (batch.size() == 0) throw std::invalid_argument("pretrain_step: empty batch");

    if (state.step > 0 || sched.gate_mode != GateMode::loss_threshold) {
        const Stage next = contrastive_gate(state, sched);
        if (next != state.stage) {
            state.stage = next;
            state.gate_fired_step = state.step;
        }
    }

    const Index patch = state.params.encoder_cfg.patch_size;
    std::vector<TokenSequence> seqs;
    std::vector<MaskPlan> plans;
    seqs.reserve(batch.size());
    plans.reserve(batch.size());
    for (const auto& img : batch.images) {
        seqs.push_back(patchify(img, patch));
        plans.push_back(sample_mask(seqs.back().count(), sched.mask_ratio, state.rng));
    }

    PretrainWeights w;
    const bool con_stage = state.stage == Stage::rec_plus_con && batch.size() >= 2;
    w.evaluate_con = con_stage;
    w.con = con_stage ? sched.beta : 0.0;

    ModelParams grads = state.params.zeros_like();
    LossReport loss = pretrain_objective(state.params, seqs, plans, batch.labels, batch.domains, w, cfg.contrastive,
                                         &grads);
    loss.stage = state.stage;
    if (!std::isfinite(loss.total) || !grads.all_finite())
        throw RuntimeError("pretrain_step: non-finite loss at step " + std::to_string(state.step) +
                           " (rec=" + format_real(loss.rec) + ", con=" + format_real(loss.con) + ")");

    const Real lr = state.total_steps ? learning_rate_at(state.step, state.warmup_steps, state.total_steps,
                                                         sched.learning_rate)
                                      : sched.learning_rate;
    state.optimizer.step(state.params, grads, lr, sched.weight_decay, {true, true, false});

    state.running_rec_loss = state.running_rec_loss
                                 ? running_loss_decay * *state.running_rec_loss + (1 - running_loss_decay) * loss.rec
                                 : loss.rec;
    ++state.step;
    return {loss, lr, con_stage};
}

void write_metrics_csv(const std::vector<EpochMetrics>& metrics, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write metrics file: " + path.string());
    out << "epoch,rec_loss,con_loss,stage,lr\n";
    for (const auto& m : metrics) {
        out << m.epoch << ',' << format_real(m.rec_loss) << ',' << (m.con_loss ? format_real(*m.con_loss) : "")
            << ',' << to_string(m.stage) << ',' << format_real(m.learning_rate) << '\n';
    }
}

namespace {

bool contrastive_reachable(const ScheduleConfig& s) {
    const bool by_loss = s.gate_mode != GateMode::epoch && s.epsilon > 0;
    const bool by_epoch = s.gate_mode != GateMode::loss_threshold && s.resolved_switch_epoch().has_value();
    return by_loss || by_epoch;
}

// Balanced batches whenever the data allows them, so the batch stream does not
// depend on whether the contrastive stage can start.
bool use_balanced_batches(std::span<const DomainDataset> datasets, const ScheduleConfig& s) {
    if (contrastive_reachable(s) && s.beta > 0) return true;
    if (s.batch_size % (2 * datasets.size()) != 0) return false;
    for (const auto& ds : datasets)
        for (Label l : {Label::live, Label::spoof})
            if (std::none_of(ds.samples.begin(), ds.samples.end(), [l](const auto& x) { return x.label == l; }))
                return false;
    return true;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{seed, salt};
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

PretrainResult pretrain(std::span<const DomainDataset> datasets, const RunConfig& cfg,
                        const std::optional<std::filesystem::path>& out_dir) {
    validate(cfg);
    if (datasets.empty()) throw ConfigError("pretrain: no datasets");
    const auto& sched = cfg.schedule;

    TrainState state = make_train_state(init_params(cfg.encoder, cfg.decoder, sched.seed), sched.seed);
    BatchIterator batches(datasets, sched.batch_size, use_balanced_batches(datasets, sched), derive_seed(sched.seed, 1));
    std::mt19937_64 augment_rng(derive_seed(sched.seed, 2));
    const AugmentOptions augment{sched.crop, cfg.encoder.image_size};

    const Index per_epoch = batches.batches_per_epoch();
    state.total_steps = per_epoch * sched.total_epochs;
    state.warmup_steps = per_epoch * sched.warmup_epochs;

    PretrainResult result;
    for (Index epoch = 0; epoch < sched.total_epochs; ++epoch) {
        state.epoch = epoch;
        batches.reset(epoch);
        EpochMetrics em;
        em.epoch = epoch;
        Real con_sum = 0;
        Index con_steps = 0;
        Index steps = 0;
        while (auto batch = sched.augment ? batches.next(augment, augment_rng) : batches.next()) {
            const StepReport r = pretrain_step(state, *batch, cfg);
            em.rec_loss += r.loss.rec;
            em.learning_rate = r.learning_rate;
            if (r.con_evaluated) {
                con_sum += r.loss.con;
                ++con_steps;
            }
            ++steps;
        }
        em.rec_loss /= static_cast<Real>(std::max<Index>(1, steps));
        if (con_steps) em.con_loss = con_sum / static_cast<Real>(con_steps);
        em.stage = state.stage;
        result.metrics.push_back(em);
    }

    result.gate_fired_step = state.gate_fired_step;
    if (state.gate_fired_step) result.gate_fired_epoch = *state.gate_fired_step / per_epoch;
    state.params.round_to_storage_precision();
    result.params = std::move(state.params);

    if (out_dir) {
        save_checkpoint(result.params, cfg, *out_dir, sched.keep_decoder, true);
        write_metrics_csv(result.metrics, *out_dir / "metrics.csv");
    }
    return result;
}

FinetuneResult finetune(const ModelParams& pretrained, std::span<const DomainDataset> datasets, const RunConfig& cfg,
                        const std::optional<std::filesystem::path>& out_dir) {
    validate(cfg);
    if (datasets.empty()) throw ConfigError("finetune: no datasets");
    const auto& ft = cfg.finetune;
    const std::uint64_t seed = cfg.schedule.seed;

    FinetuneResult result;
    result.params = pretrained;
    reset_head(result.params, derive_seed(seed, 3));
    AdamW optimizer(result.params);
    BatchIterator batches(datasets, std::max<Index>(2, ft.batch_size), false, derive_seed(seed, 4));
    std::mt19937_64 augment_rng(derive_seed(seed, 5));
    const AugmentOptions augment{ft.crop, cfg.encoder.image_size};
    const Index per_epoch = batches.batches_per_epoch();
    const Index total_steps = per_epoch * ft.epochs;
    const Index warmup_steps = per_epoch * ft.warmup_epochs;
    const bool through_encoder = !ft.head_only;
    const Index patch = cfg.encoder.patch_size;

    Index step = 0;
    for (Index epoch = 0; epoch < ft.epochs; ++epoch) {
        batches.reset(epoch);
        FinetuneEpoch fe;
        fe.epoch = epoch;
        Index seen = 0;
        Index correct = 0;
        while (auto batch = ft.augment ? batches.next(augment, augment_rng) : batches.next()) {
            std::vector<TokenSequence> seqs;
            for (const auto& img : batch->images) seqs.push_back(patchify(img, patch));
            ModelParams grads = result.params.zeros_like();
            const auto loss = finetune_objective(result.params, seqs, batch->labels, through_encoder, &grads);
            if (!std::isfinite(loss.loss)) throw RuntimeError("finetune: non-finite loss");
            const Real lr = learning_rate_at(step++, warmup_steps, total_steps, ft.learning_rate);
            optimizer.step(result.params, grads, lr, ft.weight_decay, {through_encoder, false, true});
            fe.loss += loss.loss * static_cast<Real>(batch->size());
            correct += loss.correct;
            seen += batch->size();
        }
        fe.loss /= static_cast<Real>(seen);
        fe.train_accuracy = static_cast<Real>(correct) / static_cast<Real>(seen);
        result.history.push_back(fe);
    }
    result.params.round_to_storage_precision();

    if (out_dir) {
        save_checkpoint(result.params, cfg, *out_dir, false, true);
        std::ofstream out(*out_dir / "finetune_metrics.csv");
        out << "epoch,loss,train_accuracy\n";
        for (const auto& e : result.history)
            out << e.epoch << ',' << format_real(e.loss) << ',' << format_real(e.train_accuracy) << '\n';
    }
    return result;
}

}  // namespace mcae
