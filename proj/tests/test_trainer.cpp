#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mcae/checkpoint.hpp"
#include "mcae/trainer.hpp"
#include "test_support.hpp"

using namespace mcae;
using namespace mcae::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

LabeledBatch fixed_batch() {
    LabeledBatch b;
    for (const auto& ds : make_synthetic_domains(2, 2, 8, 0))
        for (const auto& s : ds.samples) {
            b.images.push_back(s.image);
            b.labels.push_back(s.label);
            b.domains.push_back(s.domain);
        }
    return b;
}

// Brightness separates the classes in pixel space.
std::vector<DomainDataset> brightness_domains(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<Real> noise(-0.15, 0.15);
    std::vector<DomainDataset> out(2);
    for (int d = 0; d < 2; ++d) {
        out[d].domain_id = d;
        out[d].domain_name = "d" + std::to_string(d);
        for (Label l : {Label::live, Label::spoof})
            for (int i = 0; i < 12; ++i) {
                Image img(8, 8);
                for (Real& v : img.pixels) v = (l == Label::live ? 0.65 : 0.35) + noise(rng);
                out[d].samples.push_back({img, l, d, ""});
            }
    }
    return out;
}

RunConfig short_run() {
    RunConfig cfg = micro_config();
    cfg.schedule.total_epochs = 4;
    cfg.schedule.warmup_epochs = 1;
    cfg.schedule.switch_epoch = 2;
    cfg.schedule.switch_epoch_auto = false;
    cfg.schedule.gate_mode = GateMode::epoch;
    cfg.finetune.epochs = 2;
    return cfg;
}

TrainState state_with(Index epoch, std::optional<Real> running) {
    TrainState s = make_train_state(init_params(micro_config().encoder, micro_config().decoder, 0), 0);
    s.epoch = epoch;
    s.running_rec_loss = running;
    return s;
}

}  // namespace

TEST_CASE("gate rules") {
    ScheduleConfig cfg;
    cfg.epsilon = 0.01;
    cfg.switch_epoch = 5;
    cfg.switch_epoch_auto = false;

    cfg.gate_mode = GateMode::loss_threshold;
    CHECK(contrastive_gate(state_with(9, 0.02), cfg) == Stage::rec_only);
    CHECK(contrastive_gate(state_with(0, 0.009), cfg) == Stage::rec_plus_con);
    CHECK_THROWS_AS(contrastive_gate(state_with(0, std::nullopt), cfg), std::logic_error);

    cfg.gate_mode = GateMode::epoch;
    CHECK(contrastive_gate(state_with(4, 0.0), cfg) == Stage::rec_only);
    CHECK(contrastive_gate(state_with(5, 1.0), cfg) == Stage::rec_plus_con);

    cfg.gate_mode = GateMode::either;
    CHECK(contrastive_gate(state_with(4, 0.5), cfg) == Stage::rec_only);
    CHECK(contrastive_gate(state_with(4, 0.001), cfg) == Stage::rec_plus_con);
    CHECK(contrastive_gate(state_with(5, 0.5), cfg) == Stage::rec_plus_con);

    TrainState fired = state_with(0, 1.0);
    fired.stage = Stage::rec_plus_con;
    CHECK(contrastive_gate(fired, cfg) == Stage::rec_plus_con);
}

TEST_CASE("switch epoch defaults to half the run") {
    ScheduleConfig cfg;
    cfg.total_epochs = 40;
    CHECK(cfg.resolved_switch_epoch() == 20);
    cfg.switch_epoch_auto = false;
    CHECK(!cfg.resolved_switch_epoch());
}

TEST_CASE("gate fires exactly once and con loss appears only after it") {
    const auto data = make_synthetic_domains(3, 4, 8, 1);
    const RunConfig cfg = short_run();
    const PretrainResult r = pretrain(data, cfg);
    REQUIRE(r.metrics.size() == 4);
    CHECK(r.gate_fired_epoch == 2);
    REQUIRE(r.gate_fired_step);
    bool seen_con = false;
    for (const auto& m : r.metrics) {
        CHECK(m.con_loss.has_value() == (m.epoch >= 2));
        if (seen_con) CHECK(m.stage == Stage::rec_plus_con);
        seen_con = seen_con || m.con_loss.has_value();
    }
}

TEST_CASE("beta zero matches the gate-disabled run bit for bit") {
    const auto data = make_synthetic_domains(3, 4, 8, 1);
    RunConfig zero = short_run();
    zero.schedule.beta = 0;
    RunConfig off = short_run();
    off.schedule.switch_epoch.reset();
    off.schedule.epsilon = 0;
    const PretrainResult a = pretrain(data, zero);
    const PretrainResult b = pretrain(data, off);
    CHECK(a.params == b.params);
    CHECK(a.gate_fired_step.has_value());
    CHECK(!b.gate_fired_step.has_value());
    for (Index e = 0; e < 4; ++e) CHECK(a.metrics[e].rec_loss == b.metrics[e].rec_loss);
    CHECK(a.metrics[3].con_loss.has_value());
    CHECK(!b.metrics[3].con_loss.has_value());
}

TEST_CASE("identical inputs give identical trajectories") {
    const LabeledBatch batch = fixed_batch();
    RunConfig cfg = micro_config();
    cfg.schedule.switch_epoch = 0;
    cfg.schedule.switch_epoch_auto = false;
    TrainState a = make_train_state(init_params(cfg.encoder, cfg.decoder, 4), 4);
    TrainState b = make_train_state(init_params(cfg.encoder, cfg.decoder, 4), 4);
    for (int step = 0; step < 10; ++step) {
        const StepReport ra = pretrain_step(a, batch, cfg);
        const StepReport rb = pretrain_step(b, batch, cfg);
        CHECK(ra.loss.total == rb.loss.total);
        CHECK(ra.con_evaluated);
        CHECK(a.params == b.params);
    }
    const auto data = make_synthetic_domains(2, 4, 8, 2);
    const RunConfig run = short_run();
    CHECK(pretrain(data, run).params == pretrain(data, run).params);
}

TEST_CASE("overfitting a fixed batch drives reconstruction loss down") {
    const LabeledBatch batch = fixed_batch();
    const RunConfig cfg = micro_config();
    TrainState s = make_train_state(init_params(cfg.encoder, cfg.decoder, 0), 0);
    Real first = 0, tail = 0;
    for (int step = 0; step < 300; ++step) {
        const Real rec = pretrain_step(s, batch, cfg).loss.rec;
        if (step == 0) first = rec;
        if (step >= 290) tail += rec / 10;
    }
    CHECK(tail < 0.05 * first);
}

TEST_CASE("checkpoint round trip is exact") {
    TempDir a("mcae_test_ckpt_a"), b("mcae_test_ckpt_b");
    const RunConfig cfg = micro_config();
    ModelParams p = init_params(cfg.encoder, cfg.decoder, 3);
    p.round_to_storage_precision();
    save_checkpoint(p, cfg, a.path);
    const Checkpoint c = load_checkpoint(a.path);
    CHECK(c.params == p);
    CHECK(c.has_decoder);
    CHECK(c.has_head);
    CHECK(to_key_values(c.config) == to_key_values(cfg));
    save_checkpoint(c.params, c.config, b.path);
    for (const auto& entry : fs::recursive_directory_iterator(a.path)) {
        if (!entry.is_regular_file()) continue;
        CHECK(slurp(entry.path()) == slurp(b.path / fs::relative(entry.path(), a.path)));
    }
}

TEST_CASE("checkpoint loading errors") {
    TempDir dir("mcae_test_ckpt_err");
    const RunConfig cfg = micro_config();
    ModelParams p = init_params(cfg.encoder, cfg.decoder, 3);
    p.round_to_storage_precision();
    CHECK_THROWS_AS(load_checkpoint(dir.path), RuntimeError);

    save_checkpoint(p, cfg, dir.path, false, true);
    CHECK_THROWS_AS(load_checkpoint(dir.path, LoadScope::full), RuntimeError);
    const Checkpoint enc = load_checkpoint(dir.path, LoadScope::encoder_only);
    CHECK(!enc.has_decoder);
    CHECK(enc.has_head);
    CHECK(enc.params.encoder.patch_embed.weight == p.encoder.patch_embed.weight);

    RunConfig wider = cfg;
    wider.encoder.embed_dim = 16;
    wider.decoder.width = 16;
    save_config(wider, dir.path / "config.txt");
    CHECK_THROWS_AS(load_checkpoint(dir.path, LoadScope::encoder_only), RuntimeError);
}

TEST_CASE("head-only fine-tuning freezes the encoder") {
    const auto data = make_synthetic_domains(2, 4, 8, 3);
    RunConfig cfg = short_run();
    cfg.finetune.head_only = true;
    ModelParams p = init_params(cfg.encoder, cfg.decoder, 0);
    p.round_to_storage_precision();
    const FinetuneResult r = finetune(p, data, cfg);
    const auto before = p.refs();
    const auto after = r.params.refs();
    bool head_moved = false;
    for (Index t = 0; t < before.size(); ++t) {
        if (before[t].group == ParamGroup::head)
            head_moved = head_moved || !(*before[t].tensor == *after[t].tensor);
        else
            CHECK(*before[t].tensor == *after[t].tensor);
    }
    CHECK(head_moved);
}

TEST_CASE("fine-tuning reaches full train accuracy on separable data") {
    const auto data = brightness_domains(5);
    RunConfig cfg = micro_config();
    cfg.finetune.epochs = 50;
    cfg.finetune.augment = false;
    const ModelParams p = init_params(cfg.encoder, cfg.decoder, 1);
    TempDir out("mcae_test_finetune");
    fs::create_directories(out.path);
    const FinetuneResult r = finetune(p, data, cfg, out.path);
    REQUIRE(r.history.size() == 50);
    CHECK(r.history.back().train_accuracy == 1.0);
    CHECK(fs::exists(out.path / "finetune_metrics.csv"));
    const Checkpoint c = load_checkpoint(out.path, LoadScope::encoder_only);
    CHECK(c.params.head.fc.weight == r.params.head.fc.weight);
}

TEST_CASE("pretrain writes checkpoint and metrics") {
    TempDir out("mcae_test_pretrain_out");
    const auto data = make_synthetic_domains(2, 2, 8, 6);
    const PretrainResult r = pretrain(data, short_run(), out.path);
    CHECK(load_checkpoint(out.path).params == r.params);
    std::ifstream in(out.path / "metrics.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,rec_loss,con_loss,stage,lr");
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 4);
}

TEST_CASE("learning-rate schedule") {
    CHECK(learning_rate_at(0, 10, 100, 1.0) == doctest::Approx(0.1));
    CHECK(learning_rate_at(9, 10, 100, 1.0) == doctest::Approx(1.0));
    CHECK(learning_rate_at(99, 10, 100, 1.0) < 0.01);
    for (Index s = 10; s + 1 < 100; ++s) CHECK(learning_rate_at(s + 1, 10, 100, 1.0) <= learning_rate_at(s, 10, 100, 1.0));
}
