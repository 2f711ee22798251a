#include "mcae/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "mcae/analysis.hpp"
#include "mcae/checkpoint.hpp"
#include "mcae/eval.hpp"
#include "mcae/trainer.hpp"

namespace fs = std::filesystem;

namespace mcae::cli {

namespace {

// Flags shared by every command. Values start at the default preset so --help
// shows them; a flag only overrides the preset/config when it was given.
struct Flags {
    std::string config_path;
    std::string preset = "default";
    std::string out_dir;
    std::uint64_t seed = 0;
    Index epochs = 100;
    Index batch_size = 24;
    Real mask_ratio = 0.85;
    Index decoder_width = 512;
    Index decoder_depth = 8;
    Real tau = 0.1;
    Real lambda_cross = 2.0;
    Real lambda_same = 1.0;
    Real lambda_spoof = 1.0;
    Real beta = 1.0;
    Real epsilon = 0.01;
    std::string switch_epoch = "auto";
    std::string gate_mode = "either";
    bool parallel_folds = false;
    Index finetune_epochs = 50;

    std::string data_dir;
    int domains = 4;
    int per_class = 50;
    std::uint64_t data_seed = 0;

    CLI::App* active = nullptr;  // the parsed subcommand

    bool given(const std::string& name) const {
        const CLI::Option* o = active ? active->get_option_no_throw("--" + name) : nullptr;
        return o && o->count() > 0;
    }
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config_path, "key=value config file applied over the preset");
    cmd->add_option("--preset", f.preset, "base configuration (flag defaults shown are the default preset)")
        ->check(CLI::IsMember({"default", "micro"}))
        ->capture_default_str();
    cmd->add_option("--out-dir,--out", f.out_dir,
                    "output directory (default: $MCAE_OUT_DIR/<command> or mcae_runs/<command>)");
    cmd->add_option("--seed", f.seed, "training seed")->capture_default_str();
    cmd->add_option("--epochs", f.epochs, "pre-training epochs")->capture_default_str();
    cmd->add_option("--batch-size", f.batch_size, "pre-training batch size")->capture_default_str();
    cmd->add_option("--mask-ratio", f.mask_ratio, "fraction of masked tokens")->capture_default_str();
    cmd->add_option("--decoder-width", f.decoder_width, "decoder width")->capture_default_str();
    cmd->add_option("--decoder-depth", f.decoder_depth, "decoder depth")->capture_default_str();
    cmd->add_option("--tau", f.tau, "contrastive temperature")->capture_default_str();
    cmd->add_option("--lambda-cross", f.lambda_cross, "weight of live cross-domain positives")->capture_default_str();
    cmd->add_option("--lambda-same", f.lambda_same, "weight of live same-domain positives")->capture_default_str();
    cmd->add_option("--lambda-spoof", f.lambda_spoof, "weight of spoof positives")->capture_default_str();
    cmd->add_option("--beta", f.beta, "weight of the contrastive term")->capture_default_str();
    cmd->add_option("--epsilon", f.epsilon, "reconstruction-loss gate threshold")->capture_default_str();
    cmd->add_option("--switch-epoch", f.switch_epoch, "epoch gate: auto (half of epochs), none, or an integer")
        ->capture_default_str();
    cmd->add_option("--gate-mode", f.gate_mode, "contrastive gate rule")
        ->check(CLI::IsMember({"loss_threshold", "epoch", "either"}))
        ->capture_default_str();
    cmd->add_flag("--parallel-folds", f.parallel_folds, "run protocol folds concurrently");
    cmd->add_option("--finetune-epochs", f.finetune_epochs, "fine-tuning epochs")->capture_default_str();
    cmd->add_option("--data-dir", f.data_dir, "dataset root (<domain>/<live|spoof>/*.png); synthetic data when absent");
    cmd->add_option("--domains", f.domains, "number of synthetic domains")->capture_default_str();
    cmd->add_option("--per-class", f.per_class, "synthetic images per class and domain")->capture_default_str();
    cmd->add_option("--data-seed", f.data_seed, "synthetic data seed")->capture_default_str();
}

RunConfig resolve_config(const Flags& f) {
    RunConfig cfg = f.preset == "micro" ? micro_config() : RunConfig{};
    if (!f.config_path.empty()) cfg = load_config(f.config_path, cfg);
    auto& s = cfg.schedule;
    if (f.given("seed")) s.seed = f.seed;
    if (f.given("epochs")) s.total_epochs = f.epochs;
    if (f.given("batch-size")) s.batch_size = f.batch_size;
    if (f.given("mask-ratio")) s.mask_ratio = f.mask_ratio;
    if (f.given("decoder-width")) cfg.decoder.width = f.decoder_width;
    if (f.given("decoder-depth")) cfg.decoder.depth = f.decoder_depth;
    if (f.given("tau")) cfg.contrastive.temperature = f.tau;
    if (f.given("lambda-cross")) cfg.contrastive.lambda_live_cross = f.lambda_cross;
    if (f.given("lambda-same")) cfg.contrastive.lambda_live_same = f.lambda_same;
    if (f.given("lambda-spoof")) cfg.contrastive.lambda_spoof = f.lambda_spoof;
    if (f.given("beta")) s.beta = f.beta;
    if (f.given("epsilon")) s.epsilon = f.epsilon;
    if (f.given("switch-epoch")) apply_key_value(cfg, "switch_epoch", f.switch_epoch);
    if (f.given("gate-mode")) s.gate_mode = parse_gate_mode(f.gate_mode);
    if (f.given("finetune-epochs")) cfg.finetune.epochs = f.finetune_epochs;
    return cfg;
}

fs::path resolve_out_dir(const Flags& f, const std::string& command) {
    if (!f.out_dir.empty()) return f.out_dir;
    const char* root = std::getenv("MCAE_OUT_DIR");
    return fs::path(root && *root ? root : "mcae_runs") / command;
}

std::vector<DomainDataset> load_data(const Flags& f, Index image_size, std::ostream& out) {
    if (!f.data_dir.empty()) {
        auto ds = load_all_domains(f.data_dir, image_size);
        for (const auto& d : ds)
            out << "loaded " << d.domain_name << ": " << d.samples.size() << " images"
                << (d.skipped_files ? ", " + std::to_string(d.skipped_files) + " skipped" : "") << '\n';
        return ds;
    }
    out << "synthetic data: " << f.domains << " domains, " << f.per_class << " per class, seed " << f.data_seed
        << '\n';
    return make_synthetic_domains(f.domains, f.per_class, image_size, f.data_seed);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<DomainDataset> pick_domains(const std::vector<DomainDataset>& all, const std::vector<std::string>& names) {
    std::vector<DomainDataset> out;
    for (const auto& n : names) {
        const auto it = std::find_if(all.begin(), all.end(), [&](const auto& d) { return d.domain_name == n; });
        if (it == all.end()) throw ConfigError("unknown domain: " + n);
        out.push_back(*it);
    }
    return out;
}

void echo_config(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    out << "# resolved config\n" << to_config_text(cfg) << '\n';
    fs::create_directories(out_dir);
    save_config(cfg, out_dir / "resolved_config.txt");
}

// One row per configuration: per-fold HTER/AUC columns plus their means.
void write_sweep_csv(const fs::path& path, const std::string& key,
                     const std::vector<std::pair<std::string, std::vector<ProtocolResult>>>& rows) {
    std::ofstream csv(path);
    if (!csv) throw RuntimeError("cannot write " + path.string());
    csv << key;
    if (!rows.empty())
        for (const auto& r : rows.front().second) csv << ",hter_" << r.test_domain << ",auc_" << r.test_domain;
    csv << ",hter_mean,auc_mean,seed,threshold_policy\n";
    for (const auto& [name, results] : rows) {
        csv << name;
        Real h = 0, a = 0;
        for (const auto& r : results) {
            csv << ',' << format_real(r.hter) << ',' << format_real(r.auc);
            h += r.hter;
            a += r.auc;
        }
        const auto n = static_cast<Real>(std::max<std::size_t>(1, results.size()));
        csv << ',' << format_real(h / n) << ',' << format_real(a / n) << ','
            << (results.empty() ? 0 : results.front().seed) << ',' << threshold_policy << '\n';
    }
}

void print_sweep_row(std::ostream& out, const std::string& name, const std::vector<ProtocolResult>& results) {
    Real h = 0, a = 0;
    for (const auto& r : results) {
        h += r.hter;
        a += r.auc;
    }
    const auto n = static_cast<Real>(std::max<std::size_t>(1, results.size()));
    char line[160];
    std::snprintf(line, sizeof line, "%-16s HTER %6.2f  AUC %6.2f  (%zu folds)\n", name.c_str(), h / n, a / n,
                  results.size());
    out << line;
}

Index decoder_heads_for(Index width) {
    for (Index h : {8, 4, 2, 1})
        if (width % h == 0) return h;
    return 1;
}

// ---------------------------------------------------------------------------
// Theory checks

struct TheoryRow {
    std::string name;
    Real value;
    Real expected;
    Real tolerance;
    bool pass;
};

std::vector<Real> random_stochastic(Index rows, Index cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<Real> u(0.0, 1.0);
    std::vector<Real> m(rows * cols);
    for (Index r = 0; r < rows; ++r) {
        Real s = 0;
        for (Index c = 0; c < cols; ++c) s += m[r * cols + c] = u(rng) + 1e-3;
        for (Index c = 0; c < cols; ++c) m[r * cols + c] /= s;
    }
    return m;
}

std::vector<TheoryRow> theory_checks(std::uint64_t seed, Index chains) {
    std::vector<TheoryRow> rows;
    const auto add = [&](std::string name, Real value, Real expected, Real tol) {
        rows.push_back({std::move(name), value, expected, tol, std::abs(value - expected) <= tol});
    };

    const DiscreteJoint product({"x", "y"}, {2, 2}, {0.24, 0.36, 0.16, 0.24});
    add("mi_product", mutual_information(product, "x", "y"), 0.0, 1e-6);
    const DiscreteJoint copy({"x", "y"}, {2, 2}, {0.5, 0.0, 0.0, 0.5});
    add("mi_copy", mutual_information(copy, "x", "y"), 1.0, 1e-6);
    const DiscreteJoint hand({"x", "y"}, {2, 2}, {0.4, 0.1, 0.1, 0.4});
    add("mi_hand", mutual_information(hand, "x", "y"), 0.2780719051126377, 1e-6);

    std::mt19937_64 rng(seed);
    Index holds = 0, holds_forward = 0;
    Real worst = 0;
    for (Index i = 0; i < chains; ++i) {
        // Aggregate – tokens – generator chain.
        const auto p_a = random_stochastic(1, 3, rng);
        const auto p_t = random_stochastic(3, 3, rng);
        const auto p_g = random_stochastic(3, 3, rng);
        const auto joint = make_markov_chain({"A", "T", "G"}, p_a, p_t, 3, p_g, 3);
        const auto r = verify_dpi_chain(joint, "A", "T", "G", 0.0);
        holds += r.dpi_holds;
        worst = std::max(worst, r.info_first_last - r.info_middle_last);
        // Same check with the chain built in the opposite order.
        const auto fwd = make_markov_chain({"T", "A", "G"}, p_a, p_t, 3, p_g, 3);
        holds_forward += verify_dpi_chain(fwd, "T", "A", "G", 0.0).dpi_holds;
    }
    add("dpi_chains_holding", static_cast<Real>(holds), static_cast<Real>(chains), 0.0);
    add("dpi_chains_holding_reversed", static_cast<Real>(holds_forward), static_cast<Real>(chains), 0.0);
    add("dpi_worst_violation_bits", std::max(worst, 0.0), 0.0, 1e-10);

    for (Real sigma : {0.5, 1.0, 2.0}) {
        std::normal_distribution<Real> nd(0, 1);
        std::uniform_real_distribution<Real> scale(0.1, 2.0);
        std::vector<std::vector<Real>> x(64), mu(64);
        for (Index i = 0; i < 64; ++i) {
            const Real s = scale(rng);
            for (Index k = 0; k < 16; ++k) {
                mu[i].push_back(nd(rng));
                x[i].push_back(mu[i].back() + s * nd(rng));
            }
        }
        const auto rep = variational_mse_equivalence(x, mu, sigma);
        add("gaussian_slope_sigma_" + format_real(sigma), rep.fitted_slope, -1.0 / (2 * sigma * sigma), 1e-9);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Commands

struct Context {
    Flags flags;
    std::ostream& out;
    std::ostream& err;
};

void cmd_synth(Context& c, const std::string& command) {
    const RunConfig cfg = resolve_config(c.flags);
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(cfg, dir, c.out);
    const auto ds = make_synthetic_domains(c.flags.domains, c.flags.per_class, cfg.encoder.image_size,
                                           c.flags.data_seed);
    for (const auto& d : ds) {
        write_domain_dir(d, dir);
        c.out << "wrote " << (dir / d.domain_name).string() << " (" << d.samples.size() << " images)\n";
    }
}

void cmd_pretrain(Context& c, const std::string& command, const std::string& train_domains) {
    const RunConfig cfg = resolve_config(c.flags);
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(cfg, dir, c.out);
    auto all = load_data(c.flags, cfg.encoder.image_size, c.out);
    const auto ds = train_domains.empty() ? all : pick_domains(all, split(train_domains, ','));
    const auto result = pretrain(ds, cfg, dir);
    for (const auto& m : result.metrics)
        c.out << "epoch " << m.epoch << " rec " << format_real(m.rec_loss)
              << (m.con_loss ? " con " + format_real(*m.con_loss) : "") << " stage " << to_string(m.stage) << '\n';
    c.out << "contrastive gate: "
          << (result.gate_fired_epoch ? "epoch " + std::to_string(*result.gate_fired_epoch) : "never") << '\n'
          << "checkpoint: " << dir.string() << '\n';
}

void cmd_finetune(Context& c, const std::string& command, const std::string& checkpoint,
                  const std::string& train_domains) {
    RunConfig cfg = resolve_config(c.flags);
    ModelParams init;
    if (!checkpoint.empty()) {
        const Checkpoint ck = load_checkpoint(checkpoint, LoadScope::encoder_only);
        cfg.encoder = ck.config.encoder;
        cfg.decoder = ck.config.decoder;
        init = ck.params;
    } else {
        init = init_params(cfg.encoder, cfg.decoder, cfg.schedule.seed);
    }
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(cfg, dir, c.out);
    auto all = load_data(c.flags, cfg.encoder.image_size, c.out);
    const auto ds = train_domains.empty() ? all : pick_domains(all, split(train_domains, ','));
    const auto result = finetune(init, ds, cfg, dir);
    const auto& last = result.history.back();
    c.out << "final epoch " << last.epoch << " loss " << format_real(last.loss) << " train accuracy "
          << format_real(last.train_accuracy) << '\n'
          << "checkpoint: " << dir.string() << '\n';
}

ProtocolOptions protocol_options(const Flags& f, const std::string& protocol, Index max_folds) {
    ProtocolOptions o;
    o.protocol = protocol;
    o.parallel_folds = f.parallel_folds;
    if (max_folds > 0) o.max_folds = max_folds;
    return o;
}

void report_results(Context& c, const std::vector<ProtocolResult>& results, const fs::path& dir) {
    write_results_csv(results, dir / "results.csv");
    const std::string table = format_summary_table(results);
    std::ofstream(dir / "summary.txt") << table;
    c.out << table << "results: " << (dir / "results.csv").string() << '\n';
}

void cmd_eval_loo(Context& c, const std::string& command, Index max_folds) {
    const RunConfig cfg = resolve_config(c.flags);
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(cfg, dir, c.out);
    const auto ds = load_data(c.flags, cfg.encoder.image_size, c.out);
    report_results(c, run_loo_protocol(ds, cfg, protocol_options(c.flags, "loo", max_folds)), dir);
}

void cmd_eval_limited(Context& c, const std::string& command, const std::string& sources,
                      const std::string& targets) {
    const RunConfig cfg = resolve_config(c.flags);
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(cfg, dir, c.out);
    const auto all = load_data(c.flags, cfg.encoder.image_size, c.out);
    if (all.size() < 3) throw ConfigError("limited-source protocol needs at least 3 domains");
    std::vector<std::string> src = split(sources, ',');
    std::vector<std::string> tgt = split(targets, ',');
    if (src.empty()) src = {all[0].domain_name, all[1].domain_name};
    if (tgt.empty())
        for (const auto& d : all)
            if (std::find(src.begin(), src.end(), d.domain_name) == src.end()) tgt.push_back(d.domain_name);
    report_results(c,
                   run_limited_source(pick_domains(all, src), pick_domains(all, tgt), cfg,
                                      protocol_options(c.flags, "limited_source", 0)),
                   dir);
}

void cmd_sweep_mask(Context& c, const std::string& command, const std::string& ratios, Index max_folds) {
    const RunConfig base = resolve_config(c.flags);
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(base, dir, c.out);
    const auto ds = load_data(c.flags, base.encoder.image_size, c.out);
    std::vector<std::pair<std::string, std::vector<ProtocolResult>>> rows;
    for (const auto& r : split(ratios, ',')) {
        RunConfig cfg = base;
        apply_key_value(cfg, "mask_ratio", r);
        validate(cfg);
        rows.emplace_back(r, run_loo_protocol(ds, cfg, protocol_options(c.flags, "loo", max_folds)));
        print_sweep_row(c.out, "ratio " + rows.back().first, rows.back().second);
    }
    write_sweep_csv(dir / "sweep_mask_ratio.csv", "mask_ratio", rows);
    c.out << "results: " << (dir / "sweep_mask_ratio.csv").string() << '\n';
}

void cmd_sweep_decoder(Context& c, const std::string& command, const std::string& decoders, Index max_folds) {
    const RunConfig base = resolve_config(c.flags);
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(base, dir, c.out);
    const auto ds = load_data(c.flags, base.encoder.image_size, c.out);
    std::vector<std::pair<std::string, std::vector<ProtocolResult>>> rows;
    for (const auto& item : split(decoders, ',')) {
        const auto x = item.find('x');
        if (x == std::string::npos) throw ConfigError("decoder size must look like <width>x<depth>: " + item);
        RunConfig cfg = base;
        try {
            cfg.decoder.width = std::stoul(item.substr(0, x));
            cfg.decoder.depth = std::stoul(item.substr(x + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad decoder size: " + item);
        }
        cfg.decoder.heads = decoder_heads_for(cfg.decoder.width);
        rows.emplace_back(item, run_loo_protocol(ds, cfg, protocol_options(c.flags, "loo", max_folds)));
        print_sweep_row(c.out, "decoder " + item, rows.back().second);
    }
    write_sweep_csv(dir / "sweep_decoder.csv", "decoder", rows);
    c.out << "results: " << (dir / "sweep_decoder.csv").string() << '\n';
}

void cmd_ablate(Context& c, const std::string& command, const std::string& modes, const std::string& checkpoint,
                Index max_folds) {
    const RunConfig base = resolve_config(c.flags);
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(base, dir, c.out);
    const auto ds = load_data(c.flags, base.encoder.image_size, c.out);
    std::vector<std::pair<std::string, std::vector<ProtocolResult>>> rows;
    for (const auto& mode : split(modes, ',')) {
        RunConfig cfg = base;
        ProtocolOptions o = protocol_options(c.flags, "ablate_" + mode, max_folds);
        if (mode == "full") {
            o.init = InitMode::pretrain;
        } else if (mode == "no-pretrain") {
            o.init = InitMode::random;
        } else if (mode == "imagenet-free") {
            if (!checkpoint.empty()) {
                const Checkpoint ck = load_checkpoint(checkpoint, LoadScope::encoder_only);
                if (!(ck.config.encoder == cfg.encoder))
                    throw ConfigError("external checkpoint encoder does not match the run configuration");
                o.init = InitMode::external;
                o.external_init = ck.params;
            } else {
                c.out << "imagenet-free: no --checkpoint given, using random-init fine-tuning only\n";
                o.init = InitMode::external;
                o.external_init = init_params(cfg.encoder, cfg.decoder, cfg.schedule.seed + 1);
            }
        } else if (mode == "no-contrastive") {
            cfg.schedule.beta = 0;
        } else if (mode == "uniform-lambda") {
            cfg.contrastive.lambda_live_cross = cfg.contrastive.lambda_live_same = cfg.contrastive.lambda_spoof = 1.0;
        } else {
            throw ConfigError("unknown ablation mode: " + mode);
        }
        rows.emplace_back(mode, run_loo_protocol(ds, cfg, o));
        print_sweep_row(c.out, mode, rows.back().second);
    }
    write_sweep_csv(dir / "ablate.csv", "mode", rows);
    c.out << "results: " << (dir / "ablate.csv").string() << '\n';
}

void cmd_visualize(Context& c, const std::string& command, const std::string& checkpoint,
                   const std::string& finetuned, Index num_images, Real perplexity, Index tsne_iters) {
    if (checkpoint.empty()) throw ConfigError("visualize needs --checkpoint (pre-trained, with decoder)");
    const Checkpoint ck = load_checkpoint(checkpoint, LoadScope::encoder_only);
    RunConfig cfg = resolve_config(c.flags);
    cfg.encoder = ck.config.encoder;
    cfg.decoder = ck.config.decoder;
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(cfg, dir, c.out);
    const auto ds = load_data(c.flags, cfg.encoder.image_size, c.out);

    std::vector<Image> images;
    std::vector<Label> image_labels;
    for (const auto& d : ds)
        for (const auto& s : d.samples)
            if (images.size() < num_images) {
                images.push_back(s.image);
                image_labels.push_back(s.label);
            }
    render_reconstructions(ck, images, cfg.schedule.mask_ratio, cfg.schedule.seed, dir / "reconstructions.png");
    c.out << "wrote " << (dir / "reconstructions.png").string() << '\n';

    ModelParams features_model = ck.params;
    if (!finetuned.empty()) {
        const Checkpoint ft = load_checkpoint(finetuned, LoadScope::encoder_only);
        if (!ft.has_head) throw ConfigError("fine-tuned checkpoint has no classification head");
        for (Index i = 0; i < images.size(); ++i) {
            const fs::path p = dir / ("attention_" + std::to_string(i) + ".png");
            write_heatmap(attention_map(ft.params, images[i], image_labels[i]).heatmap, p);
            c.out << "wrote " << p.string() << '\n';
        }
        features_model = ft.params;
    }

    Mat features;
    std::vector<Label> labels;
    std::vector<int> domains;
    std::vector<std::vector<Real>> rows;
    for (const auto& d : ds)
        for (const auto& s : d.samples) {
            if (rows.size() >= 2000) break;
            const TokenSequence seq = patchify(s.image, cfg.encoder.patch_size);
            const MaskPlan plan = all_visible(seq.count());
            rows.push_back(aggregate(encode(features_model, seq.tokens, plan.visible_idx)).vector);
            labels.push_back(s.label);
            domains.push_back(s.domain);
        }
    features = Mat(rows.size(), cfg.encoder.embed_dim);
    for (Index i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), features.row(i).begin());
    EmbeddingCloud cloud = tsne_embed(features, std::min(perplexity, static_cast<Real>(rows.size() - 1) / 3.0),
                                      tsne_iters, cfg.schedule.seed);
    cloud.labels = std::move(labels);
    cloud.domains = std::move(domains);
    write_embedding_csv(cloud, dir / "tsne.csv");
    c.out << "wrote " << (dir / "tsne.csv").string() << '\n';
}

void cmd_verify_theory(Context& c, const std::string& command, Index chains) {
    const RunConfig cfg = resolve_config(c.flags);
    const fs::path dir = resolve_out_dir(c.flags, command);
    echo_config(cfg, dir, c.out);
    const auto rows = theory_checks(cfg.schedule.seed, chains);
    std::ofstream csv(dir / "theory_report.csv");
    csv << "check,value,expected,tolerance,pass\n";
    bool all = true;
    for (const auto& r : rows) {
        csv << r.name << ',' << format_real(r.value) << ',' << format_real(r.expected) << ','
            << format_real(r.tolerance) << ',' << (r.pass ? "true" : "false") << '\n';
        char line[200];
        std::snprintf(line, sizeof line, "%-32s %.12g (expected %.12g) %s\n", r.name.c_str(), r.value, r.expected,
                      r.pass ? "PASS" : "FAIL");
        c.out << line;
        all = all && r.pass;
    }
    if (!all) throw RuntimeError("theory checks failed; see " + (dir / "theory_report.csv").string());
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Masked contrastive autoencoder pre-training for face anti-spoofing", "mcae"};
    app.require_subcommand(1);
    Flags flags;

    std::string train_domains, checkpoint, finetuned, sources, targets;
    std::string ratios = "0.55,0.65,0.75,0.85,0.95";
    std::string decoders = "48x1,192x2,384x4,512x8,768x10";
    std::string modes = "no-pretrain,imagenet-free,full";
    Index max_folds = 0;
    Index num_images = 4;
    Real perplexity = 10;
    Index tsne_iters = 300;
    Index chains = 100;

    std::vector<std::pair<CLI::App*, std::string>> commands;
    const auto add = [&](const std::string& name, const std::string& help) {
        CLI::App* cmd = app.add_subcommand(name, help);
        add_common(cmd, flags);
        commands.emplace_back(cmd, name);
        return cmd;
    };
    add("synth-data", "write a synthetic multi-domain dataset");
    auto* pre = add("pretrain", "masked reconstruction + contrastive pre-training");
    pre->add_option("--train-domains", train_domains, "comma-separated domains (default: all)");
    auto* ft = add("finetune", "fine-tune encoder and classification head");
    ft->add_option("--checkpoint", checkpoint, "pre-trained checkpoint directory (default: random init)");
    ft->add_option("--train-domains", train_domains, "comma-separated domains (default: all)");
    auto* loo = add("eval-loo", "leave-one-domain-out protocol");
    loo->add_option("--max-folds", max_folds, "hold out only the first k domains (0 = all)");
    auto* lim = add("eval-limited", "limited-source protocol (2 sources)");
    lim->add_option("--sources", sources, "two comma-separated source domains (default: first two)");
    lim->add_option("--targets", targets, "comma-separated target domains (default: the rest)");
    auto* sm = add("sweep-mask-ratio", "leave-one-out results per mask ratio");
    sm->add_option("--ratios", ratios, "comma-separated mask ratios")->capture_default_str();
    sm->add_option("--max-folds", max_folds, "hold out only the first k domains (0 = all)");
    auto* sd = add("sweep-decoder", "leave-one-out results per decoder size");
    sd->add_option("--decoders", decoders, "comma-separated <width>x<depth> list")->capture_default_str();
    sd->add_option("--max-folds", max_folds, "hold out only the first k domains (0 = all)");
    auto* ab = add("ablate", "pre-training ablations");
    ab->add_option("--mode", modes, "comma-separated: full, no-pretrain, imagenet-free, no-contrastive, uniform-lambda")
        ->capture_default_str();
    ab->add_option("--checkpoint", checkpoint, "external checkpoint for imagenet-free");
    ab->add_option("--max-folds", max_folds, "hold out only the first k domains (0 = all)");
    auto* vis = add("visualize", "reconstructions, attention maps and t-SNE");
    vis->add_option("--checkpoint", checkpoint, "pre-trained checkpoint with decoder")->required();
    vis->add_option("--finetuned", finetuned, "fine-tuned checkpoint for attention maps");
    vis->add_option("--num-images", num_images, "images to render")->capture_default_str();
    vis->add_option("--perplexity", perplexity, "t-SNE perplexity")->capture_default_str();
    vis->add_option("--tsne-iters", tsne_iters, "t-SNE iterations")->capture_default_str();
    auto* th = add("verify-theory", "information-theoretic checks on discrete surrogates");
    th->add_option("--chains", chains, "random Markov chains")->capture_default_str();

    std::vector<std::string> argv_store{"mcae"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    Context ctx{flags, out, err};
    try {
        for (const auto& [cmd, name] : commands) {
            if (!cmd->parsed()) continue;
            ctx.flags.active = cmd;
            if (name == "synth-data") cmd_synth(ctx, name);
            else if (name == "pretrain") cmd_pretrain(ctx, name, train_domains);
            else if (name == "finetune") cmd_finetune(ctx, name, checkpoint, train_domains);
            else if (name == "eval-loo") cmd_eval_loo(ctx, name, max_folds);
            else if (name == "eval-limited") cmd_eval_limited(ctx, name, sources, targets);
            else if (name == "sweep-mask-ratio") cmd_sweep_mask(ctx, name, ratios, max_folds);
            else if (name == "sweep-decoder") cmd_sweep_decoder(ctx, name, decoders, max_folds);
            else if (name == "ablate") cmd_ablate(ctx, name, modes, checkpoint, max_folds);
            else if (name == "visualize") cmd_visualize(ctx, name, checkpoint, finetuned, num_images, perplexity, tsne_iters);
            else if (name == "verify-theory") cmd_verify_theory(ctx, name, chains);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

int dispatch(const std::vector<std::string>& args) { return dispatch(args, std::cout, std::cerr); }

}  // namespace mcae::cli
