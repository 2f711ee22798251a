#include "mcae/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mcae {

const char* to_string(GateMode m) {
    switch (m) {
        case GateMode::loss_threshold: return "loss_threshold";
        case GateMode::epoch: return "epoch";
        case GateMode::either: return "either";
    }
    return "either";
}

GateMode parse_gate_mode(const std::string& s) {
    if (s == "loss_threshold") return GateMode::loss_threshold;
    if (s == "epoch") return GateMode::epoch;
    if (s == "either") return GateMode::either;
    throw ConfigError("unknown gate mode: " + s);
}

std::optional<Index> ScheduleConfig::resolved_switch_epoch() const {
    if (switch_epoch) return switch_epoch;
    if (switch_epoch_auto) return total_epochs / 2;
    return std::nullopt;
}

void validate(const ScheduleConfig& cfg) {
    if (!(cfg.mask_ratio >= 0 && cfg.mask_ratio < 1)) throw ConfigError("mask_ratio must lie in [0, 1)");
    if (cfg.total_epochs < 1) throw ConfigError("total_epochs must be at least 1");
    if (cfg.epsilon < 0) throw ConfigError("epsilon must be non-negative");
    if (cfg.beta < 0) throw ConfigError("beta must be non-negative");
    if (cfg.batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(cfg.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (cfg.weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (cfg.gate_mode != GateMode::loss_threshold) {
        const auto sw = cfg.resolved_switch_epoch();
        if (sw && *sw >= cfg.total_epochs) throw ConfigError("switch_epoch must be less than total_epochs");
    }
    validate(cfg.crop);
}

void validate(const FinetuneConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("finetune_epochs must be at least 1");
    if (cfg.batch_size < 1) throw ConfigError("finetune_batch_size must be positive");
    if (!(cfg.learning_rate > 0)) throw ConfigError("finetune_learning_rate must be positive");
    if (cfg.weight_decay < 0) throw ConfigError("finetune_weight_decay must be non-negative");
    validate(cfg.crop);
}

void validate(const RunConfig& cfg) {
    validate(cfg.encoder);
    validate(cfg.decoder);
    validate(cfg.schedule);
    validate(cfg.contrastive);
    validate(cfg.finetune);
}

RunConfig micro_config() {
    RunConfig cfg;
    cfg.encoder = {.embed_dim = 8, .depth = 1, .heads = 1, .patch_size = 4, .image_size = 8, .mlp_ratio = 4};
    cfg.decoder = {.width = 8, .depth = 1, .heads = 1, .mlp_ratio = 4};
    cfg.schedule.total_epochs = 20;
    cfg.schedule.batch_size = 12;
    cfg.schedule.warmup_epochs = 1;
    cfg.schedule.learning_rate = 3e-3;
    cfg.finetune.epochs = 60;
    cfg.finetune.batch_size = 12;
    cfg.finetune.warmup_epochs = 1;
    cfg.finetune.learning_rate = 5e-3;
    return cfg;
}

std::string format_real(Real v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

Index parse_index(const std::string& key, const std::string& v) {
    Index out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("invalid integer for " + key + ": " + v);
    return out;
}

Real parse_real(const std::string& key, const std::string& v) {
    Real out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("invalid number for " + key + ": " + v);
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("invalid boolean for " + key + ": " + v);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define MCAE_INDEX_FIELD(expr)                                                                     \
    Field {                                                                                        \
        [](const RunConfig& c) { return std::to_string(c.expr); },                                 \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_index(k, v); } \
    }
#define MCAE_REAL_FIELD(expr)                                                                      \
    Field {                                                                                        \
        [](const RunConfig& c) { return format_real(c.expr); },                                    \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_real(k, v); } \
    }
#define MCAE_BOOL_FIELD(expr)                                                                      \
    Field {                                                                                        \
        [](const RunConfig& c) { return fmt_bool(c.expr); },                                       \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_bool(k, v); } \
    }

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"embed_dim", MCAE_INDEX_FIELD(encoder.embed_dim)},
        {"depth", MCAE_INDEX_FIELD(encoder.depth)},
        {"heads", MCAE_INDEX_FIELD(encoder.heads)},
        {"patch_size", MCAE_INDEX_FIELD(encoder.patch_size)},
        {"image_size", MCAE_INDEX_FIELD(encoder.image_size)},
        {"mlp_ratio", MCAE_REAL_FIELD(encoder.mlp_ratio)},
        {"decoder_width", MCAE_INDEX_FIELD(decoder.width)},
        {"decoder_depth", MCAE_INDEX_FIELD(decoder.depth)},
        {"decoder_heads", MCAE_INDEX_FIELD(decoder.heads)},
        {"decoder_mlp_ratio", MCAE_REAL_FIELD(decoder.mlp_ratio)},
        {"epsilon", MCAE_REAL_FIELD(schedule.epsilon)},
        {"switch_epoch",
         Field{[](const RunConfig& c) -> std::string {
                   if (c.schedule.switch_epoch) return std::to_string(*c.schedule.switch_epoch);
                   return c.schedule.switch_epoch_auto ? "auto" : "none";
               },
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "auto") {
                       c.schedule.switch_epoch.reset();
                       c.schedule.switch_epoch_auto = true;
                   } else if (v == "none") {
                       c.schedule.switch_epoch.reset();
                       c.schedule.switch_epoch_auto = false;
                   } else {
                       c.schedule.switch_epoch = parse_index(k, v);
                   }
               }}},
        {"gate_mode", Field{[](const RunConfig& c) -> std::string { return to_string(c.schedule.gate_mode); },
                            [](RunConfig& c, const std::string&, const std::string& v) {
                                c.schedule.gate_mode = parse_gate_mode(v);
                            }}},
        {"total_epochs", MCAE_INDEX_FIELD(schedule.total_epochs)},
        {"beta", MCAE_REAL_FIELD(schedule.beta)},
        {"mask_ratio", MCAE_REAL_FIELD(schedule.mask_ratio)},
        {"batch_size", MCAE_INDEX_FIELD(schedule.batch_size)},
        {"learning_rate", MCAE_REAL_FIELD(schedule.learning_rate)},
        {"weight_decay", MCAE_REAL_FIELD(schedule.weight_decay)},
        {"warmup_epochs", MCAE_INDEX_FIELD(schedule.warmup_epochs)},
        {"seed", MCAE_INDEX_FIELD(schedule.seed)},
        {"keep_decoder", MCAE_BOOL_FIELD(schedule.keep_decoder)},
        {"pretrain_augment", MCAE_BOOL_FIELD(schedule.augment)},
        {"pretrain_crop_lo", MCAE_REAL_FIELD(schedule.crop.lo)},
        {"pretrain_crop_hi", MCAE_REAL_FIELD(schedule.crop.hi)},
        {"tau", MCAE_REAL_FIELD(contrastive.temperature)},
        {"lambda_live_cross", MCAE_REAL_FIELD(contrastive.lambda_live_cross)},
        {"lambda_live_same", MCAE_REAL_FIELD(contrastive.lambda_live_same)},
        {"lambda_spoof", MCAE_REAL_FIELD(contrastive.lambda_spoof)},
        {"include_spoof_positives", MCAE_BOOL_FIELD(contrastive.include_spoof_positives)},
        {"finetune_epochs", MCAE_INDEX_FIELD(finetune.epochs)},
        {"finetune_batch_size", MCAE_INDEX_FIELD(finetune.batch_size)},
        {"finetune_learning_rate", MCAE_REAL_FIELD(finetune.learning_rate)},
        {"finetune_weight_decay", MCAE_REAL_FIELD(finetune.weight_decay)},
        {"finetune_warmup_epochs", MCAE_INDEX_FIELD(finetune.warmup_epochs)},
        {"finetune_head_only", MCAE_BOOL_FIELD(finetune.head_only)},
        {"finetune_augment", MCAE_BOOL_FIELD(finetune.augment)},
        {"finetune_crop_lo", MCAE_REAL_FIELD(finetune.crop.lo)},
        {"finetune_crop_hi", MCAE_REAL_FIELD(finetune.crop.hi)},
    };
    return table;
}

#undef MCAE_INDEX_FIELD
#undef MCAE_REAL_FIELD
#undef MCAE_BOOL_FIELD

}  // namespace

std::vector<std::pair<std::string, std::string>> to_key_values(const RunConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, f] : fields()) out.emplace_back(k, f.get(cfg));
    out.emplace_back("optimizer", "adamw(beta1=0.9,beta2=0.95,eps=1e-8)");
    out.emplace_back("lr_schedule", "linear_warmup_cosine");
    return out;
}

void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    // Informational keys written by to_key_values.
    if (key == "optimizer" || key == "lr_schedule") return;
    for (const auto& [k, f] : fields())
        if (k == key) {
            f.set(cfg, key, value);
            return;
        }
    throw ConfigError("unknown config key: " + key);
}

std::string to_config_text(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& [k, v] : to_key_values(cfg)) os << k << '=' << v << '\n';
    return os.str();
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        apply_key_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), std::move(base));
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write config file: " + path.string());
    out << to_config_text(cfg);
}

}  // namespace mcae
