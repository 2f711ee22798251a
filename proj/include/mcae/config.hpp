#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mcae/data.hpp"
#include "mcae/losses.hpp"
#include "mcae/model.hpp"

namespace mcae {

enum class GateMode { loss_threshold, epoch, either };

const char* to_string(GateMode m);
GateMode parse_gate_mode(const std::string& s);

struct ScheduleConfig {
    Real epsilon = 0.01;
    // Epoch at which the contrastive stage starts. Unset with `switch_epoch_auto`
    // means half of total_epochs; unset otherwise means "never by epoch".
    std::optional<Index> switch_epoch;
    bool switch_epoch_auto = true;
    GateMode gate_mode = GateMode::either;
    Index total_epochs = 100;
    Real beta = 1.0;
    Real mask_ratio = 0.85;
    Index batch_size = 24;
    Real learning_rate = 1e-3;
    Real weight_decay = 0.05;
    Index warmup_epochs = 5;
    std::uint64_t seed = 0;
    bool keep_decoder = true;
    bool augment = true;
    CropScale crop;

    std::optional<Index> resolved_switch_epoch() const;
};

struct FinetuneConfig {
    Index epochs = 50;
    Index batch_size = 24;
    Real learning_rate = 1e-3;
    Real weight_decay = 0.05;
    Index warmup_epochs = 2;
    bool head_only = false;
    bool augment = true;
    CropScale crop;
};

struct RunConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    ScheduleConfig schedule;
    ContrastiveConfig contrastive;
    FinetuneConfig finetune;
};

void validate(const ScheduleConfig& cfg);
void validate(const FinetuneConfig& cfg);
void validate(const RunConfig& cfg);

// Small model used by the tests and desk-scale experiments:
// embed 8, depth 1, heads 1, image 8, patch 4; decoder 8 wide, 1 deep.
RunConfig micro_config();

// Ordered key/value view of every field.
std::vector<std::pair<std::string, std::string>> to_key_values(const RunConfig& cfg);
// Throws ConfigError for unknown keys or unparsable values.
void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value);

std::string to_config_text(const RunConfig& cfg);
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

std::string format_real(Real v);

}  // namespace mcae
