#pragma once

#include <filesystem>

#include "mcae/config.hpp"
#include "mcae/model.hpp"

namespace mcae {

// Checkpoint archive layout (a directory):
//   config.txt           key=value manifest of the run configuration
//   index.txt            one line per tensor: "<name> <rows> <cols> <file>"
//   tensors/<name>.bin   row-major little-endian float32 values
struct Checkpoint {
    RunConfig config;
    ModelParams params;
    bool has_decoder = false;
    bool has_head = false;
};

enum class LoadScope {
    full,          // every tensor must be present
    encoder_only,  // decoder and head tensors may be absent
};

void save_checkpoint(const ModelParams& params, const RunConfig& config, const std::filesystem::path& dir,
                     bool include_decoder = true, bool include_head = true);

Checkpoint load_checkpoint(const std::filesystem::path& dir, LoadScope scope = LoadScope::full);

}  // namespace mcae
