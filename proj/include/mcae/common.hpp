#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mcae {

using Real = double;
using Index = std::size_t;

/// Invalid user-supplied configuration or arguments (CLI exit code 1).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Failure while running a pipeline (CLI exit code 2).
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Label : int { spoof = 0, live = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }

}  // namespace mcae
