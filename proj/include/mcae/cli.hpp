#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mcae::cli {

// Runs one command line (without the program name). Returns 0 on success,
// 1 on a configuration or usage error, 2 on a runtime failure.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(const std::vector<std::string>& args);

}  // namespace mcae::cli
