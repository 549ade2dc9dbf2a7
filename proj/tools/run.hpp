#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

#include "config.hpp"

namespace landscape::cli {

enum ExitCode { kOk = 0, kConfigError = 2, kNotConverged = 3 };

struct RunOverrides {
  std::optional<std::string> output;
  std::optional<std::uint64_t> seed;
};

/// Runs the command named in [run] and writes `output`, `output.meta` and
/// any command-specific companion files. Messages go to `log`.
int run(const Config& config, std::ostream& log, const RunOverrides& overrides = {});
int run_file(const std::string& path, std::ostream& log, const RunOverrides& overrides = {});

}  // namespace landscape::cli
