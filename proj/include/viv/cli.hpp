#pragma once

#include <string>
#include <vector>

namespace viv::cli {

/// Entry point of the command-line driver (argv without the program name).
/// Subcommands: steady | thresholds | evolve | spectrum | resonance |
/// periodic | branch | pipeline. Returns the process exit code: 0 on success,
/// 2 on validation/config errors, 3 on solver failures, 64 on an unknown
/// subcommand.
int run(const std::vector<std::string>& args);

} // namespace viv::cli
