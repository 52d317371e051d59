#pragma once

#include <string>
#include <vector>

namespace oversense {

/// Runs the command-line surface in-process (argv without the program
/// name). Subcommands: train-proxy, filter, attribute, generate, evaluate,
/// distill, report. Global flags: --config, --seed, --offline. Returns the
/// process exit code: 0 success, 1 usage or configuration problems, 2
/// runtime failures. Never throws; errors are printed to stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace oversense
