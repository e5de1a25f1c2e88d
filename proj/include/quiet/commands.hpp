// Subcommand implementations, callable in-process. Each returns an exit
// code: 0 success, 1 failure, 2 usage/config error.
#pragma once

#include <string>

#include "quiet/config.hpp"

namespace quiet::cli {

int cmd_generate(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_gradcheck(const RunConfig& cfg);
int cmd_analyze(const RunConfig& cfg);
int cmd_sweep(const RunConfig& cfg);

// Dispatches by name and maps exceptions to exit codes.
int run_command(const std::string& name, const RunConfig& cfg);

}  // namespace quiet::cli
