#pragma once

#include <string>
#include <vector>

namespace sneakdoor::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the command-line tool: condense, attack, eval, verify-bounds
// and report. Never throws; errors go to stderr and map to an exit code.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace sneakdoor::cli
