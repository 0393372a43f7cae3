#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace calibrax::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSolver = 3;
inline constexpr int kExitBelowLevel = 4;

// Runs the command line given as argv-style tokens (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace calibrax::cli
