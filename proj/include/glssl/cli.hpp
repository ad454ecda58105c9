#pragma once

#include <ostream>

namespace glssl::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIngestion = 1;
inline constexpr int kExitDivergence = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitGradcheck = 4;

// Parses argv (argv[0] is the program name) and runs one subcommand:
// train, ablate, project, gradcheck or synth.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace glssl::cli
