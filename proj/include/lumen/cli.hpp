#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lumen {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

/// Runs one subcommand: simulate, invert, factorize, blind, baseline, eval or
/// gradcheck. args[0] is the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace lumen
