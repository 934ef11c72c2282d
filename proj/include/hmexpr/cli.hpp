#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hmexpr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutEnv = "HMEXPR_OUT";

/// Runs one subcommand. `args` excludes the program name. Diagnostics go to
/// `err`, help text and short summaries to `out`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, const char* const* argv);

std::string tool_version();

}  // namespace hmexpr
