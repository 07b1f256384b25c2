#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cbe {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;  // usage, config or data validation error
inline constexpr int kExitRuntime = 2;  // I/O, annotator or other runtime failure

/// Runs the `cbe` command line. `args` excludes the program name. Results go
/// to `out`, diagnostics and usage text to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cbe
