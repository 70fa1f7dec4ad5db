#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cosplace::cli {

/// Runs one `cosplace` invocation. `args` excludes the program name. Errors
/// print a single `error: E_CODE: message` line to `err`; returns the exit
/// status (0 ok, 1 failure, 2 usage).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cosplace::cli
