#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mlmforge {

// Entry point of the `mlmforge` tool. `args` excludes the program name.
// Returns the process exit code; failures print one "PREFIX/message" line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlmforge
