#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace uqr {

// Entry point of the uqrecon command line. Returns the process exit code:
// 0 success, 1 user error (bad flags, bad or missing config, unreadable
// input), 2 runtime failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uqr
