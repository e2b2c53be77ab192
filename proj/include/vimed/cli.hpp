#pragma once

// The `vimed` command line. run() is the whole program minus process
// plumbing, so tests can drive it in-process.

#include <ostream>
#include <string>
#include <vector>

namespace vimed::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsage = 1,
  kDataError = 2,
  kPartial = 3,  // translation finished with failed items
};

// args excludes the program name. Human-readable diagnostics go to err;
// results written to "-" go to std::cout.
int run(const std::vector<std::string>& args, std::ostream& err);

}  // namespace vimed::cli
