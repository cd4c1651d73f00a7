#pragma once

#include <ostream>
#include <span>
#include <string>

namespace fkb::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitInternal = 3,
};

// Runs one command line (without the program name). Errors are reported on
// `err` as a single "error[Code]: message" line.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace fkb::cli
