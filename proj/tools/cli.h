#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cwdedup::cli {

enum ExitCode {
  kExitOk = 0,
  kExitGeneric = 1,
  kExitInvalidFlags = 2,
  kExitUninitialized = 3,
  kExitUnknownObject = 4,
  kExitInvariant = 5,
  kExitWriteFailure = 6,
};

// Runs one CLI invocation. `args` excludes the program name. Failures are
// reported on `err` as `error: code=<name> msg="<text>"`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cwdedup::cli
