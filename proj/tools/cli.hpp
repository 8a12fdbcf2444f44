#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace refdx::cli {

/// Runs the refdx command line. Returns the process exit status: 0 on
/// success, 1 on data errors (error JSON written to `err`), 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace refdx::cli
