#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace karat::cli {

/// Entry point behind the `karat` executable. `args` excludes the program
/// name. Returns 0 on success, 1 on configuration errors and 2 on runtime
/// errors; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

/// Projects each line of whitespace-separated numbers onto the probability
/// simplex, writing one line per input line (blank lines are skipped).
void project_lines(std::istream& in, std::ostream& out);

}  // namespace karat::cli
