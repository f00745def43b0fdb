#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ichseq {

/// Runs the command-line tool. Errors are written to `err` as one JSON object;
/// the return value is the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ichseq
