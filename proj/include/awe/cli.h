#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace awe::cli {

// Runs one `awe` invocation. Exit codes: 0 success, 1 usage error, 2 data or
// contract error, 3 numerical failure. Artifacts go to files (or `out` where
// a command prints a table); diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Model-by-encoder table of mAP and tau (with their std) over run
// directories, each holding run.json and test_report.json.
std::string matrix_report(const std::string& runs_dir);

}  // namespace awe::cli
