#pragma once

#include <string>
#include <vector>

// Command-line front end: one subcommand per experiment family, a JSON
// config with flag overrides, and deterministic columnar reports.

namespace mtlab::cli {

inline constexpr const char* kVersion = "mtlab 1.0.0";

// Columnar numeric report: every row carries one double per column.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

// Writes the table as CSV (RFC 4180 quoting, %.17g cells) plus a JSON
// sidecar holding the command name, tool version, effective configuration,
// result scalars, and a plain-text plot recipe.  The sidecar lands next to
// the CSV with a .json extension.  All validation (ragged rows, non-finite
// cells) happens before any file is opened; failures throw IoFailure.
void write_report(const Table& table, const std::string& command,
                  const std::string& config_json,
                  const std::string& results_json,
                  const std::string& plot_recipe, const std::string& csv_path);

// Parses argv, dispatches one subcommand, writes its report.  Returns 0 on
// success, 2 on usage or configuration errors, 3 on numerical or I/O
// failure (the failure is echoed into the JSON sidecar as a structured
// error entry).
int run(int argc, char** argv);

// Same entry without the program name, for in-process tests.
int run_args(const std::vector<std::string>& args);

}  // namespace mtlab::cli
