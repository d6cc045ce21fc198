#ifndef DPL_TOOLS_CLI_H_
#define DPL_TOOLS_CLI_H_

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace dpl::cli {

enum ExitCode {
  kOk = 0,
  kConfigError = 1,
  kDataError = 2,
  kVerifyFailed = 3,
};

// One swept hyperparameter: --grid key=v1,v2 or key=lo:hi:step (inclusive).
struct GridAxis {
  std::string key;  // loss | m | n | tau | beta
  std::vector<std::string> values;
};

// Throws ConfigError on an empty grid, an unknown key, a duplicate key or
// a malformed range.
std::vector<GridAxis> ParseGrid(const std::vector<std::string>& specs);

// Cartesian product of the axes, first axis varying slowest.
std::vector<std::map<std::string, std::string>> ExpandGrid(
    const std::vector<GridAxis>& axes);

// Default data file: $DPL_DATA_DIR/ml-100k/u.data, else
// data/ml-100k/u.data. A relative path that does not exist is retried
// under $DPL_DATA_DIR.
std::filesystem::path ResolveDataPath(const std::string& flag);

// Entry point of the `dpl` binary. Returns the process exit code.
int RunCli(int argc, const char* const* argv, std::ostream& out,
           std::ostream& err);

}  // namespace dpl::cli

#endif  // DPL_TOOLS_CLI_H_
