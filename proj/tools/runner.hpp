#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace spinesim::cli {

struct RunRequest {
  std::string config_path;                 // JSON experiment config
  std::optional<std::string> config_text;  // used instead of reading config_path
  std::optional<std::uint64_t> seed;
  int workers = 0;  // 0: SPINESIM_WORKERS, then hardware concurrency
  std::string out_dir = "out";
  std::optional<std::string> experiment;
};

// Exit codes.
constexpr int kExitOk = 0;
constexpr int kExitFailedCheck = 1;  // ran, but a configured tolerance was missed
constexpr int kExitInvalid = 2;      // bad config or model
constexpr int kExitBudget = 3;       // simulation budget or numerical failure

// Runs one experiment and writes results CSVs, summary.json and manifest.json
// into out_dir. On failure writes error.json and returns a nonzero code.
int run(const RunRequest& req, std::ostream& log);

}  // namespace spinesim::cli
