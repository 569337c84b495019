// Experiment driver behind the command-line tool.
//
// Every command materializes a run directory named <timestamp>-<hash8>
// under the output root, echoes the effective configuration into it, and
// writes line-oriented logs plus its artifacts (dataset, checkpoints, eval
// reports, sweep tables). Log and artifact contents carry no wall-clock
// data, so identical config+seed reproduces identical file contents.
//
// Exit policy: 0 on success; 1 on runtime failure, printing the failing
// stage; 2 on configuration rejection, printing the first offending key.
#pragma once

#include <iosfwd>
#include <optional>
#include <string>

namespace affr {

struct RunOptions {
  std::string command;
  std::string config_path;       // empty = built-in defaults
  std::optional<uint64_t> seed;  // overrides the config seed
  std::string out;               // overrides the config output root
  bool force = false;            // bypass checkpoint config-hash check
  std::string data_dir;          // dataset directory (build-data output)
  std::string teacher_path;      // teacher checkpoint
  std::string checkpoint_path;   // model checkpoint for eval/eliminate
  std::ostream* stream = nullptr;  // status output; null = std::cout
};

int run_command(const RunOptions& opts);

}  // namespace affr
