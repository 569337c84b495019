// Four-step dataset-construction pipeline behind a pluggable completion
// client.
//
// Step 1 asks the client for 10 task phrases per category and pools them
// with duplicates removed. Step 2 ranks candidate categories per task;
// unparseable replies quarantine the task. Step 3 reviews every pair and
// removes failures, renormalizing ranks to gapless 1..m; pairs the
// inspector did not cover are kept but flagged for manual review. Step 4
// hands the inspected table to the dataset composer.
//
// The deterministic mock client is the default: a pure function of
// (prompt, seed) with a small built-in commonsense table (drinking tasks
// prefer cups over bottles; appliances fail inspection for them). The
// remote client reads its bearer token from an environment variable and is
// never required by any test.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "affr/dataforge.hpp"

namespace affr {

struct DecodeParams {
  double temperature = 0.0;
  int max_tokens = 512;
  uint64_t seed = 0;
};

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  // Returns the completion text; throws std::runtime_error on failure.
  // Implementations must tolerate concurrent calls.
  virtual std::string complete(const std::string& prompt, const DecodeParams& params) = 0;
};

class MockCompletionClient final : public CompletionClient {
 public:
  explicit MockCompletionClient(uint64_t seed = 0) : seed_(seed) {}
  std::string complete(const std::string& prompt, const DecodeParams& params) override;

 private:
  uint64_t seed_;
};

struct RemoteClientConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/v1/complete";
  std::string token_env = "AFFR_LLM_TOKEN";  // bearer token environment variable
  double timeout_s = 30.0;
};

class RemoteCompletionClient final : public CompletionClient {
 public:
  explicit RemoteCompletionClient(RemoteClientConfig cfg) : cfg_(std::move(cfg)) {}
  // POSTs {"prompt","temperature","max_tokens","seed"} and expects
  // {"text": "..."}; throws on missing token, transport error, or non-200.
  std::string complete(const std::string& prompt, const DecodeParams& params) override;

 private:
  RemoteClientConfig cfg_;
};

struct PromptTemplates {
  std::string produce;
  std::string match;
  std::string inspect;

  // Reads produce.txt, match.txt, inspect.txt from dir.
  static PromptTemplates load(const std::string& dir);
  // Compiled-in copy of the shipped assets.
  static PromptTemplates builtin();
};

struct TableRow {
  std::string task;
  std::string category;
  int rank = 0;
  std::string provenance;  // "producer" or "inspector-approved"
};

struct QuarantineEntry {
  std::string kind;  // "produce", "match", "inspect-manual"
  std::string task;
  std::string category;
  std::string reason;
  std::string raw;  // offending client text, newlines escaped
};

struct PipelineConfig {
  int fanout = 4;             // bounded in-flight client calls
  int retries = 3;            // attempts per call
  double backoff_base_s = 0.05;  // doubles per retry
  uint64_t seed = 0;
  PromptTemplates templates = PromptTemplates::builtin();
};

struct PipelineResult {
  std::vector<std::string> task_pool;  // step 1, deduplicated in category order
  std::vector<TableRow> rows;          // after inspection, ranks gapless per task
  std::vector<QuarantineEntry> quarantine;
  std::vector<std::string> pending_categories;  // client failed after retries
};

// Step 1 for one category: exactly 10 phrases or a failure.
std::vector<std::string> produce_tasks(CompletionClient& client, const std::string& category,
                                       const PipelineConfig& cfg);

// Step 2 for one task. Parse failures append to quarantine and yield an
// empty list. Returned ranks are normalized to 1..m.
std::vector<TableRow> match_pairs(CompletionClient& client, const std::string& task,
                                  const std::vector<std::string>& categories,
                                  const PipelineConfig& cfg,
                                  std::vector<QuarantineEntry>* quarantine);

// Step 3 over the whole table. Never adds rows; removals renormalize the
// surviving ranks per task.
std::vector<TableRow> inspect_pairs(CompletionClient& client, const std::vector<TableRow>& table,
                                    const PipelineConfig& cfg,
                                    std::vector<QuarantineEntry>* quarantine);

PipelineResult run_pipeline(CompletionClient& client, const std::vector<std::string>& categories,
                            const PipelineConfig& cfg);

// UTF-8 TSV: task <TAB> category <TAB> rank <TAB> provenance.
void save_table(const std::string& path, const std::vector<TableRow>& rows);
std::vector<TableRow> load_table(const std::string& path);

// Human-editable TSV: kind, task, category, reason, raw.
void save_quarantine(const std::string& path, const std::vector<QuarantineEntry>& entries);

// Step 4: resolves category names against the database, numbers tasks in
// row order, and delegates to the composer. The provenance string lands in
// the dataset file; an empty table yields an empty dataset marked
// "tasks=0".
AffordanceDataset build_dataset(const std::vector<TableRow>& rows, const DetectionDb& db,
                                const CompositionConfig& comp, uint64_t seed,
                                const std::string& provenance);

}  // namespace affr
