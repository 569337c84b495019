// Dataset-construction pipeline: mock client behavior, parse and
// quarantine rules, table serialization, and the remote client transport.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "affr/llm_pipeline.hpp"
#include "affr/util.hpp"

using namespace affr;
namespace fs = std::filesystem;

namespace {

PipelineConfig fast_cfg(uint64_t seed = 0) {
  PipelineConfig cfg;
  cfg.seed = seed;
  cfg.backoff_base_s = 0;  // keep retry loops instant in tests
  return cfg;
}

// Client that always fails, counting attempts.
class FailingClient final : public CompletionClient {
 public:
  std::string complete(const std::string&, const DecodeParams&) override {
    ++calls;
    throw std::runtime_error("backend offline");
  }
  std::atomic<int> calls{0};
};

// Client that replies with one fixed string regardless of the prompt.
class CannedClient final : public CompletionClient {
 public:
  explicit CannedClient(std::string text) : text_(std::move(text)) {}
  std::string complete(const std::string&, const DecodeParams&) override { return text_; }

 private:
  std::string text_;
};

void check_gapless_ranks(const std::vector<TableRow>& rows) {
  std::map<std::string, std::vector<int>> by_task;
  for (const TableRow& r : rows) by_task[r.task].push_back(r.rank);
  for (const auto& [task, ranks] : by_task) {
    (void)task;
    for (size_t i = 0; i < ranks.size(); ++i) CHECK(ranks[i] == int(i) + 1);
  }
}

}  // namespace

TEST_CASE("producing tasks for a vessel yields ten phrases led by drinking") {
  MockCompletionClient client(0);
  auto phrases = produce_tasks(client, "cup", fast_cfg());
  REQUIRE(phrases.size() == 10);
  CHECK(phrases[0] == "drink water with");
  std::set<std::string> uniq(phrases.begin(), phrases.end());
  CHECK(uniq.size() == 10);
  for (const std::string& p : phrases) {
    size_t words = split_ws(p).size();
    CHECK(words >= 2);
    CHECK(words <= 5);
  }
  // Same client and config reproduce the same list.
  CHECK(produce_tasks(client, "cup", fast_cfg()) == phrases);
  // A different category yields a different list.
  CHECK(produce_tasks(client, "rock", fast_cfg()) != phrases);
}

TEST_CASE("producer retries then reports the category as pending") {
  FailingClient client;
  PipelineConfig cfg = fast_cfg();
  cfg.retries = 3;
  CHECK_THROWS_WITH_AS(produce_tasks(client, "cup", cfg),
                       doctest::Contains("produce_tasks('cup') failed"), std::runtime_error);
  CHECK(client.calls.load() == 3);

  FailingClient client2;
  PipelineResult r = run_pipeline(client2, {"cup", "bottle"}, cfg);
  CHECK(r.task_pool.empty());
  CHECK(r.rows.empty());
  REQUIRE(r.pending_categories.size() == 2);
  CHECK(r.pending_categories[0] == "cup");
  REQUIRE(r.quarantine.size() == 2);
  for (const QuarantineEntry& q : r.quarantine) CHECK(q.kind == "produce");
  CHECK(client2.calls.load() == 6);
}

TEST_CASE("matching ranks vessels ahead of bottles and skips non-candidates") {
  MockCompletionClient client(0);
  std::vector<QuarantineEntry> quarantine;
  auto rows = match_pairs(client, "drink water with", {"rock", "blender", "bottle", "cup"},
                          fast_cfg(), &quarantine);
  CHECK(quarantine.empty());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].category == "cup");
  CHECK(rows[0].rank == 1);
  CHECK(rows[1].category == "bottle");
  CHECK(rows[1].rank == 2);
  CHECK(rows[2].category == "blender");
  CHECK(rows[2].rank == 3);
  for (const TableRow& r : rows) {
    CHECK(r.task == "drink water with");
    CHECK(r.provenance == "producer");
  }
}

TEST_CASE("unparseable match replies quarantine the task") {
  std::vector<QuarantineEntry> quarantine;
  PipelineConfig cfg = fast_cfg();

  CannedClient garbage("this is not a table\n");
  auto rows = match_pairs(garbage, "hold food in", {"cup"}, cfg, &quarantine);
  CHECK(rows.empty());
  REQUIRE(quarantine.size() == 1);
  CHECK(quarantine[0].kind == "match");
  CHECK(quarantine[0].task == "hold food in");
  CHECK_FALSE(quarantine[0].reason.empty());
  CHECK(quarantine[0].raw.find("not a table") != std::string::npos);

  quarantine.clear();
  CannedClient bad_rank("one\tcup\n");
  CHECK(match_pairs(bad_rank, "hold food in", {"cup"}, cfg, &quarantine).empty());
  REQUIRE(quarantine.size() == 1);
  CHECK(quarantine[0].reason.find("not an integer") != std::string::npos);

  quarantine.clear();
  CannedClient stranger("1\tteapot\n");
  CHECK(match_pairs(stranger, "hold food in", {"cup"}, cfg, &quarantine).empty());
  REQUIRE(quarantine.size() == 1);
  CHECK(quarantine[0].reason.find("teapot") != std::string::npos);

  quarantine.clear();
  CannedClient repeat("1\tcup\n2\tcup\n");
  CHECK(match_pairs(repeat, "hold food in", {"cup"}, cfg, &quarantine).empty());
  REQUIRE(quarantine.size() == 1);
  CHECK(quarantine[0].reason.find("repeated") != std::string::npos);
}

TEST_CASE("match ranks are normalized to a gapless sequence") {
  std::vector<QuarantineEntry> quarantine;
  CannedClient sparse("7\tcup\n2\tbottle\n");
  auto rows = match_pairs(sparse, "hold food in", {"cup", "bottle"}, fast_cfg(), &quarantine);
  CHECK(quarantine.empty());
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].category == "bottle");
  CHECK(rows[0].rank == 1);
  CHECK(rows[1].category == "cup");
  CHECK(rows[1].rank == 2);
}

TEST_CASE("inspection removes implausible pairs and renormalizes ranks") {
  MockCompletionClient client(0);
  std::vector<TableRow> table = {
      {"drink water with", "cup", 1, "producer"},
      {"drink water with", "blender", 2, "producer"},
      {"drink water with", "bottle", 3, "producer"},
      {"hold food in", "cup", 1, "producer"},
  };
  std::vector<QuarantineEntry> quarantine;
  auto kept = inspect_pairs(client, table, fast_cfg(), &quarantine);
  CHECK(quarantine.empty());
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].category == "cup");
  CHECK(kept[0].rank == 1);
  CHECK(kept[1].category == "bottle");
  CHECK(kept[1].rank == 2);
  CHECK(kept[2].task == "hold food in");
  CHECK(kept[2].rank == 1);
  for (const TableRow& r : kept) CHECK(r.provenance == "inspector-approved");
}

TEST_CASE("pairs the inspector ignores survive but are flagged for review") {
  // Decision list covers only the first row; the second gets no verdict.
  CannedClient partial("drink water with\tcup\tkeep\n");
  std::vector<TableRow> table = {
      {"drink water with", "cup", 1, "producer"},
      {"drink water with", "bottle", 2, "producer"},
  };
  std::vector<QuarantineEntry> quarantine;
  auto kept = inspect_pairs(partial, table, fast_cfg(), &quarantine);
  REQUIRE(kept.size() == 2);
  CHECK(kept[1].category == "bottle");
  CHECK(kept[1].rank == 2);
  REQUIRE(quarantine.size() == 1);
  CHECK(quarantine[0].kind == "inspect-manual");
  CHECK(quarantine[0].category == "bottle");
  CHECK(quarantine[0].reason == "no inspector decision");
}

TEST_CASE("inspection never adds rows") {
  CannedClient inventor(
      "drink water with\tcup\tkeep\n"
      "drink water with\tteapot\tkeep\n");
  std::vector<TableRow> table = {{"drink water with", "cup", 1, "producer"}};
  std::vector<QuarantineEntry> quarantine;
  auto kept = inspect_pairs(inventor, table, fast_cfg(), &quarantine);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].category == "cup");
}

TEST_CASE("full pipeline over kitchen categories ends with a clean table") {
  MockCompletionClient client(0);
  PipelineResult r = run_pipeline(client, {"cup", "bottle", "blender"}, fast_cfg());
  CHECK(r.pending_categories.empty());
  CHECK(r.quarantine.empty());
  REQUIRE_FALSE(r.task_pool.empty());
  CHECK(r.task_pool[0] == "drink water with");
  std::set<std::string> pool(r.task_pool.begin(), r.task_pool.end());
  CHECK(pool.size() == r.task_pool.size());
  check_gapless_ranks(r.rows);
  // The inspector removed the blender from the drinking task.
  bool drink_cup = false;
  for (const TableRow& row : r.rows) {
    CHECK(row.provenance == "inspector-approved");
    if (row.task == "drink water with") {
      CHECK(row.category != "blender");
      if (row.category == "cup") {
        drink_cup = true;
        CHECK(row.rank == 1);
      }
    }
  }
  CHECK(drink_cup);
}

TEST_CASE("pipeline output does not depend on the fanout") {
  MockCompletionClient a(0), b(0);
  PipelineConfig wide = fast_cfg();
  wide.fanout = 4;
  PipelineConfig narrow = fast_cfg();
  narrow.fanout = 1;
  PipelineResult ra = run_pipeline(a, {"cup", "bottle", "glass", "rock"}, wide);
  PipelineResult rb = run_pipeline(b, {"cup", "bottle", "glass", "rock"}, narrow);
  CHECK(ra.task_pool == rb.task_pool);
  REQUIRE(ra.rows.size() == rb.rows.size());
  for (size_t i = 0; i < ra.rows.size(); ++i) {
    CHECK(ra.rows[i].task == rb.rows[i].task);
    CHECK(ra.rows[i].category == rb.rows[i].category);
    CHECK(ra.rows[i].rank == rb.rows[i].rank);
  }
  CHECK(ra.quarantine.size() == rb.quarantine.size());
  CHECK(ra.pending_categories == rb.pending_categories);
}

TEST_CASE("table files round-trip through TSV") {
  std::vector<TableRow> rows = {
      {"drink water with", "cup", 1, "inspector-approved"},
      {"hold food in", "bottle", 1, "producer"},
  };
  fs::path p = fs::temp_directory_path() / "affr_table.tsv";
  save_table(p.string(), rows);
  auto back = load_table(p.string());
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].task == rows[i].task);
    CHECK(back[i].category == rows[i].category);
    CHECK(back[i].rank == rows[i].rank);
    CHECK(back[i].provenance == rows[i].provenance);
  }
  // Malformed rows report their line number.
  write_text_file(p.string(), "# header\nonly\tthree\tcolumns\n");
  CHECK_THROWS_WITH_AS(load_table(p.string()), doctest::Contains("line 2"), std::runtime_error);
  fs::remove(p);
}

TEST_CASE("quarantine files list one entry per line") {
  std::vector<QuarantineEntry> entries = {
      {"match", "hold food in", "", "line is not rank<TAB>category", "junk"},
  };
  fs::path p = fs::temp_directory_path() / "affr_quarantine.tsv";
  save_quarantine(p.string(), entries);
  std::string text = read_text_file(p.string());
  CHECK(text.find("match\thold food in\t\tline is not rank<TAB>category\tjunk\n") !=
        std::string::npos);
  fs::remove(p);
}

TEST_CASE("shipped prompt templates equal the compiled-in copies") {
  PromptTemplates disk = PromptTemplates::load(std::string(AFFR_ASSET_DIR) + "/prompts");
  PromptTemplates mem = PromptTemplates::builtin();
  CHECK(disk.produce == mem.produce);
  CHECK(disk.match == mem.match);
  CHECK(disk.inspect == mem.inspect);
}

TEST_CASE("table rows compose into a dataset with resolved categories") {
  DetectionDb db;
  db.categories = {{1, "cup"}, {2, "bottle"}};
  int next_ann = 1;
  for (int i = 0; i < 12; ++i) {
    ImageRecord img;
    img.id = 100 + i;
    img.h = 100;
    img.w = 100;
    db.images.push_back(img);
    // Alternate cup-only, bottle-only, and mixed scenes.
    std::vector<int> cats = i % 3 == 0 ? std::vector<int>{1}
                            : i % 3 == 1 ? std::vector<int>{2}
                                         : std::vector<int>{1, 2};
    for (int c : cats) {
      AnnotationRecord a;
      a.id = next_ann++;
      a.image_id = img.id;
      a.category_id = c;
      a.box = {0.5, 0.5, 0.2, 0.2};
      db.annotations.push_back(a);
    }
  }
  db.build_index();

  std::vector<TableRow> rows = {
      {"drink water with", "cup", 1, "inspector-approved"},
      {"drink water with", "bottle", 2, "inspector-approved"},
  };
  CompositionConfig comp;
  comp.train_per_task = 3;
  comp.test_per_task = 1;
  AffordanceDataset ds = build_dataset(rows, db, comp, 7, "mock-pipeline");
  REQUIRE(ds.tasks.size() == 1);
  CHECK(ds.tasks[0].verb == "drink water with");
  REQUIRE(ds.tasks[0].ranked.size() == 2);
  CHECK(ds.tasks[0].ranked[0].category_id == 1);
  CHECK(ds.tasks[0].ranked[1].category_id == 2);
  CHECK(ds.provenance == "mock-pipeline");

  AffordanceDataset empty = build_dataset({}, db, comp, 7, "mock-pipeline");
  CHECK(empty.tasks.empty());
  CHECK(empty.provenance.find("tasks=0") != std::string::npos);

  std::vector<TableRow> unknown = {{"drink water with", "spaceship", 1, "producer"}};
  CHECK_THROWS_WITH_AS(build_dataset(unknown, db, comp, 7, "x"), doctest::Contains("spaceship"),
                       std::runtime_error);
}

TEST_CASE("remote client sends the bearer token and parses the reply") {
  const char* env_name = "AFFR_TEST_LLM_TOKEN";
  httplib::Server server;
  std::string seen_auth, seen_prompt;
  double seen_temperature = -1;
  server.Post("/v1/complete", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    nlohmann::json body = nlohmann::json::parse(req.body);
    seen_prompt = body.at("prompt").get<std::string>();
    seen_temperature = body.at("temperature").get<double>();
    nlohmann::json reply;
    reply["text"] = "pong";
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/v1/broken", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  if (port <= 0) {
    MESSAGE("skipping: cannot bind a loopback port in this environment");
    return;
  }
  std::thread serve([&]() { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteClientConfig cfg;
  cfg.host = "127.0.0.1";
  cfg.port = port;
  cfg.token_env = env_name;
  cfg.timeout_s = 5.0;

  // Missing token refuses before any network traffic.
  unsetenv(env_name);
  RemoteCompletionClient missing(cfg);
  CHECK_THROWS_WITH_AS(missing.complete("hi", {}), doctest::Contains(env_name),
                       std::runtime_error);

  setenv(env_name, "sesame", 1);
  RemoteCompletionClient client(cfg);
  DecodeParams params;
  params.temperature = 0.25;
  CHECK(client.complete("ping prompt", params) == "pong");
  CHECK(seen_auth == "Bearer sesame");
  CHECK(seen_prompt == "ping prompt");
  CHECK(seen_temperature == 0.25);

  RemoteClientConfig broken_cfg = cfg;
  broken_cfg.path = "/v1/broken";
  RemoteCompletionClient broken(broken_cfg);
  CHECK_THROWS_WITH_AS(broken.complete("hi", {}), doctest::Contains("500"), std::runtime_error);

  server.stop();
  serve.join();
  unsetenv(env_name);
}
