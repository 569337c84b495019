#include "affr/llm_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "affr/util.hpp"

namespace affr {

namespace {

uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// Value of the first line starting with the prefix, or empty.
std::string line_value(const std::vector<std::string>& lines, const std::string& prefix) {
  for (const std::string& l : lines)
    if (l.rfind(prefix, 0) == 0) return l.substr(prefix.size());
  return "";
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  size_t start = 0;
  while (true) {
    size_t tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

std::string escape_raw(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\t') out += "\\t";
    else if (c == '\n') out += "\\n";
    else out += c;
  }
  return out;
}

struct CallOutcome {
  bool ok = false;
  std::string text;
  std::string error;
};

CallOutcome call_with_retries(CompletionClient& client, const std::string& prompt,
                              const DecodeParams& params, const PipelineConfig& cfg) {
  CallOutcome out;
  for (int attempt = 0; attempt < std::max(1, cfg.retries); ++attempt) {
    try {
      out.text = client.complete(prompt, params);
      out.ok = true;
      return out;
    } catch (const std::exception& e) {
      out.error = e.what();
      if (attempt + 1 < cfg.retries) {
        double s = cfg.backoff_base_s * double(1 << attempt);
        if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
      }
    }
  }
  return out;
}

std::string expand(std::string tpl, const std::string& key, const std::string& value) {
  const std::string pat = "{{" + key + "}}";
  size_t pos = 0;
  while ((pos = tpl.find(pat, pos)) != std::string::npos) {
    tpl.replace(pos, pat.size(), value);
    pos += value.size();
  }
  return tpl;
}

// Runs fn over items with at most fanout concurrent calls; results land at
// their item's index, so merged order never depends on scheduling.
template <class R, class Fn>
std::vector<R> bounded_map(int fanout, size_t n, Fn fn) {
  std::vector<R> out(n);
  if (n == 0) return out;
  std::atomic<size_t> next{0};
  int workers = std::max(1, std::min<int>(fanout, int(n)));
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        size_t i = next.fetch_add(1);
        if (i >= n) return;
        out[i] = fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
  return out;
}

const char* kProduceTemplate =
    "STEP: produce\n"
    "VERSION: 1\n"
    "You list affordance tasks for household object categories.\n"
    "Produce exactly 10 distinct task phrases in verb-object-preposition form\n"
    "(for example \"drink water with\"), one per line, nothing else.\n"
    "CATEGORY: {{category}}\n";
const char* kMatchTemplate =
    "STEP: match\n"
    "VERSION: 1\n"
    "Decide which of the candidate categories afford the task and rank them by\n"
    "commonsense preference, rank 1 best. Omit categories that do not afford\n"
    "the task. Answer one \"rank<TAB>category\" line per kept category.\n"
    "TASK: {{task}}\n"
    "CATEGORIES: {{categories}}\n";
const char* kInspectTemplate =
    "STEP: inspect\n"
    "VERSION: 1\n"
    "Review each task-category pair for physical plausibility and safety.\n"
    "Answer one \"task<TAB>category<TAB>keep\" or \"task<TAB>category<TAB>remove\"\n"
    "line per input row, in order.\n"
    "TABLE:\n"
    "{{table}}\n";

bool is_drink_verb(const std::string& task) {
  std::string first = task.substr(0, task.find(' '));
  return first == "drink" || first == "sip";
}

bool is_appliance(const std::string& category) {
  return category == "blender" || category == "toaster" || category == "microwave";
}

}  // namespace

std::string MockCompletionClient::complete(const std::string& prompt, const DecodeParams& params) {
  std::vector<std::string> lines = split_lines(prompt);
  std::string step = line_value(lines, "STEP: ");
  if (step == "produce") {
    std::string category = line_value(lines, "CATEGORY: ");
    if (category.empty()) throw std::runtime_error("mock: produce prompt without CATEGORY line");

    static const std::vector<std::string> verbs = {
        "hold", "carry", "serve", "store", "pour", "scoop", "stir", "shake",
        "wrap", "clean", "wipe", "decorate", "measure", "mix", "lift", "pack"};
    static const std::vector<std::string> objects = {
        "water", "food", "soup", "juice", "fruit", "bread",
        "tools", "leftovers", "coffee", "snacks", "salad", "spices"};
    static const std::vector<std::string> preps = {"with", "from", "into", "onto", "in", "using"};

    std::vector<std::string> phrases;
    std::set<std::string> seen;
    bool vessel = category == "cup" || category == "mug" || category == "glass" ||
                  category == "bottle";
    if (vessel) {
      phrases.push_back("drink water with");
      seen.insert(phrases.back());
    }
    Rng rng(seed_ ^ fnv1a(category) ^ (params.seed * 0x9e3779b97f4a7c15ull));
    uint64_t space = verbs.size() * objects.size() * preps.size();
    while (phrases.size() < 10) {
      uint64_t idx = rng.uniform_int(space);
      std::string phrase = verbs[size_t(idx % verbs.size())];
      idx /= verbs.size();
      phrase += " " + objects[size_t(idx % objects.size())];
      idx /= objects.size();
      phrase += " " + preps[size_t(idx % preps.size())];
      if (seen.insert(phrase).second) phrases.push_back(phrase);
    }
    return join(phrases, "\n") + "\n";
  }
  if (step == "match") {
    std::string task = line_value(lines, "TASK: ");
    std::string cats_line = line_value(lines, "CATEGORIES: ");
    if (task.empty() || cats_line.empty())
      throw std::runtime_error("mock: match prompt without TASK/CATEGORIES lines");
    std::vector<std::string> candidates;
    size_t start = 0;
    while (start <= cats_line.size()) {
      size_t comma = cats_line.find(", ", start);
      candidates.push_back(
          cats_line.substr(start, comma == std::string::npos ? comma : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 2;
    }

    std::ostringstream out;
    if (task == "drink water with") {
      // Built-in commonsense: vessels ranked ahead of bottles; the blender
      // survives matching so the inspection step has something to remove.
      static const std::vector<std::string> pref = {"cup",    "mug", "glass",
                                                    "bottle", "kettle", "blender"};
      int rank = 0;
      for (const std::string& p : pref)
        if (std::find(candidates.begin(), candidates.end(), p) != candidates.end())
          out << ++rank << "\t" << p << "\n";
      return out.str();
    }
    std::vector<std::pair<uint64_t, std::string>> kept;
    for (const std::string& c : candidates) {
      uint64_t h = fnv1a(task + "::" + c) ^ seed_;
      if (h % 4 != 0) kept.emplace_back(h, c);
    }
    std::sort(kept.begin(), kept.end());
    for (size_t i = 0; i < kept.size(); ++i) out << (i + 1) << "\t" << kept[i].second << "\n";
    return out.str();
  }
  if (step == "inspect") {
    std::ostringstream out;
    bool in_table = false;
    for (const std::string& l : lines) {
      if (l == "TABLE:") {
        in_table = true;
        continue;
      }
      if (!in_table || l.empty()) continue;
      std::vector<std::string> cols = split_tabs(l);
      if (cols.size() < 2) continue;
      bool remove = is_drink_verb(cols[0]) && is_appliance(cols[1]);
      out << cols[0] << "\t" << cols[1] << "\t" << (remove ? "remove" : "keep") << "\n";
    }
    return out.str();
  }
  throw std::runtime_error("mock: prompt has no recognizable STEP line");
}

std::string RemoteCompletionClient::complete(const std::string& prompt,
                                             const DecodeParams& params) {
  const char* token = std::getenv(cfg_.token_env.c_str());
  if (!token || !*token)
    throw std::runtime_error("environment variable " + cfg_.token_env + " is not set");

  httplib::Client cli(cfg_.host, cfg_.port);
  auto timeout = std::chrono::milliseconds(int64_t(cfg_.timeout_s * 1000));
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);

  nlohmann::json body;
  body["prompt"] = prompt;
  body["temperature"] = params.temperature;
  body["max_tokens"] = params.max_tokens;
  body["seed"] = params.seed;
  httplib::Headers headers = {{"Authorization", std::string("Bearer ") + token}};
  auto res = cli.Post(cfg_.path, headers, body.dump(), "application/json");
  if (!res)
    throw std::runtime_error("completion request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw std::runtime_error("completion request returned status " + std::to_string(res->status));
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("completion reply is not valid JSON: ") + e.what());
  }
  if (!reply.contains("text") || !reply["text"].is_string())
    throw std::runtime_error("completion reply lacks a string 'text' field");
  return reply["text"].get<std::string>();
}

PromptTemplates PromptTemplates::load(const std::string& dir) {
  PromptTemplates t;
  t.produce = read_text_file(dir + "/produce.txt");
  t.match = read_text_file(dir + "/match.txt");
  t.inspect = read_text_file(dir + "/inspect.txt");
  return t;
}

PromptTemplates PromptTemplates::builtin() {
  return {kProduceTemplate, kMatchTemplate, kInspectTemplate};
}

std::vector<std::string> produce_tasks(CompletionClient& client, const std::string& category,
                                       const PipelineConfig& cfg) {
  if (category.empty()) throw std::runtime_error("produce_tasks: empty category name");
  std::string prompt = expand(cfg.templates.produce, "category", category);
  DecodeParams params;
  params.seed = cfg.seed;

  std::string last_error;
  for (int attempt = 0; attempt < std::max(1, cfg.retries); ++attempt) {
    try {
      std::string text = client.complete(prompt, params);
      std::vector<std::string> phrases;
      std::set<std::string> seen;
      for (const std::string& l : split_lines(text)) {
        if (l.empty()) continue;
        int words = int(split_ws(l).size());
        if (words < 2 || words > 5)
          throw std::runtime_error("phrase '" + l + "' is not verb-object-preposition style");
        if (!seen.insert(l).second) throw std::runtime_error("duplicate phrase '" + l + "'");
        phrases.push_back(l);
      }
      if (phrases.size() != 10)
        throw std::runtime_error("expected 10 phrases, got " + std::to_string(phrases.size()));
      return phrases;
    } catch (const std::exception& e) {
      last_error = e.what();
      if (attempt + 1 < cfg.retries) {
        double s = cfg.backoff_base_s * double(1 << attempt);
        if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
      }
    }
  }
  throw std::runtime_error("produce_tasks('" + category + "') failed: " + last_error);
}

std::vector<TableRow> match_pairs(CompletionClient& client, const std::string& task,
                                  const std::vector<std::string>& categories,
                                  const PipelineConfig& cfg,
                                  std::vector<QuarantineEntry>* quarantine) {
  if (categories.empty()) throw std::runtime_error("match_pairs: empty candidate list");
  std::string prompt = expand(cfg.templates.match, "task", task);
  prompt = expand(prompt, "categories", join(categories, ", "));
  DecodeParams params;
  params.seed = cfg.seed;

  CallOutcome call = call_with_retries(client, prompt, params, cfg);
  auto reject = [&](const std::string& reason, const std::string& raw) {
    if (quarantine) quarantine->push_back({"match", task, "", reason, escape_raw(raw)});
    return std::vector<TableRow>{};
  };
  if (!call.ok) return reject("client failure: " + call.error, "");

  std::set<std::string> candidate_set(categories.begin(), categories.end());
  std::set<std::string> used;
  std::vector<std::pair<int, std::string>> ranked;
  for (const std::string& l : split_lines(call.text)) {
    if (l.empty()) continue;
    std::vector<std::string> cols = split_tabs(l);
    if (cols.size() != 2) return reject("line is not rank<TAB>category", call.text);
    int rank = 0;
    try {
      size_t used_chars = 0;
      rank = std::stoi(cols[0], &used_chars);
      if (used_chars != cols[0].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      return reject("rank '" + cols[0] + "' is not an integer", call.text);
    }
    if (rank < 1) return reject("rank below 1", call.text);
    if (candidate_set.find(cols[1]) == candidate_set.end())
      return reject("category '" + cols[1] + "' was not a candidate", call.text);
    if (!used.insert(cols[1]).second) return reject("category repeated", call.text);
    ranked.emplace_back(rank, cols[1]);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<TableRow> rows;
  for (size_t i = 0; i < ranked.size(); ++i)
    rows.push_back({task, ranked[i].second, int(i) + 1, "producer"});
  return rows;
}

std::vector<TableRow> inspect_pairs(CompletionClient& client, const std::vector<TableRow>& table,
                                    const PipelineConfig& cfg,
                                    std::vector<QuarantineEntry>* quarantine) {
  if (table.empty()) return {};
  std::ostringstream table_text;
  for (const TableRow& r : table)
    table_text << r.task << "\t" << r.category << "\t" << r.rank << "\n";
  std::string prompt = expand(cfg.templates.inspect, "table", table_text.str());
  DecodeParams params;
  params.seed = cfg.seed;

  CallOutcome call = call_with_retries(client, prompt, params, cfg);
  // Decisions keyed by (task, category); pairs without a parseable
  // decision stay in the table but are flagged for manual review.
  std::map<std::pair<std::string, std::string>, bool> remove_decision;
  if (call.ok) {
    for (const std::string& l : split_lines(call.text)) {
      if (l.empty()) continue;
      std::vector<std::string> cols = split_tabs(l);
      if (cols.size() != 3 || (cols[2] != "keep" && cols[2] != "remove")) continue;
      remove_decision[{cols[0], cols[1]}] = cols[2] == "remove";
    }
  }

  std::vector<TableRow> kept;
  std::map<std::string, int> next_rank;
  for (const TableRow& r : table) {
    auto it = remove_decision.find({r.task, r.category});
    if (it == remove_decision.end()) {
      if (quarantine)
        quarantine->push_back({"inspect-manual", r.task, r.category,
                               call.ok ? "no inspector decision" : "client failure: " + call.error,
                               call.ok ? escape_raw(call.text) : ""});
    } else if (it->second) {
      continue;
    }
    TableRow out = r;
    out.rank = ++next_rank[r.task];
    out.provenance = "inspector-approved";
    kept.push_back(std::move(out));
  }
  return kept;
}

PipelineResult run_pipeline(CompletionClient& client, const std::vector<std::string>& categories,
                            const PipelineConfig& cfg) {
  PipelineResult result;

  struct ProduceOutcome {
    bool ok = false;
    std::vector<std::string> phrases;
    std::string error;
  };
  std::vector<ProduceOutcome> produced = bounded_map<ProduceOutcome>(
      cfg.fanout, categories.size(), [&](size_t i) {
        ProduceOutcome o;
        try {
          o.phrases = produce_tasks(client, categories[i], cfg);
          o.ok = true;
        } catch (const std::exception& e) {
          o.error = e.what();
        }
        return o;
      });
  std::set<std::string> pooled;
  for (size_t i = 0; i < categories.size(); ++i) {
    if (!produced[i].ok) {
      result.pending_categories.push_back(categories[i]);
      result.quarantine.push_back({"produce", "", categories[i], produced[i].error, ""});
      continue;
    }
    for (const std::string& p : produced[i].phrases)
      if (pooled.insert(p).second) result.task_pool.push_back(p);
  }

  struct MatchOutcome {
    std::vector<TableRow> rows;
    std::vector<QuarantineEntry> quarantine;
  };
  std::vector<MatchOutcome> matched = bounded_map<MatchOutcome>(
      cfg.fanout, result.task_pool.size(), [&](size_t i) {
        MatchOutcome o;
        o.rows = match_pairs(client, result.task_pool[i], categories, cfg, &o.quarantine);
        return o;
      });
  std::vector<TableRow> table;
  for (MatchOutcome& m : matched) {
    for (TableRow& r : m.rows) table.push_back(std::move(r));
    for (QuarantineEntry& q : m.quarantine) result.quarantine.push_back(std::move(q));
  }

  result.rows = inspect_pairs(client, table, cfg, &result.quarantine);
  return result;
}

void save_table(const std::string& path, const std::vector<TableRow>& rows) {
  std::ostringstream out;
  out << "# task\tcategory\trank\tprovenance\n";
  for (const TableRow& r : rows)
    out << r.task << "\t" << r.category << "\t" << r.rank << "\t" << r.provenance << "\n";
  write_text_file(path, out.str());
}

std::vector<TableRow> load_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open table '" + path + "'");
  std::vector<TableRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 4)
      throw std::runtime_error("table line " + std::to_string(line_no) +
                               ": expected 4 tab-separated columns");
    TableRow r;
    r.task = cols[0];
    r.category = cols[1];
    try {
      r.rank = std::stoi(cols[2]);
    } catch (const std::exception&) {
      throw std::runtime_error("table line " + std::to_string(line_no) + ": bad rank");
    }
    r.provenance = cols[3];
    rows.push_back(std::move(r));
  }
  return rows;
}

void save_quarantine(const std::string& path, const std::vector<QuarantineEntry>& entries) {
  std::ostringstream out;
  out << "# kind\ttask\tcategory\treason\traw\n";
  for (const QuarantineEntry& q : entries)
    out << q.kind << "\t" << q.task << "\t" << q.category << "\t" << q.reason << "\t" << q.raw
        << "\n";
  write_text_file(path, out.str());
}

AffordanceDataset build_dataset(const std::vector<TableRow>& rows, const DetectionDb& db,
                                const CompositionConfig& comp, uint64_t seed,
                                const std::string& provenance) {
  std::map<std::string, int> cat_id;
  for (const CategoryEntry& c : db.categories) cat_id[c.name] = c.id;

  std::vector<TaskSpec> table;
  std::map<std::string, size_t> task_pos;
  for (const TableRow& r : rows) {
    auto ci = cat_id.find(r.category);
    if (ci == cat_id.end())
      throw std::runtime_error("table references unknown category '" + r.category + "'");
    auto tp = task_pos.find(r.task);
    if (tp == task_pos.end()) {
      TaskSpec t;
      t.id = int(table.size()) + 1;
      t.verb = r.task;
      table.push_back(std::move(t));
      tp = task_pos.emplace(r.task, table.size() - 1).first;
    }
    table[tp->second].ranked.push_back({ci->second, r.rank});
  }

  AffordanceDataset ds = compose_affordance_dataset(db, table, comp, seed);
  ds.provenance = provenance + (table.empty() ? "; tasks=0" : "");
  return ds;
}

}  // namespace affr
