#include "affr/runner.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "affr/checkpoint.hpp"
#include "affr/config.hpp"
#include "affr/gradcheck.hpp"
#include "affr/train.hpp"
#include "affr/util.hpp"

namespace affr {

namespace fs = std::filesystem;

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr double kGradTol = 1e-3;

std::string timestamp_utc() {
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

// Pixels, dataset, vocabulary, and optional scene geometry of one dataset
// directory.
struct DataBundle {
  std::string dir;
  std::unique_ptr<MicroWorld> world;
  AffordanceDataset plain;
  Vocabulary vocab;

  const AffordanceDataset& ds() const { return world ? world->dataset : plain; }

  PixelSource pixels() const {
    if (world) {
      const MicroWorld* w = world.get();
      return [w](int image_id) { return w->render(image_id); };
    }
    const AffordanceDataset* d = &plain;
    std::string base = dir;
    return [d, base](int image_id) {
      const ImageRecord& rec = d->image(image_id);
      if (rec.file.empty())
        throw std::runtime_error("image " + std::to_string(image_id) + " carries no pixel file");
      return read_png(base + "/" + rec.file);
    };
  }
};

DataBundle load_data(const std::string& dir) {
  if (dir.empty()) throw ConfigError("data", "this command requires --data DIR");
  DataBundle b;
  b.dir = dir;
  if (fs::exists(fs::path(dir) / "scenes.json")) {
    b.world = std::make_unique<MicroWorld>(MicroWorld::load(dir));
  } else {
    b.plain = AffordanceDataset::load((fs::path(dir) / "dataset.json").string());
  }
  fs::path vocab_path = fs::path(dir) / "vocab.txt";
  if (fs::exists(vocab_path))
    b.vocab = Vocabulary::load(vocab_path.string());
  else if (b.world)
    b.vocab = microworld_vocabulary(b.world->spec);
  else
    throw std::runtime_error("dataset directory '" + dir + "' lacks vocab.txt");
  return b;
}

void require_evaluable(const AffordanceDataset& ds) {
  int test_images = 0;
  for (const TaskData& td : ds.task_data) test_images += int(td.test_images.size());
  if (ds.tasks.empty() || test_images == 0)
    throw ConfigError("data", "dataset holds no evaluable tasks");
}

int form_code(PromptForm f) {
  switch (f) {
    case PromptForm::kEmpty: return 0;
    case PromptForm::kNoun: return 1;
    case PromptForm::kPronoun: return 2;
  }
  return 0;
}

PromptForm form_from_code(int c) {
  if (c == 1) return PromptForm::kNoun;
  if (c == 2) return PromptForm::kPronoun;
  return PromptForm::kEmpty;
}

struct RunDir {
  fs::path path;
  std::ofstream log;

  void line(const std::string& s) {
    log << s << "\n";
    log.flush();
  }
};

RunDir make_run_dir(const RunConfig& cfg) {
  fs::path root = cfg.out;
  fs::create_directories(root);
  std::string base = timestamp_utc() + "-" + cfg.hash().substr(0, 8);
  fs::path dir = root / base;
  for (int n = 2; fs::exists(dir); ++n) dir = root / (base + "-" + std::to_string(n));
  fs::create_directories(dir);
  write_text_file((dir / "config.txt").string(), cfg.canonical());
  RunDir rd;
  rd.path = dir;
  rd.log.open(dir / "run.log");
  if (!rd.log) throw std::runtime_error("cannot open run.log under " + dir.string());
  return rd;
}

void save_model_checkpoint(const fs::path& path, const nn::ParamStore& ps, const RunConfig& cfg,
                           PromptForm form, const MemoryBank* bank) {
  Checkpoint ck = checkpoint_from_params(ps, cfg.hash());
  ck.add("meta.form", {1}, {double(form_code(form))});
  if (bank != nullptr) add_bank_to_checkpoint(ck, *bank);
  ck.save(path.string());
}

// Loads checkpoint parameters into a freshly initialized store.
nn::ParamStore restore_params(const Trainer& tr, const Checkpoint& ck, uint64_t salt) {
  nn::ParamStore ps = tr.init_params(salt);
  params_from_checkpoint(ck, ps);
  return ps;
}

PromptForm checkpoint_form(const Checkpoint& ck) {
  auto it = ck.arrays.find("meta.form");
  if (it == ck.arrays.end() || it->second.data.size() != 1)
    throw CheckpointError("checkpoint carries no prompt-form marker");
  return form_from_code(int(it->second.data[0]));
}

// Minimum-rank target category over a scene; ties to the lowest id.
int scene_target_category(const Scene& scene, const TaskSpec& task) {
  int best_rank = 1 << 30, best_cat = -1;
  for (const SceneShape& sh : scene.shapes)
    for (const RankedCategory& rc : task.ranked)
      if (rc.category_id == sh.category_id &&
          (rc.rank < best_rank || (rc.rank == best_rank && rc.category_id < best_cat))) {
        best_rank = rc.rank;
        best_cat = rc.category_id;
      }
  return best_cat;
}

// Per-shape scores from the model: a shape takes the best preference score
// among queries whose predicted box overlaps it at IoU >= 0.5.
std::vector<double> score_scene(const AffordanceModel& model, const nn::ParamStore& ps,
                                const DataBundle& data, const RunConfig& cfg,
                                const TaskSpec& task, PromptForm form, MemoryBank* bank,
                                int task_index, const Scene& scene) {
  Image img = render_scene(scene, data.world->spec);
  int target_cat = scene_target_category(scene, task);
  int n_targets = 0;
  for (const SceneShape& sh : scene.shapes)
    if (sh.category_id == target_cat) ++n_targets;
  std::vector<std::string> cats;
  if (target_cat >= 0) cats.push_back(data.ds().category(target_cat).name);
  PromptSpec spec = build_prompt(task.verb, form, cats, target_cat >= 0 ? n_targets : 0,
                                 cfg.prompt.pronoun);
  Prompt prompt = tokenize(spec, data.vocab, cfg.model.n_max);

  ForwardOptions opts;
  opts.trainable = false;
  std::vector<double> proto;
  if (bank != nullptr && prompt.form == PromptForm::kPronoun && !prompt.pronoun_span.empty() &&
      bank->queue_size(task_index) > 0) {
    if (!bank->centers_fresh(task_index)) bank->recluster(task_index, cfg.seed ^ 0xe7a1ull);
    std::vector<std::vector<double>> rows = model.text_feature_rows(ps, prompt);
    std::vector<double> pron(size_t(cfg.model.dim), 0.0);
    for (int r = prompt.pronoun_span.begin; r < prompt.pronoun_span.end; ++r)
      for (int c = 0; c < cfg.model.dim; ++c) pron[size_t(c)] += rows[size_t(r)][size_t(c)];
    for (double& v : pron) v /= double(prompt.pronoun_span.len());
    proto = select_prototype(pron, bank->centers(task_index)).second;
    opts.replace_vec = &proto;
    opts.replace_span = prompt.pronoun_span;
  }

  ad::Tape t;
  PredictionValues pv = snapshot(model.forward(t, ps, img, prompt, opts));
  std::vector<double> scores(scene.shapes.size(), 0.0);
  for (size_t si = 0; si < scene.shapes.size(); ++si) {
    Box sb = shape_box(scene.shapes[si], scene.h, scene.w);
    for (size_t q = 0; q < pv.boxes.size(); ++q)
      if (box_iou(pv.boxes[q], sb) >= 0.5) scores[si] = std::max(scores[si], pv.scores[q]);
  }
  return scores;
}

int cmd_build_data(const RunOptions& opts, RunConfig cfg, RunDir& rd, std::ostream& os) {
  (void)opts;
  MicroWorldSpec spec = default_microworld_spec(cfg.seed);
  spec.canvas = cfg.data.canvas;
  spec.composition.frac_mcmo = cfg.data.frac_mcmo;
  spec.composition.frac_scmo = cfg.data.frac_scmo;
  spec.composition.frac_scso = cfg.data.frac_scso;
  spec.composition.frac_others = cfg.data.frac_others;
  spec.composition.train_per_task = cfg.data.train_per_task;
  spec.composition.test_per_task = cfg.data.test_per_task;

  MicroWorld world = gen_microworld(spec);
  fs::path data_dir = rd.path / "dataset";
  world.save(data_dir.string());
  microworld_vocabulary(spec).save((data_dir / "vocab.txt").string());

  rd.line("tag=build-data images=" + std::to_string(world.dataset.images.size()) +
          " annotations=" + std::to_string(world.dataset.annotations.size()) +
          " skipped_scenes=" + std::to_string(world.skipped_scenes));
  for (const TaskData& td : world.dataset.task_data)
    for (const StratumReport& sr : td.report)
      rd.line("tag=build-data task=" + std::to_string(td.task_id) + " stratum=" +
              scene_tag_name(sr.tag) + " requested=" + std::to_string(sr.requested) +
              " filled=" + std::to_string(sr.filled));
  os << "dataset_dir=" << data_dir.string() << "\n";
  os << "dataset_sha256=" << sha256_file((data_dir / "dataset.json").string()) << "\n";
  return 0;
}

int cmd_train_plain(const RunOptions& opts, RunConfig cfg, RunDir& rd, std::ostream& os,
                    std::string* stage) {
  bool teacher = opts.command == "train-teacher";
  PromptForm form = teacher ? PromptForm::kNoun : PromptForm::kPronoun;
  std::string tag = teacher ? "teacher" : "student-plain";

  *stage = "load-data";
  DataBundle data = load_data(opts.data_dir);
  require_evaluable(data.ds());
  Trainer tr(cfg, data.ds(), data.vocab, data.pixels(), data.world.get());
  nn::ParamStore ps = tr.init_params(fnv1a(teacher ? "teacher" : "student"));

  *stage = "train";
  LogSink sink = [&rd, &os](const std::string& s) {
    rd.line(s);
    os << s << "\n";
  };
  TrainOutcome outcome = tr.train_plain(ps, form, tag, sink);
  fs::path ckpt = rd.path / (teacher ? "teacher.ckpt" : "student.ckpt");
  save_model_checkpoint(ckpt, ps, cfg, form, nullptr);
  if (outcome.diverged)
    throw std::runtime_error("training diverged; last-good checkpoint saved to " + ckpt.string());

  *stage = "eval";
  EvalReport report = tr.evaluate(ps, form);
  report.save((rd.path / "eval.json").string());
  rd.line("tag=" + tag + " " + report.summary_line());
  os << report.summary_line() << "\n";
  os << "checkpoint=" << ckpt.string() << "\n";
  os << "eval_sha256=" << sha256_file((rd.path / "eval.json").string()) << "\n";
  return 0;
}

int cmd_distill(const RunOptions& opts, RunConfig cfg, RunDir& rd, std::ostream& os,
                std::string* stage) {
  *stage = "load-data";
  DataBundle data = load_data(opts.data_dir);
  require_evaluable(data.ds());
  Trainer tr(cfg, data.ds(), data.vocab, data.pixels(), data.world.get());

  *stage = "load-checkpoint";
  if (opts.teacher_path.empty())
    throw ConfigError("teacher", "distill requires --teacher CHECKPOINT");
  Checkpoint tck = load_checkpoint_for(opts.teacher_path, cfg.hash(), opts.force);
  nn::ParamStore teacher = restore_params(tr, tck, fnv1a("teacher"));
  nn::ParamStore student = tr.init_params(fnv1a("student"));
  MemoryBank bank = tr.make_bank();

  *stage = "distill";
  LogSink sink = [&rd, &os](const std::string& s) {
    rd.line(s);
    os << s << "\n";
  };
  TrainOutcome outcome = tr.distill(teacher, student, bank, "student-distilled", sink);
  fs::path ckpt = rd.path / "student_distilled.ckpt";
  save_model_checkpoint(ckpt, student, cfg, PromptForm::kPronoun, &bank);
  if (outcome.diverged)
    throw std::runtime_error("distillation diverged; last-good checkpoint saved to " +
                             ckpt.string());

  *stage = "eval";
  EvalReport report = tr.evaluate(student, PromptForm::kPronoun, &bank);
  report.save((rd.path / "eval.json").string());
  rd.line("tag=student-distilled " + report.summary_line());
  os << report.summary_line() << "\n";
  os << "checkpoint=" << ckpt.string() << "\n";
  os << "eval_sha256=" << sha256_file((rd.path / "eval.json").string()) << "\n";
  return 0;
}

int cmd_eval(const RunOptions& opts, RunConfig cfg, RunDir& rd, std::ostream& os,
             std::string* stage, bool write_sweep) {
  *stage = "load-data";
  DataBundle data = load_data(opts.data_dir);
  require_evaluable(data.ds());
  Trainer tr(cfg, data.ds(), data.vocab, data.pixels(), data.world.get());

  *stage = "load-checkpoint";
  if (opts.checkpoint_path.empty())
    throw ConfigError("checkpoint", "this command requires --checkpoint PATH");
  Checkpoint ck = load_checkpoint_for(opts.checkpoint_path, cfg.hash(), opts.force);
  PromptForm form = checkpoint_form(ck);
  nn::ParamStore ps = restore_params(tr, ck, fnv1a("eval"));
  std::unique_ptr<MemoryBank> bank;
  if (checkpoint_has_bank(ck)) bank = std::make_unique<MemoryBank>(bank_from_checkpoint(ck));

  *stage = "eval";
  EvalReport report = tr.evaluate(ps, form, bank.get());
  report.save((rd.path / "eval.json").string());
  rd.line(report.summary_line());
  os << report.summary_line() << "\n";
  if (write_sweep) {
    std::ostringstream table;
    table << "threshold\tretained\tprecision\trecall\tf1\n";
    for (const SweepPoint& p : report.sweep)
      table << fmt_real(p.threshold) << "\t" << p.retained << "\t" << fmt_real(p.precision)
            << "\t" << fmt_real(p.recall) << "\t" << fmt_real(p.f1) << "\n";
    write_text_file((rd.path / "sweep.txt").string(), table.str());
    os << table.str();
  }
  os << "eval_sha256=" << sha256_file((rd.path / "eval.json").string()) << "\n";
  return 0;
}

int cmd_sweep_k(const RunOptions& opts, RunConfig cfg, RunDir& rd, std::ostream& os,
                std::string* stage) {
  *stage = "load-data";
  DataBundle data = load_data(opts.data_dir);
  require_evaluable(data.ds());

  *stage = "load-checkpoint";
  if (opts.teacher_path.empty())
    throw ConfigError("teacher", "sweep-k requires --teacher CHECKPOINT");
  Checkpoint tck = load_checkpoint_for(opts.teacher_path, cfg.hash(), opts.force);

  *stage = "sweep-k";
  std::ostringstream table;
  for (int k = 1; k <= 10; ++k) {
    RunConfig cfg_k = cfg;
    cfg_k.distill.k = k;
    if (cfg_k.distill.n_mem < k) cfg_k.distill.n_mem = k;
    Trainer tr(cfg_k, data.ds(), data.vocab, data.pixels(), data.world.get());
    nn::ParamStore teacher = restore_params(tr, tck, fnv1a("teacher"));
    nn::ParamStore student = tr.init_params(fnv1a("student"));
    MemoryBank bank = tr.make_bank();
    LogSink sink = [&rd, k](const std::string& s) { rd.line("k=" + std::to_string(k) + " " + s); };
    TrainOutcome outcome = tr.distill(teacher, student, bank, "student-distilled", sink);
    if (outcome.diverged) throw std::runtime_error("distillation diverged at k=" +
                                                   std::to_string(k));
    EvalReport report = tr.evaluate(student, PromptForm::kPronoun, &bank);
    std::string row = "k=" + std::to_string(k) + " map_box=" + fmt_real(report.map_box) +
                      " map_mask=" + fmt_real(report.map_mask);
    table << row << "\n";
    rd.line(row);
    os << row << "\n";
  }
  write_text_file((rd.path / "sweep_k.txt").string(), table.str());
  return 0;
}

int cmd_eliminate(const RunOptions& opts, RunConfig cfg, RunDir& rd, std::ostream& os,
                  std::string* stage) {
  *stage = "load-data";
  DataBundle data = load_data(opts.data_dir);
  require_evaluable(data.ds());
  if (!data.world)
    throw ConfigError("data", "eliminate requires micro-world scenes (scenes.json)");
  Trainer tr(cfg, data.ds(), data.vocab, data.pixels(), data.world.get());

  *stage = "load-checkpoint";
  if (opts.checkpoint_path.empty())
    throw ConfigError("checkpoint", "eliminate requires --checkpoint PATH");
  Checkpoint ck = load_checkpoint_for(opts.checkpoint_path, cfg.hash(), opts.force);
  PromptForm form = checkpoint_form(ck);
  nn::ParamStore ps = restore_params(tr, ck, fnv1a("eval"));
  std::unique_ptr<MemoryBank> bank;
  if (checkpoint_has_bank(ck)) bank = std::make_unique<MemoryBank>(bank_from_checkpoint(ck));

  *stage = "eliminate";
  std::ostringstream table;
  for (size_t ti = 0; ti < data.ds().tasks.size(); ++ti) {
    const TaskSpec& task = data.ds().tasks[ti];
    const TaskData& td = data.ds().data_for_task(task.id);
    for (int image_id : td.test_images) {
      const Scene& start = data.world->scene(image_id);
      SceneScorer scorer = [&](const Scene& s) {
        return score_scene(tr.model(), ps, data, cfg, task, form, bank.get(), int(ti), s);
      };
      std::vector<EliminationRound> rounds =
          elimination_run(start, scorer, int(start.shapes.size()), cfg.eval.threshold);
      for (const EliminationRound& r : rounds) {
        std::string row = "task=" + std::to_string(task.id) + " image=" +
                          std::to_string(image_id) + " round=" + std::to_string(r.round) +
                          " selected=" + std::to_string(int(r.selected)) + " shape=" +
                          std::to_string(r.shape_index) + " category=" +
                          std::to_string(r.category_id) + " score=" + fmt_real(r.score) +
                          " remaining=" + std::to_string(r.remaining);
        table << row << "\n";
        rd.line(row);
      }
    }
  }
  write_text_file((rd.path / "eliminate.txt").string(), table.str());
  os << "transcript=" << (rd.path / "eliminate.txt").string() << "\n";
  return 0;
}

int cmd_gradcheck(RunConfig cfg, RunDir& rd, std::ostream& os) {
  std::vector<GradCheckCase> cases = run_gradcheck(50, cfg.seed);
  bool ok = true;
  std::ostringstream table;
  for (const GradCheckCase& c : cases) {
    bool pass = c.max_err < kGradTol;
    ok = ok && pass;
    std::string row = "case=" + c.name + " max_err=" + fmt_real(c.max_err) +
                      " points=" + std::to_string(c.points) + " status=" +
                      (pass ? "pass" : "FAIL");
    table << row << "\n";
    rd.line(row);
    os << row << "\n";
  }
  write_text_file((rd.path / "gradcheck.txt").string(), table.str());
  if (!ok) throw std::runtime_error("finite-difference check exceeded tolerance " +
                                    fmt_real(kGradTol));
  return 0;
}

}  // namespace

int run_command(const RunOptions& opts) {
  std::ostream& os = opts.stream != nullptr ? *opts.stream : std::cout;
  std::string stage = "load-config";
  try {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg = load_config(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (!opts.out.empty()) cfg.out = opts.out;

    stage = "setup";
    RunDir rd = make_run_dir(cfg);
    os << "run_dir=" << rd.path.string() << "\n";
    os << "config_hash=" << cfg.hash() << "\n";

    stage = opts.command;
    if (opts.command == "build-data") return cmd_build_data(opts, cfg, rd, os);
    if (opts.command == "train-teacher" || opts.command == "train-student")
      return cmd_train_plain(opts, cfg, rd, os, &stage);
    if (opts.command == "distill") return cmd_distill(opts, cfg, rd, os, &stage);
    if (opts.command == "eval") return cmd_eval(opts, cfg, rd, os, &stage, false);
    if (opts.command == "sweep-threshold") return cmd_eval(opts, cfg, rd, os, &stage, true);
    if (opts.command == "sweep-k") return cmd_sweep_k(opts, cfg, rd, os, &stage);
    if (opts.command == "eliminate") return cmd_eliminate(opts, cfg, rd, os, &stage);
    if (opts.command == "gradcheck") return cmd_gradcheck(cfg, rd, os);
    throw ConfigError("command", "unknown command '" + opts.command + "'");
  } catch (const ConfigError& e) {
    os << "config error: key=" << e.key << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    os << "runtime error: stage=" << stage << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace affr
