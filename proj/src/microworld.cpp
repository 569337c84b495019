#include "affr/microworld.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace affr {

namespace {

using ojson = nlohmann::ordered_json;

ShapeKind kind_of(const MicroWorldSpec& spec, int category_id) {
  for (const ShapeArchetype& a : spec.shapes)
    if (a.category_id == category_id) return a.kind;
  throw std::runtime_error("microworld: unknown category id");
}

const ShapeArchetype& archetype_of(const MicroWorldSpec& spec, int category_id) {
  for (const ShapeArchetype& a : spec.shapes)
    if (a.category_id == category_id) return a;
  throw std::runtime_error("microworld: unknown category id");
}

bool point_in_shape(const SceneShape& s, ShapeKind kind, double px, double py) {
  double dx = px - s.cx, dy = py - s.cy;
  switch (kind) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= s.r * s.r;
    case ShapeKind::kSquare:
      return std::abs(dx) <= s.r && std::abs(dy) <= s.r;
    case ShapeKind::kTriangle: {
      // Vertices: apex (cx, cy-r), base (cx-r, cy+r) and (cx+r, cy+r).
      double ax = s.cx, ay = s.cy - s.r;
      double bx = s.cx - s.r, by = s.cy + s.r;
      double cx = s.cx + s.r, cy = s.cy + s.r;
      double c1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
      double c2 = (cx - bx) * (py - by) - (cy - by) * (px - bx);
      double c3 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx);
      return (c1 <= 0 && c2 <= 0 && c3 <= 0) || (c1 >= 0 && c2 >= 0 && c3 >= 0);
    }
    case ShapeKind::kRing: {
      double d2 = dx * dx + dy * dy;
      double inner = 0.55 * s.r;
      return d2 <= s.r * s.r && d2 > inner * inner;
    }
  }
  return false;
}

}  // namespace

Mask shape_mask(const SceneShape& s, ShapeKind kind, int h, int w) {
  Mask m;
  m.h = h;
  m.w = w;
  m.v.assign(size_t(h) * size_t(w), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (point_in_shape(s, kind, x + 0.5, y + 0.5)) m.v[size_t(y) * size_t(w) + size_t(x)] = 1;
  return m;
}

Box shape_box(const SceneShape& s, int h, int w) {
  return {s.cx / w, s.cy / h, 2 * s.r / w, 2 * s.r / h};
}

std::vector<TaskSpec> load_rank_table(const std::string& path,
                                      const std::vector<CategoryEntry>& categories) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open rank table '" + path + "'");
  std::map<std::string, int> cat_id;
  for (const CategoryEntry& c : categories) cat_id[c.name] = c.id;

  std::vector<TaskSpec> tasks;
  std::map<std::string, size_t> task_pos;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    std::ostringstream ctx;
    ctx << "rank table line " << line_no;
    if (cols.size() != 3) throw std::runtime_error(ctx.str() + ": expected 3 tab-separated columns");
    auto ci = cat_id.find(cols[1]);
    if (ci == cat_id.end())
      throw std::runtime_error(ctx.str() + ": unknown category '" + cols[1] + "'");
    int rank = 0;
    try {
      rank = std::stoi(cols[2]);
    } catch (const std::exception&) {
      throw std::runtime_error(ctx.str() + ": rank is not an integer");
    }
    if (rank < 1) throw std::runtime_error(ctx.str() + ": rank must be >= 1");

    auto tp = task_pos.find(cols[0]);
    if (tp == task_pos.end()) {
      TaskSpec t;
      t.id = int(tasks.size()) + 1;
      t.verb = cols[0];
      tasks.push_back(std::move(t));
      tp = task_pos.emplace(cols[0], tasks.size() - 1).first;
    }
    tasks[tp->second].ranked.push_back({ci->second, rank});
  }
  for (const TaskSpec& t : tasks) {
    std::vector<int> ranks;
    for (const RankedCategory& rc : t.ranked) ranks.push_back(rc.rank);
    std::sort(ranks.begin(), ranks.end());
    for (size_t i = 0; i < ranks.size(); ++i)
      if (ranks[i] != int(i) + 1)
        throw std::runtime_error("rank table: task '" + t.verb + "' ranks are not gapless 1..m");
  }
  return tasks;
}

Vocabulary microworld_vocabulary(const MicroWorldSpec& spec) {
  std::vector<std::string> tokens = {"<pad>", "<noobj>", "something", "it", "them", "abcd"};
  auto push_new = [&tokens](const std::string& w) {
    for (const std::string& t : tokens)
      if (t == w) return;
    tokens.push_back(w);
  };
  for (const TaskSpec& t : spec.tasks)
    for (const std::string& w : split_ws(t.verb)) push_new(w);
  size_t max_words = 0;
  std::vector<std::vector<std::string>> name_words;
  for (const ShapeArchetype& s : spec.shapes) {
    name_words.push_back(split_ws(s.name));
    max_words = std::max(max_words, name_words.back().size());
  }
  for (size_t col = 0; col < max_words; ++col)
    for (const auto& words : name_words)
      if (col < words.size()) push_new(words[col]);
  return Vocabulary::from_tokens(tokens);
}

MicroWorldSpec default_microworld_spec(uint64_t seed) {
  MicroWorldSpec spec;
  spec.seed = seed;
  spec.shapes = {
      {1, "red circle", ShapeKind::kCircle, {0.85, 0.20, 0.20}},
      {2, "blue circle", ShapeKind::kCircle, {0.20, 0.35, 0.85}},
      {3, "green square", ShapeKind::kSquare, {0.20, 0.70, 0.30}},
      {4, "yellow square", ShapeKind::kSquare, {0.90, 0.85, 0.25}},
      {5, "purple triangle", ShapeKind::kTriangle, {0.60, 0.30, 0.80}},
      {6, "orange triangle", ShapeKind::kTriangle, {0.95, 0.55, 0.15}},
      {7, "cyan ring", ShapeKind::kRing, {0.20, 0.75, 0.80}},
      {8, "magenta ring", ShapeKind::kRing, {0.85, 0.30, 0.70}},
  };
  auto task = [&](int id, const char* verb, std::initializer_list<std::pair<int, int>> ranks) {
    TaskSpec t;
    t.id = id;
    t.verb = verb;
    for (auto [cat, rank] : ranks) t.ranked.push_back({cat, rank});
    spec.tasks.push_back(std::move(t));
  };
  task(1, "roll smoothly across", {{1, 1}, {2, 2}, {7, 3}, {8, 4}});
  task(2, "stack neatly on", {{3, 1}, {4, 2}});
  task(3, "spin quickly around", {{7, 1}, {8, 2}, {1, 3}});
  task(4, "balance carefully on", {{5, 1}, {6, 2}, {3, 3}});
  task(5, "slide gently over", {{2, 1}, {1, 2}});
  task(6, "point sharply at", {{6, 1}, {5, 2}});
  task(7, "tile evenly with", {{4, 1}, {3, 2}});
  task(8, "thread string through", {{8, 1}, {7, 2}});
  task(9, "bounce lightly off", {{1, 1}, {2, 2}, {5, 3}});
  task(10, "wedge firmly under", {{5, 1}, {6, 2}, {4, 3}});
  task(11, "frame pictures with", {{3, 1}, {4, 2}, {7, 3}});
  task(12, "hang loosely on", {{7, 1}, {8, 2}, {6, 3}});
  return spec;
}

namespace {

// Places count shapes of the given categories without bounding-box overlap
// (inflated by the margin). Returns false when the retry budget runs out.
bool place_shapes(const MicroWorldSpec& spec, const std::vector<int>& cats, Rng& rng,
                  std::vector<SceneShape>* out) {
  out->clear();
  for (int cat : cats) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.retry_budget && !placed; ++attempt) {
      SceneShape s;
      s.category_id = cat;
      s.r = rng.uniform(spec.min_radius, spec.max_radius);
      s.cx = rng.uniform(s.r + 1, spec.canvas - s.r - 1);
      s.cy = rng.uniform(s.r + 1, spec.canvas - s.r - 1);
      bool ok = true;
      for (const SceneShape& p : *out) {
        double lim_x = s.r + p.r + spec.margin;
        double lim_y = s.r + p.r + spec.margin;
        if (std::abs(s.cx - p.cx) < lim_x && std::abs(s.cy - p.cy) < lim_y) {
          ok = false;
          break;
        }
      }
      if (ok) {
        out->push_back(s);
        placed = true;
      }
    }
    if (!placed) return false;
  }
  return true;
}

// Category multiset for one scene of the requested stratum.
std::vector<int> pick_categories(const MicroWorldSpec& spec, const TaskSpec& task, SceneTag tag,
                                 Rng& rng) {
  std::vector<int> relevant, other;
  for (const ShapeArchetype& a : spec.shapes) {
    bool in_task = false;
    for (const RankedCategory& rc : task.ranked)
      if (rc.category_id == a.category_id) in_task = true;
    (in_task ? relevant : other).push_back(a.category_id);
  }
  auto pick = [&](const std::vector<int>& from) {
    return from[size_t(rng.uniform_int(uint64_t(from.size())))];
  };
  std::vector<int> cats;
  switch (tag) {
    case SceneTag::kSCSO: {
      cats.push_back(pick(relevant));
      int k = int(rng.uniform_int(uint64_t(spec.max_distractors) + 1));
      for (int i = 0; i < k; ++i) cats.push_back(pick(other));
      break;
    }
    case SceneTag::kSCMO: {
      int c = pick(relevant);
      int n = 2 + int(rng.uniform_int(2));
      for (int i = 0; i < n; ++i) cats.push_back(c);
      if (rng.bernoulli(0.5) && !other.empty()) cats.push_back(pick(other));
      break;
    }
    case SceneTag::kMCMO: {
      std::vector<int> pool = relevant;
      rng.shuffle(pool);
      int c = 2 + (pool.size() > 2 ? int(rng.uniform_int(2)) : 0);
      for (int i = 0; i < c; ++i) cats.push_back(pool[size_t(i)]);
      if (rng.bernoulli(0.5)) cats.push_back(pool[0]);
      if (rng.bernoulli(0.5) && !other.empty()) cats.push_back(pick(other));
      break;
    }
    case SceneTag::kOthers: {
      int k = int(rng.uniform_int(4));
      for (int i = 0; i < k; ++i) cats.push_back(pick(other));
      break;
    }
  }
  return cats;
}

std::array<int, 4> stratum_plan(const CompositionConfig& cfg) {
  int total = cfg.images_per_task();
  std::array<double, 4> frac = {cfg.frac_mcmo, cfg.frac_scmo, cfg.frac_scso, cfg.frac_others};
  std::array<int, 4> base{};
  std::array<double, 4> rem{};
  int used = 0;
  for (int i = 0; i < 4; ++i) {
    double q = frac[size_t(i)] * total;
    base[size_t(i)] = int(std::floor(q + 1e-12));
    rem[size_t(i)] = q - base[size_t(i)];
    used += base[size_t(i)];
  }
  std::array<int, 4> order = {0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return rem[size_t(a)] > rem[size_t(b)]; });
  for (int i = 0; used < total; ++i, ++used) ++base[size_t(order[size_t(i % 4)])];
  return base;
}

}  // namespace

MicroWorld gen_microworld(const MicroWorldSpec& spec) {
  if (spec.canvas < 16) throw std::runtime_error("microworld: canvas too small");
  if (spec.tasks.empty() || spec.shapes.empty())
    throw std::runtime_error("microworld: empty task or shape table");

  MicroWorld world;
  world.spec = spec;
  AffordanceDataset& ds = world.dataset;
  ds.provenance = "microworld";
  ds.composition = spec.composition;
  ds.tasks = spec.tasks;
  for (const ShapeArchetype& a : spec.shapes) ds.categories.push_back({a.category_id, a.name});

  std::array<int, 4> plan = stratum_plan(spec.composition);
  int next_image = 1;
  int next_ann = 1;
  std::map<int, std::vector<int>> task_images;  // task id -> image ids in gen order

  for (const TaskSpec& task : spec.tasks) {
    Rng rng(spec.seed ^ (uint64_t(task.id) * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
    for (int stratum = 0; stratum < 4; ++stratum) {
      SceneTag tag = SceneTag(stratum);
      for (int i = 0; i < plan[size_t(stratum)]; ++i) {
        bool built = false;
        for (int attempt = 0; attempt < spec.retry_budget && !built; ++attempt) {
          std::vector<int> cats = pick_categories(spec, task, tag, rng);
          std::vector<SceneShape> shapes;
          if (!place_shapes(spec, cats, rng, &shapes)) continue;
          Scene scene;
          scene.image_id = next_image;
          scene.h = spec.canvas;
          scene.w = spec.canvas;
          scene.shapes = std::move(shapes);
          world.scenes[scene.image_id] = std::move(scene);
          built = true;
        }
        if (!built) {
          ++world.skipped_scenes;
          continue;
        }
        const Scene& scene = world.scenes.at(next_image);
        ImageRecord img;
        img.id = next_image;
        img.h = scene.h;
        img.w = scene.w;
        std::ostringstream name;
        name << "images/img_";
        name.fill('0');
        name.width(6);
        name << next_image;
        img.file = name.str() + ".png";
        ds.images.push_back(std::move(img));
        for (const SceneShape& s : scene.shapes) {
          AnnotationRecord a;
          a.id = next_ann++;
          a.image_id = next_image;
          a.category_id = s.category_id;
          a.box = shape_box(s, scene.h, scene.w);
          a.mask_rle = rle_encode(shape_mask(s, kind_of(spec, s.category_id), scene.h, scene.w));
          ds.annotations.push_back(std::move(a));
        }
        task_images[task.id].push_back(next_image);
        ++next_image;
      }
    }
  }

  // Authoritative tags and targets come from the shared classification
  // rule, run over a detection view of everything generated.
  DetectionDb db;
  db.categories = ds.categories;
  db.images = ds.images;
  db.annotations = ds.annotations;
  db.build_index();

  for (const TaskSpec& task : spec.tasks) {
    Rng rng(spec.seed ^ (uint64_t(task.id) * 0x6c62272e07bb0142ull + 0x3243f6a8885a308dull));
    TaskData td;
    td.task_id = task.id;
    std::vector<int> ids = task_images[task.id];
    std::array<int, 4> filled{};
    for (int image_id : ids) {
      TaskView v = classify_image_for_task(db, image_id, task);
      TaskImageEntry e;
      e.image_id = image_id;
      e.tag = v.tag;
      e.target_annotation_ids = v.target_annotation_ids;
      e.target_category = v.target_category;
      ++filled[size_t(int(v.tag))];
      td.entries.push_back(std::move(e));
    }
    for (int s = 0; s < 4; ++s)
      td.report.push_back({SceneTag(s), plan[size_t(s)], filled[size_t(s)]});
    rng.shuffle(ids);
    int train_n = std::min<int>(spec.composition.train_per_task, int(ids.size()));
    for (int i = 0; i < int(ids.size()); ++i) {
      if (i < train_n) td.train_images.push_back(ids[size_t(i)]);
      else td.test_images.push_back(ids[size_t(i)]);
    }
    ds.task_data.push_back(std::move(td));
  }
  ds.build_index();
  return world;
}

Image render_scene(const Scene& scene, const MicroWorldSpec& spec) {
  Image img;
  img.h = scene.h;
  img.w = scene.w;
  img.px.assign(size_t(scene.h) * size_t(scene.w) * 3, 0);
  for (int y = 0; y < scene.h; ++y) {
    for (int x = 0; x < scene.w; ++x) {
      double bg = 0.93 - 0.05 * double(y) / scene.h - 0.03 * double(x) / scene.w;
      double r = bg, g = bg, b = bg;
      for (const SceneShape& s : scene.shapes) {
        if (point_in_shape(s, kind_of(spec, s.category_id), x + 0.5, y + 0.5)) {
          const auto& rgb = archetype_of(spec, s.category_id).rgb;
          r = rgb[0];
          g = rgb[1];
          b = rgb[2];
        }
      }
      size_t off = (size_t(y) * size_t(scene.w) + size_t(x)) * 3;
      // Quantize to 8-bit levels so a PNG round trip is bit exact.
      img.px[off] = std::round(r * 255.0) / 255.0;
      img.px[off + 1] = std::round(g * 255.0) / 255.0;
      img.px[off + 2] = std::round(b * 255.0) / 255.0;
    }
  }
  return img;
}

Scene augment_scene(const Scene& scene, const MicroWorldSpec& spec, Rng& rng) {
  (void)spec;
  static const int kCanvas[3] = {48, 64, 80};
  int canvas = kCanvas[rng.uniform_int(3)];
  double scale = double(canvas) / double(scene.h);
  Scene out;
  out.image_id = scene.image_id;
  out.h = canvas;
  out.w = canvas;
  for (const SceneShape& s : scene.shapes)
    out.shapes.push_back({s.category_id, s.cx * scale, s.cy * scale, s.r * scale});

  if (canvas > 48 && rng.bernoulli(0.5)) {
    int ox = int(rng.uniform_int(uint64_t(canvas - 48) + 1));
    int oy = int(rng.uniform_int(uint64_t(canvas - 48) + 1));
    std::vector<SceneShape> kept;
    for (const SceneShape& s : out.shapes) {
      if (s.cx - s.r >= ox && s.cx + s.r <= ox + 48 && s.cy - s.r >= oy && s.cy + s.r <= oy + 48)
        kept.push_back({s.category_id, s.cx - ox, s.cy - oy, s.r});
    }
    out.shapes = std::move(kept);
    out.h = 48;
    out.w = 48;
  }
  return out;
}

const Scene& MicroWorld::scene(int image_id) const {
  auto it = scenes.find(image_id);
  if (it == scenes.end()) throw std::runtime_error("microworld: no scene for image id");
  return it->second;
}

Image MicroWorld::render(int image_id) const { return render_scene(scene(image_id), spec); }

void MicroWorld::save(const std::string& dir, bool write_images) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  dataset.save(dir + "/dataset.json");

  ojson root;
  root["skipped_scenes"] = skipped_scenes;
  ojson spec_j;
  spec_j["canvas"] = spec.canvas;
  spec_j["min_radius"] = spec.min_radius;
  spec_j["max_radius"] = spec.max_radius;
  spec_j["margin"] = spec.margin;
  spec_j["max_distractors"] = spec.max_distractors;
  spec_j["retry_budget"] = spec.retry_budget;
  spec_j["seed"] = spec.seed;
  spec_j["shapes"] = ojson::array();
  for (const ShapeArchetype& a : spec.shapes) {
    spec_j["shapes"].push_back(ojson{{"category", a.category_id},
                                     {"name", a.name},
                                     {"kind", int(a.kind)},
                                     {"rgb", {a.rgb[0], a.rgb[1], a.rgb[2]}}});
  }
  root["spec"] = std::move(spec_j);
  root["scenes"] = ojson::array();
  for (const auto& [id, sc] : scenes) {
    ojson js;
    js["image"] = id;
    js["h"] = sc.h;
    js["w"] = sc.w;
    js["shapes"] = ojson::array();
    for (const SceneShape& s : sc.shapes)
      js["shapes"].push_back(
          ojson{{"category", s.category_id}, {"cx", s.cx}, {"cy", s.cy}, {"r", s.r}});
    root["scenes"].push_back(std::move(js));
  }
  write_text_file(dir + "/scenes.json", root.dump(2) + "\n");

  if (write_images) {
    fs::create_directories(dir + "/images");
    for (const ImageRecord& img : dataset.images) write_png(dir + "/" + img.file, render(img.id));
  }
}

MicroWorld MicroWorld::load(const std::string& dir) {
  MicroWorld world;
  world.dataset = AffordanceDataset::load(dir + "/dataset.json");

  std::ifstream in(dir + "/scenes.json");
  if (!in) throw std::runtime_error("cannot open '" + dir + "/scenes.json'");
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("scenes.json is not valid JSON: " + std::string(e.what()));
  }
  world.skipped_scenes = root.at("skipped_scenes").get<int>();
  const auto& spec_j = root.at("spec");
  world.spec.canvas = spec_j.at("canvas").get<int>();
  world.spec.min_radius = spec_j.at("min_radius").get<double>();
  world.spec.max_radius = spec_j.at("max_radius").get<double>();
  world.spec.margin = spec_j.at("margin").get<double>();
  world.spec.max_distractors = spec_j.at("max_distractors").get<int>();
  world.spec.retry_budget = spec_j.at("retry_budget").get<int>();
  world.spec.seed = spec_j.at("seed").get<uint64_t>();
  for (const auto& ja : spec_j.at("shapes")) {
    ShapeArchetype a;
    a.category_id = ja.at("category").get<int>();
    a.name = ja.at("name").get<std::string>();
    a.kind = ShapeKind(ja.at("kind").get<int>());
    for (int i = 0; i < 3; ++i) a.rgb[size_t(i)] = ja.at("rgb")[size_t(i)].get<double>();
    world.spec.shapes.push_back(std::move(a));
  }
  world.spec.composition = world.dataset.composition;
  world.spec.tasks = world.dataset.tasks;
  for (const auto& js : root.at("scenes")) {
    Scene sc;
    sc.image_id = js.at("image").get<int>();
    sc.h = js.at("h").get<int>();
    sc.w = js.at("w").get<int>();
    for (const auto& js2 : js.at("shapes")) {
      SceneShape s;
      s.category_id = js2.at("category").get<int>();
      s.cx = js2.at("cx").get<double>();
      s.cy = js2.at("cy").get<double>();
      s.r = js2.at("r").get<double>();
      sc.shapes.push_back(s);
    }
    world.scenes[sc.image_id] = std::move(sc);
  }
  return world;
}

}  // namespace affr
