#include "affr/dataforge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "affr/util.hpp"

namespace affr {

namespace {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& ctx, const std::string& what) {
  throw std::runtime_error(ctx + ": " + what);
}

const json& require_field(const json& j, const char* key, const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end()) fail(ctx, std::string("missing field '") + key + "'");
  return *it;
}

int require_int(const json& j, const char* key, const std::string& ctx) {
  const json& f = require_field(j, key, ctx);
  if (!f.is_number_integer()) fail(ctx, std::string("field '") + key + "' is not an integer");
  return f.get<int>();
}

double require_num(const json& j, size_t idx, const std::string& ctx) {
  if (idx >= j.size() || !j[idx].is_number()) fail(ctx, "expected a number");
  return j[idx].get<double>();
}

std::string require_str(const json& j, const char* key, const std::string& ctx) {
  const json& f = require_field(j, key, ctx);
  if (!f.is_string()) fail(ctx, std::string("field '") + key + "' is not a string");
  return f.get<std::string>();
}

std::string idx_ctx(const char* array, size_t i) {
  std::ostringstream os;
  os << array << "[" << i << "]";
  return os.str();
}

// Converts a COCO segmentation (polygon list or uncompressed RLE) to this
// project's RLE; absent segmentation falls back to the bbox rectangle.
std::vector<int64_t> parse_segmentation(const json& ann, int h, int w, const Box& norm_box,
                                        const std::string& ctx) {
  auto it = ann.find("segmentation");
  if (it == ann.end() || it->is_null()) {
    Corners c = box_corners(norm_box);
    std::vector<double> poly = {c.x1 * w, c.y1 * h, c.x2 * w, c.y1 * h,
                                c.x2 * w, c.y2 * h, c.x1 * w, c.y2 * h};
    return rle_encode(polygon_to_mask(poly, h, w));
  }
  const json& seg = *it;
  if (seg.is_object()) {
    const json& size = require_field(seg, "size", ctx);
    if (!size.is_array() || size.size() != 2) fail(ctx, "RLE size must be [h,w]");
    if (size[0].get<int>() != h || size[1].get<int>() != w)
      fail(ctx, "RLE size disagrees with the image size");
    const json& counts = require_field(seg, "counts", ctx);
    if (!counts.is_array()) fail(ctx, "RLE counts must be an integer array");
    std::vector<int64_t> rle;
    int64_t total = 0;
    for (const auto& c : counts) {
      if (!c.is_number_integer() || c.get<int64_t>() < 0) fail(ctx, "RLE counts must be >= 0");
      rle.push_back(c.get<int64_t>());
      total += rle.back();
    }
    if (total != int64_t(h) * int64_t(w)) fail(ctx, "RLE counts do not sum to h*w");
    return rle;
  }
  if (seg.is_array()) {
    Mask acc;
    acc.h = h;
    acc.w = w;
    acc.v.assign(size_t(h) * size_t(w), 0);
    if (seg.empty()) fail(ctx, "empty polygon list");
    for (const auto& poly_j : seg) {
      if (!poly_j.is_array() || poly_j.size() < 6 || poly_j.size() % 2 != 0)
        fail(ctx, "polygon needs an even count of >= 6 coordinates");
      std::vector<double> poly;
      for (size_t k = 0; k < poly_j.size(); ++k) poly.push_back(require_num(poly_j, k, ctx));
      Mask m = polygon_to_mask(poly, h, w);
      for (size_t k = 0; k < m.v.size(); ++k) acc.v[k] = acc.v[k] | m.v[k];
    }
    return rle_encode(acc);
  }
  fail(ctx, "segmentation must be a polygon list or an RLE object");
}

}  // namespace

const char* scene_tag_name(SceneTag tag) {
  switch (tag) {
    case SceneTag::kMCMO: return "MCMO";
    case SceneTag::kSCMO: return "SCMO";
    case SceneTag::kSCSO: return "SCSO";
    case SceneTag::kOthers: return "Others";
  }
  return "Others";
}

SceneTag scene_tag_from_name(const std::string& name) {
  if (name == "MCMO") return SceneTag::kMCMO;
  if (name == "SCMO") return SceneTag::kSCMO;
  if (name == "SCSO") return SceneTag::kSCSO;
  if (name == "Others") return SceneTag::kOthers;
  throw std::runtime_error("unknown scene tag '" + name + "'");
}

Mask AnnotationRecord::decode_mask(int h, int w) const { return rle_decode(mask_rle, h, w); }

void DetectionDb::build_index() {
  image_pos.clear();
  category_pos.clear();
  image_annotations.clear();
  for (size_t i = 0; i < categories.size(); ++i) {
    if (!category_pos.emplace(categories[i].id, int(i)).second)
      fail(idx_ctx("categories", i), "duplicate category id");
  }
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].h <= 0 || images[i].w <= 0) fail(idx_ctx("images", i), "non-positive size");
    if (!image_pos.emplace(images[i].id, int(i)).second)
      fail(idx_ctx("images", i), "duplicate image id");
  }
  std::map<int, size_t> ann_seen;
  for (size_t i = 0; i < annotations.size(); ++i) {
    const AnnotationRecord& a = annotations[i];
    std::string ctx = idx_ctx("annotations", i);
    if (!ann_seen.emplace(a.id, i).second) {
      std::ostringstream os;
      os << "duplicate annotation id " << a.id;
      fail(ctx, os.str());
    }
    if (image_pos.find(a.image_id) == image_pos.end()) {
      std::ostringstream os;
      os << "unknown image id " << a.image_id;
      fail(ctx, os.str());
    }
    if (category_pos.find(a.category_id) == category_pos.end()) {
      std::ostringstream os;
      os << "unknown category id " << a.category_id;
      fail(ctx, os.str());
    }
    for (double v : a.box)
      if (!std::isfinite(v)) fail(ctx, "non-finite box");
    image_annotations[a.image_id].push_back(int(i));
  }
}

DetectionDb load_detection_db(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detection db '" + path + "'");
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw std::runtime_error("detection db '" + path + "' is not valid JSON: " + e.what());
  }

  DetectionDb db;
  const json& cats = require_field(root, "categories", "detection db");
  for (size_t i = 0; i < cats.size(); ++i) {
    std::string ctx = idx_ctx("categories", i);
    CategoryEntry c;
    c.id = require_int(cats[i], "id", ctx);
    c.name = require_str(cats[i], "name", ctx);
    db.categories.push_back(std::move(c));
  }
  const json& imgs = require_field(root, "images", "detection db");
  for (size_t i = 0; i < imgs.size(); ++i) {
    std::string ctx = idx_ctx("images", i);
    ImageRecord r;
    r.id = require_int(imgs[i], "id", ctx);
    r.h = require_int(imgs[i], "height", ctx);
    r.w = require_int(imgs[i], "width", ctx);
    if (r.h <= 0 || r.w <= 0) fail(ctx, "non-positive image size");
    if (imgs[i].contains("file_name")) r.file = require_str(imgs[i], "file_name", ctx);
    db.images.push_back(std::move(r));
  }

  std::map<int, int> image_pos;
  for (size_t i = 0; i < db.images.size(); ++i) image_pos[db.images[i].id] = int(i);

  const json& anns = require_field(root, "annotations", "detection db");
  for (size_t i = 0; i < anns.size(); ++i) {
    std::string ctx = idx_ctx("annotations", i);
    AnnotationRecord a;
    a.id = require_int(anns[i], "id", ctx);
    a.image_id = require_int(anns[i], "image_id", ctx);
    a.category_id = require_int(anns[i], "category_id", ctx);
    auto ip = image_pos.find(a.image_id);
    if (ip == image_pos.end()) {
      std::ostringstream os;
      os << "unknown image id " << a.image_id;
      fail(ctx, os.str());
    }
    const ImageRecord& img = db.images[size_t(ip->second)];

    const json& bbox = require_field(anns[i], "bbox", ctx);
    if (!bbox.is_array() || bbox.size() != 4) fail(ctx, "bbox must be [x,y,w,h]");
    double x = require_num(bbox, 0, ctx), y = require_num(bbox, 1, ctx);
    double w = require_num(bbox, 2, ctx), h = require_num(bbox, 3, ctx);
    if (!(std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h)) || w <= 0 ||
        h <= 0)
      fail(ctx, "malformed bbox");
    if (x < -1e-9 || y < -1e-9 || x + w > img.w + 1e-9 || y + h > img.h + 1e-9)
      fail(ctx, "bbox extends outside the image");
    a.box = {(x + w / 2) / img.w, (y + h / 2) / img.h, w / img.w, h / img.h};
    a.mask_rle = parse_segmentation(anns[i], img.h, img.w, a.box, ctx);
    db.annotations.push_back(std::move(a));
  }
  db.build_index();
  return db;
}

TaskView classify_image_for_task(const DetectionDb& db, int image_id, const TaskSpec& task) {
  std::map<int, int> rank_of;  // category id -> rank
  for (const RankedCategory& rc : task.ranked) rank_of[rc.category_id] = rc.rank;

  TaskView view;
  auto it = db.image_annotations.find(image_id);
  if (it == db.image_annotations.end() && db.image_pos.find(image_id) == db.image_pos.end())
    throw std::runtime_error("classify_image_for_task: unknown image id");

  std::map<int, std::vector<int>> relevant;  // category id -> annotation ids
  int best_rank = 0;
  if (it != db.image_annotations.end()) {
    for (int pos : it->second) {
      const AnnotationRecord& a = db.annotations[size_t(pos)];
      auto r = rank_of.find(a.category_id);
      if (r == rank_of.end()) continue;
      relevant[a.category_id].push_back(a.id);
      if (best_rank == 0 || r->second < best_rank) {
        best_rank = r->second;
        view.target_category = a.category_id;
      } else if (r->second == best_rank && a.category_id < view.target_category) {
        view.target_category = a.category_id;
      }
    }
  }

  if (relevant.empty()) {
    view.tag = SceneTag::kOthers;
    return view;
  }
  size_t total = 0;
  for (const auto& kv : relevant) total += kv.second.size();
  if (relevant.size() >= 2) view.tag = SceneTag::kMCMO;
  else if (total >= 2) view.tag = SceneTag::kSCMO;
  else view.tag = SceneTag::kSCSO;
  view.target_rank = best_rank;
  view.target_annotation_ids = relevant[view.target_category];
  std::sort(view.target_annotation_ids.begin(), view.target_annotation_ids.end());
  return view;
}

namespace {

// Largest-remainder apportionment: counts sum exactly to total.
std::array<int, 4> stratum_counts(const CompositionConfig& cfg, int total) {
  std::array<double, 4> frac = {cfg.frac_mcmo, cfg.frac_scmo, cfg.frac_scso, cfg.frac_others};
  double fsum = frac[0] + frac[1] + frac[2] + frac[3];
  if (std::abs(fsum - 1.0) > 1e-9)
    throw std::runtime_error("composition fractions must sum to 1");
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

AffordanceDataset compose_affordance_dataset(const DetectionDb& db,
                                             const std::vector<TaskSpec>& table,
                                             const CompositionConfig& cfg, uint64_t seed) {
  for (const TaskSpec& t : table) {
    std::vector<int> ranks;
    for (const RankedCategory& rc : t.ranked) {
      if (db.category_pos.find(rc.category_id) == db.category_pos.end())
        throw std::runtime_error("task '" + t.verb + "' references an unknown category");
      ranks.push_back(rc.rank);
    }
    std::sort(ranks.begin(), ranks.end());
    for (size_t i = 0; i < ranks.size(); ++i)
      if (ranks[i] != int(i) + 1)
        throw std::runtime_error("task '" + t.verb + "' ranks are not gapless 1..m");
  }

  AffordanceDataset ds;
  ds.tasks = table;
  ds.categories = db.categories;
  ds.composition = cfg;

  std::array<int, 4> want = stratum_counts(cfg, cfg.images_per_task());
  std::vector<bool> image_used(db.images.size(), false);

  for (const TaskSpec& task : table) {
    TaskData td;
    td.task_id = task.id;
    Rng rng(seed ^ (uint64_t(task.id) * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));

    std::array<std::vector<int>, 4> buckets;  // image ids per stratum
    std::map<int, TaskView> views;
    for (const ImageRecord& img : db.images) {
      TaskView v = classify_image_for_task(db, img.id, task);
      buckets[size_t(int(v.tag))].push_back(img.id);
      views[img.id] = std::move(v);
    }

    std::vector<int> selected;
    for (int s = 0; s < 4; ++s) {
      auto& bucket = buckets[size_t(s)];
      rng.shuffle(bucket);
      int take = std::min<int>(want[size_t(s)], int(bucket.size()));
      StratumReport rep;
      rep.tag = SceneTag(s);
      rep.requested = want[size_t(s)];
      rep.filled = take;
      td.report.push_back(rep);
      for (int i = 0; i < take; ++i) selected.push_back(bucket[size_t(i)]);
    }

    rng.shuffle(selected);
    for (int image_id : selected) {
      const TaskView& v = views[image_id];
      TaskImageEntry e;
      e.image_id = image_id;
      e.tag = v.tag;
      e.target_annotation_ids = v.target_annotation_ids;
      e.target_category = v.target_category;
      td.entries.push_back(std::move(e));
      image_used[size_t(db.image_pos.at(image_id))] = true;
    }
    int train_n = std::min<int>(cfg.train_per_task, int(selected.size()));
    for (int i = 0; i < int(selected.size()); ++i) {
      if (i < train_n) td.train_images.push_back(selected[size_t(i)]);
      else td.test_images.push_back(selected[size_t(i)]);
    }
    ds.task_data.push_back(std::move(td));
  }

  for (size_t i = 0; i < db.images.size(); ++i) {
    if (!image_used[i]) continue;
    ds.images.push_back(db.images[i]);
    auto it = db.image_annotations.find(db.images[i].id);
    if (it == db.image_annotations.end()) continue;
    for (int pos : it->second) ds.annotations.push_back(db.annotations[size_t(pos)]);
  }
  ds.build_index();
  return ds;
}

void AffordanceDataset::build_index() {
  image_pos.clear();
  annotation_pos.clear();
  category_pos.clear();
  task_pos.clear();
  image_annotations.clear();
  for (size_t i = 0; i < categories.size(); ++i) {
    if (!category_pos.emplace(categories[i].id, int(i)).second)
      fail(idx_ctx("categories", i), "duplicate category id");
  }
  for (size_t i = 0; i < tasks.size(); ++i) {
    if (!task_pos.emplace(tasks[i].id, int(i)).second)
      fail(idx_ctx("tasks", i), "duplicate task id");
    for (const RankedCategory& rc : tasks[i].ranked)
      if (category_pos.find(rc.category_id) == category_pos.end())
        fail(idx_ctx("tasks", i), "unknown category id in ranking");
  }
  for (size_t i = 0; i < images.size(); ++i) {
    if (!image_pos.emplace(images[i].id, int(i)).second)
      fail(idx_ctx("images", i), "duplicate image id");
  }
  for (size_t i = 0; i < annotations.size(); ++i) {
    const AnnotationRecord& a = annotations[i];
    std::string ctx = idx_ctx("annotations", i);
    if (!annotation_pos.emplace(a.id, int(i)).second) fail(ctx, "duplicate annotation id");
    if (image_pos.find(a.image_id) == image_pos.end()) fail(ctx, "unknown image id");
    if (category_pos.find(a.category_id) == category_pos.end()) fail(ctx, "unknown category id");
    image_annotations[a.image_id].push_back(int(i));
  }
  for (size_t i = 0; i < task_data.size(); ++i) {
    const TaskData& td = task_data[i];
    std::string ctx = idx_ctx("task_data", i);
    if (task_pos.find(td.task_id) == task_pos.end()) fail(ctx, "unknown task id");
    std::map<int, int> split;  // image id -> 0 train / 1 test
    for (int id : td.train_images) {
      if (image_pos.find(id) == image_pos.end()) fail(ctx, "train split references unknown image");
      if (!split.emplace(id, 0).second) fail(ctx, "image repeated inside the train split");
    }
    for (int id : td.test_images) {
      if (image_pos.find(id) == image_pos.end()) fail(ctx, "test split references unknown image");
      auto r = split.emplace(id, 1);
      if (!r.second) fail(ctx, "image appears in both train and test splits");
    }
    for (const TaskImageEntry& e : td.entries) {
      if (image_pos.find(e.image_id) == image_pos.end()) fail(ctx, "entry references unknown image");
      for (int ann : e.target_annotation_ids)
        if (annotation_pos.find(ann) == annotation_pos.end())
          fail(ctx, "entry references unknown annotation");
    }
  }
}

const ImageRecord& AffordanceDataset::image(int id) const {
  auto it = image_pos.find(id);
  if (it == image_pos.end()) throw std::runtime_error("unknown image id");
  return images[size_t(it->second)];
}

const AnnotationRecord& AffordanceDataset::annotation(int id) const {
  auto it = annotation_pos.find(id);
  if (it == annotation_pos.end()) throw std::runtime_error("unknown annotation id");
  return annotations[size_t(it->second)];
}

const CategoryEntry& AffordanceDataset::category(int id) const {
  auto it = category_pos.find(id);
  if (it == category_pos.end()) throw std::runtime_error("unknown category id");
  return categories[size_t(it->second)];
}

const TaskSpec& AffordanceDataset::task(int id) const {
  auto it = task_pos.find(id);
  if (it == task_pos.end()) throw std::runtime_error("unknown task id");
  return tasks[size_t(it->second)];
}

const TaskData& AffordanceDataset::data_for_task(int id) const {
  for (const TaskData& td : task_data)
    if (td.task_id == id) return td;
  throw std::runtime_error("no task data for task id");
}

void AffordanceDataset::save(const std::string& path) const {
  ojson root;
  root["format_version"] = 1;
  root["provenance"] = provenance;
  ojson comp;
  comp["frac_mcmo"] = composition.frac_mcmo;
  comp["frac_scmo"] = composition.frac_scmo;
  comp["frac_scso"] = composition.frac_scso;
  comp["frac_others"] = composition.frac_others;
  comp["train_per_task"] = composition.train_per_task;
  comp["test_per_task"] = composition.test_per_task;
  root["composition"] = std::move(comp);

  root["tasks"] = ojson::array();
  for (const TaskSpec& t : tasks) {
    ojson jt;
    jt["id"] = t.id;
    jt["verb"] = t.verb;
    jt["ranked"] = ojson::array();
    for (const RankedCategory& rc : t.ranked)
      jt["ranked"].push_back(ojson{{"category", rc.category_id}, {"rank", rc.rank}});
    root["tasks"].push_back(std::move(jt));
  }
  root["categories"] = ojson::array();
  for (const CategoryEntry& c : categories)
    root["categories"].push_back(ojson{{"id", c.id}, {"name", c.name}});
  root["images"] = ojson::array();
  for (const ImageRecord& r : images)
    root["images"].push_back(ojson{{"id", r.id}, {"h", r.h}, {"w", r.w}, {"file", r.file}});
  root["annotations"] = ojson::array();
  for (const AnnotationRecord& a : annotations) {
    ojson ja;
    ja["id"] = a.id;
    ja["image"] = a.image_id;
    ja["category"] = a.category_id;
    ja["box"] = ojson::array({a.box[0], a.box[1], a.box[2], a.box[3]});
    ja["rle"] = a.mask_rle;
    root["annotations"].push_back(std::move(ja));
  }
  root["task_data"] = ojson::array();
  for (const TaskData& td : task_data) {
    ojson jt;
    jt["task"] = td.task_id;
    jt["entries"] = ojson::array();
    for (const TaskImageEntry& e : td.entries) {
      ojson je;
      je["image"] = e.image_id;
      je["tag"] = scene_tag_name(e.tag);
      je["targets"] = e.target_annotation_ids;
      je["target_category"] = e.target_category;
      jt["entries"].push_back(std::move(je));
    }
    jt["train"] = td.train_images;
    jt["test"] = td.test_images;
    jt["report"] = ojson::array();
    for (const StratumReport& r : td.report)
      jt["report"].push_back(ojson{
          {"tag", scene_tag_name(r.tag)}, {"requested", r.requested}, {"filled", r.filled}});
    root["task_data"].push_back(std::move(jt));
  }
  write_text_file(path, root.dump(2) + "\n");
}

AffordanceDataset AffordanceDataset::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw std::runtime_error("dataset '" + path + "' is not valid JSON: " + e.what());
  }
  if (require_int(root, "format_version", "dataset") != 1)
    throw std::runtime_error("dataset '" + path + "' has an unsupported format_version");

  AffordanceDataset ds;
  ds.provenance = require_str(root, "provenance", "dataset");
  const json& comp = require_field(root, "composition", "dataset");
  ds.composition.frac_mcmo = require_field(comp, "frac_mcmo", "composition").get<double>();
  ds.composition.frac_scmo = require_field(comp, "frac_scmo", "composition").get<double>();
  ds.composition.frac_scso = require_field(comp, "frac_scso", "composition").get<double>();
  ds.composition.frac_others = require_field(comp, "frac_others", "composition").get<double>();
  ds.composition.train_per_task = require_int(comp, "train_per_task", "composition");
  ds.composition.test_per_task = require_int(comp, "test_per_task", "composition");

  const json& jts = require_field(root, "tasks", "dataset");
  for (size_t i = 0; i < jts.size(); ++i) {
    std::string ctx = idx_ctx("tasks", i);
    TaskSpec t;
    t.id = require_int(jts[i], "id", ctx);
    t.verb = require_str(jts[i], "verb", ctx);
    for (const auto& jr : require_field(jts[i], "ranked", ctx)) {
      RankedCategory rc;
      rc.category_id = require_int(jr, "category", ctx);
      rc.rank = require_int(jr, "rank", ctx);
      t.ranked.push_back(rc);
    }
    ds.tasks.push_back(std::move(t));
  }
  const json& jcs = require_field(root, "categories", "dataset");
  for (size_t i = 0; i < jcs.size(); ++i) {
    std::string ctx = idx_ctx("categories", i);
    ds.categories.push_back({require_int(jcs[i], "id", ctx), require_str(jcs[i], "name", ctx)});
  }
  const json& jis = require_field(root, "images", "dataset");
  for (size_t i = 0; i < jis.size(); ++i) {
    std::string ctx = idx_ctx("images", i);
    ImageRecord r;
    r.id = require_int(jis[i], "id", ctx);
    r.h = require_int(jis[i], "h", ctx);
    r.w = require_int(jis[i], "w", ctx);
    r.file = require_str(jis[i], "file", ctx);
    ds.images.push_back(std::move(r));
  }
  const json& jas = require_field(root, "annotations", "dataset");
  for (size_t i = 0; i < jas.size(); ++i) {
    std::string ctx = idx_ctx("annotations", i);
    AnnotationRecord a;
    a.id = require_int(jas[i], "id", ctx);
    a.image_id = require_int(jas[i], "image", ctx);
    a.category_id = require_int(jas[i], "category", ctx);
    const json& jb = require_field(jas[i], "box", ctx);
    if (!jb.is_array() || jb.size() != 4) fail(ctx, "box must have 4 numbers");
    for (int k = 0; k < 4; ++k) a.box[size_t(k)] = require_num(jb, size_t(k), ctx);
    for (const auto& c : require_field(jas[i], "rle", ctx)) a.mask_rle.push_back(c.get<int64_t>());
    ds.annotations.push_back(std::move(a));
  }
  const json& jds = require_field(root, "task_data", "dataset");
  for (size_t i = 0; i < jds.size(); ++i) {
    std::string ctx = idx_ctx("task_data", i);
    TaskData td;
    td.task_id = require_int(jds[i], "task", ctx);
    for (const auto& je : require_field(jds[i], "entries", ctx)) {
      TaskImageEntry e;
      e.image_id = require_int(je, "image", ctx);
      e.tag = scene_tag_from_name(require_str(je, "tag", ctx));
      for (const auto& t : require_field(je, "targets", ctx))
        e.target_annotation_ids.push_back(t.get<int>());
      e.target_category = require_int(je, "target_category", ctx);
      td.entries.push_back(std::move(e));
    }
    for (const auto& t : require_field(jds[i], "train", ctx)) td.train_images.push_back(t.get<int>());
    for (const auto& t : require_field(jds[i], "test", ctx)) td.test_images.push_back(t.get<int>());
    if (jds[i].contains("report")) {
      for (const auto& jr : jds[i]["report"]) {
        StratumReport r;
        r.tag = scene_tag_from_name(require_str(jr, "tag", ctx));
        r.requested = require_int(jr, "requested", ctx);
        r.filled = require_int(jr, "filled", ctx);
        td.report.push_back(r);
      }
    }
    ds.task_data.push_back(std::move(td));
  }
  ds.build_index();
  return ds;
}

}  // namespace affr
