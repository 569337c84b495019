// Synthetic world generation: fixture tables, analytic geometry, exact
// re-rendering, and augmentation semantics.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "affr/microworld.hpp"
#include "affr/util.hpp"

using namespace affr;
namespace fs = std::filesystem;

namespace {

MicroWorldSpec small_spec(uint64_t seed) {
  MicroWorldSpec spec = default_microworld_spec(seed);
  spec.composition.train_per_task = 8;
  spec.composition.test_per_task = 4;
  return spec;
}

}  // namespace

TEST_CASE("built-in world has eight categories and twelve tasks") {
  MicroWorldSpec spec = default_microworld_spec(1);
  CHECK(spec.shapes.size() == 8);
  CHECK(spec.tasks.size() == 12);
  std::set<int> cats;
  for (const auto& s : spec.shapes) {
    cats.insert(s.category_id);
    CHECK(split_ws(s.name).size() == 2);
  }
  CHECK(cats.size() == 8);
  for (const TaskSpec& t : spec.tasks) {
    // Ranks are gapless 1..m and reference existing categories.
    std::set<int> ranks;
    for (const RankedCategory& rc : t.ranked) {
      ranks.insert(rc.rank);
      CHECK(cats.count(rc.category_id) == 1);
    }
    CHECK(int(ranks.size()) == int(t.ranked.size()));
    CHECK(*ranks.begin() == 1);
    CHECK(*ranks.rbegin() == int(t.ranked.size()));
  }
}

TEST_CASE("rank fixture file reproduces the embedded table") {
  MicroWorldSpec spec = default_microworld_spec(1);
  std::vector<CategoryEntry> cats;
  for (const auto& s : spec.shapes) cats.push_back({s.category_id, s.name});
  auto loaded = load_rank_table(std::string(AFFR_ASSET_DIR) + "/microworld_ranks.tsv", cats);
  REQUIRE(loaded.size() == spec.tasks.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].verb == spec.tasks[i].verb);
    REQUIRE(loaded[i].ranked.size() == spec.tasks[i].ranked.size());
    for (size_t j = 0; j < loaded[i].ranked.size(); ++j) {
      CHECK(loaded[i].ranked[j].category_id == spec.tasks[i].ranked[j].category_id);
      CHECK(loaded[i].ranked[j].rank == spec.tasks[i].ranked[j].rank);
    }
  }
}

TEST_CASE("vocabulary asset matches the synthesized vocabulary line for line") {
  MicroWorldSpec spec = default_microworld_spec(1);
  Vocabulary synth = microworld_vocabulary(spec);
  Vocabulary asset = Vocabulary::load(std::string(AFFR_ASSET_DIR) + "/vocabulary.txt");
  REQUIRE(synth.size() == asset.size());
  for (int i = 0; i < synth.size(); ++i) CHECK(synth.token(i) == asset.token(i));
  // Every task verb and category word tokenizes.
  for (const TaskSpec& t : spec.tasks)
    for (const std::string& w : split_ws(t.verb)) CHECK(synth.id_of(w).has_value());
  for (const auto& s : spec.shapes)
    for (const std::string& w : split_ws(s.name)) CHECK(synth.id_of(w).has_value());
}

TEST_CASE("shape masks agree with analytic areas") {
  SceneShape circle{1, 32.0, 32.0, 10.0};
  Mask cm = shape_mask(circle, ShapeKind::kCircle, 64, 64);
  double circle_area = 3.14159265358979 * 10.0 * 10.0;
  CHECK(std::abs(double(cm.area()) - circle_area) / circle_area < 0.02);

  Mask sm = shape_mask(circle, ShapeKind::kSquare, 64, 64);
  // Pixel centers inside [22,42]^2: 20x20 of them.
  CHECK(std::abs(double(sm.area()) - 400.0) / 400.0 < 0.02);

  Mask tm = shape_mask(circle, ShapeKind::kTriangle, 64, 64);
  CHECK(double(tm.area()) < double(sm.area()));  // triangle fits inside its box

  Mask rm = shape_mask(circle, ShapeKind::kRing, 64, 64);
  double ring_area = circle_area * (1.0 - 0.55 * 0.55);
  CHECK(std::abs(double(rm.area()) - ring_area) / ring_area < 0.05);
}

TEST_CASE("shape boxes normalize the bounding square") {
  SceneShape s{1, 16.0, 24.0, 8.0};
  Box b = shape_box(s, 64, 64);
  CHECK(b[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(b[1] == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(b[2] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(b[3] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("generated scenes fill the requested strata") {
  MicroWorld world = gen_microworld(small_spec(3));
  REQUIRE(world.dataset.task_data.size() == 12);
  for (const TaskData& td : world.dataset.task_data) {
    REQUIRE(td.report.size() == 4);
    for (const StratumReport& r : td.report) CHECK(r.filled == r.requested);
    CHECK(int(td.entries.size()) == 12);
    CHECK(int(td.train_images.size()) == 8);
    CHECK(int(td.test_images.size()) == 4);
  }
}

TEST_CASE("scene tags and targets verify against the stored annotations") {
  MicroWorld world = gen_microworld(small_spec(5));
  const AffordanceDataset& ds = world.dataset;
  for (const TaskData& td : ds.task_data) {
    const TaskSpec& task = ds.task(td.task_id);
    std::map<int, int> rank_of;
    for (const RankedCategory& rc : task.ranked) rank_of[rc.category_id] = rc.rank;
    for (const TaskImageEntry& e : td.entries) {
      // Recompute the best rank present from the raw annotations.
      int best_rank = 0;
      std::set<int> relevant_cats;
      int relevant_instances = 0;
      auto it = ds.image_annotations.find(e.image_id);
      std::vector<int> ann_pos = it == ds.image_annotations.end() ? std::vector<int>{} : it->second;
      for (int pos : ann_pos) {
        const AnnotationRecord& a = ds.annotations[size_t(pos)];
        auto r = rank_of.find(a.category_id);
        if (r == rank_of.end()) continue;
        relevant_cats.insert(a.category_id);
        ++relevant_instances;
        if (best_rank == 0 || r->second < best_rank) best_rank = r->second;
      }
      // Tag reflects the relevant category and instance counts.
      SceneTag want = SceneTag::kOthers;
      if (relevant_cats.size() >= 2) {
        want = SceneTag::kMCMO;
      } else if (relevant_cats.size() == 1) {
        want = relevant_instances >= 2 ? SceneTag::kSCMO : SceneTag::kSCSO;
      }
      CHECK(e.tag == want);
      // Targets are exactly the instances of the best-ranked category.
      std::vector<int> want_targets;
      for (int pos : ann_pos) {
        const AnnotationRecord& a = ds.annotations[size_t(pos)];
        auto r = rank_of.find(a.category_id);
        if (r != rank_of.end() && r->second == best_rank) want_targets.push_back(a.id);
      }
      if (best_rank == 0) want_targets.clear();
      CHECK(e.target_annotation_ids == want_targets);
    }
  }
}

TEST_CASE("stored geometry re-renders deterministically") {
  MicroWorld world = gen_microworld(small_spec(7));
  int image_id = world.dataset.task_data[0].train_images[0];
  Image a = world.render(image_id);
  Image b = world.render(image_id);
  CHECK(a.px == b.px);
  CHECK(a.h == world.spec.canvas);
}

TEST_CASE("rendering quantizes to PNG-representable values") {
  MicroWorld world = gen_microworld(small_spec(9));
  int image_id = world.dataset.task_data[0].train_images[0];
  Image img = world.render(image_id);
  fs::path p = fs::temp_directory_path() / "affr_mw_rt.png";
  write_png(p.string(), img);
  Image back = read_png(p.string());
  CHECK(back.px == img.px);
  fs::remove(p);
}

TEST_CASE("annotation masks match a fresh rasterization of the scene") {
  MicroWorld world = gen_microworld(small_spec(11));
  const AffordanceDataset& ds = world.dataset;
  const TaskData& td = ds.task_data[0];
  int image_id = td.train_images[0];
  const Scene& scene = world.scene(image_id);
  std::map<int, ShapeKind> kind_of;
  for (const auto& s : world.spec.shapes) kind_of[s.category_id] = s.kind;
  auto it = ds.image_annotations.find(image_id);
  REQUIRE(it != ds.image_annotations.end());
  REQUIRE(it->second.size() == scene.shapes.size());
  for (size_t i = 0; i < scene.shapes.size(); ++i) {
    const AnnotationRecord& a = ds.annotations[size_t(it->second[i])];
    const SceneShape& s = scene.shapes[i];
    Mask fresh = shape_mask(s, kind_of.at(s.category_id), scene.h, scene.w);
    CHECK(a.decode_mask(scene.h, scene.w).v == fresh.v);
    Box fb = shape_box(s, scene.h, scene.w);
    for (int c = 0; c < 4; ++c) CHECK(a.box[size_t(c)] == doctest::Approx(fb[size_t(c)]));
  }
}

TEST_CASE("removing a shape removes its pixels from the re-render") {
  MicroWorld world = gen_microworld(small_spec(13));
  // Find a scene with at least two shapes.
  for (const auto& [image_id, scene] : world.scenes) {
    if (scene.shapes.size() < 2) continue;
    Scene removed = scene;
    SceneShape gone = removed.shapes[0];
    removed.shapes.erase(removed.shapes.begin());
    Image img = render_scene(removed, world.spec);
    // Probe the removed center: unless another shape covers it, the pixel
    // reverts to background, which renders identically across scenes.
    bool covered = false;
    for (const SceneShape& s : removed.shapes)
      covered = covered || (std::abs(s.cx - gone.cx) <= s.r && std::abs(s.cy - gone.cy) <= s.r);
    if (covered) continue;
    Scene empty_scene{scene.image_id, scene.h, scene.w, {}};
    Image bg = render_scene(empty_scene, world.spec);
    int y = int(gone.cy), x = int(gone.cx);
    for (int c = 0; c < 3; ++c) CHECK(img.at(y, x)[c] == bg.at(y, x)[c]);
    return;
  }
  FAIL("no multi-shape scene found");
}

TEST_CASE("augmentation drops shapes instead of clipping them") {
  MicroWorldSpec spec = small_spec(15);
  MicroWorld world = gen_microworld(spec);
  Rng rng(99);
  int checked = 0;
  for (const auto& [image_id, scene] : world.scenes) {
    Scene aug = augment_scene(scene, spec, rng);
    CHECK(aug.shapes.size() <= scene.shapes.size());
    for (const SceneShape& s : aug.shapes) {
      // Every kept shape's bounding box lies fully inside the canvas.
      CHECK(s.cx - s.r >= -1e-9);
      CHECK(s.cy - s.r >= -1e-9);
      CHECK(s.cx + s.r <= double(aug.w) + 1e-9);
      CHECK(s.cy + s.r <= double(aug.h) + 1e-9);
    }
    CHECK((aug.w == 48 || aug.w == 64 || aug.w == 80));
    if (++checked == 40) break;
  }
  // Same stream position reproduces the same augmentation.
  const Scene& sc = world.scenes.begin()->second;
  Rng r1(7), r2(7);
  Scene a1 = augment_scene(sc, spec, r1);
  Scene a2 = augment_scene(sc, spec, r2);
  CHECK(a1.w == a2.w);
  REQUIRE(a1.shapes.size() == a2.shapes.size());
  for (size_t i = 0; i < a1.shapes.size(); ++i) {
    CHECK(a1.shapes[i].cx == a2.shapes[i].cx);
    CHECK(a1.shapes[i].r == a2.shapes[i].r);
  }
}

TEST_CASE("world save and load round-trip the dataset bytes") {
  MicroWorld world = gen_microworld(small_spec(17));
  fs::path dir = fs::temp_directory_path() / "affr_mw_save";
  fs::remove_all(dir);
  world.save(dir.string(), false);
  MicroWorld back = MicroWorld::load(dir.string());
  CHECK(back.scenes.size() == world.scenes.size());
  fs::path again = fs::temp_directory_path() / "affr_mw_save2";
  fs::remove_all(again);
  back.save(again.string(), false);
  CHECK(sha256_file((dir / "dataset.json").string()) ==
        sha256_file((again / "dataset.json").string()));
  CHECK(sha256_file((dir / "scenes.json").string()) ==
        sha256_file((again / "scenes.json").string()));
  int image_id = world.dataset.task_data[0].train_images[0];
  CHECK(back.render(image_id).px == world.render(image_id).px);
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("identical seeds reproduce the world, different seeds vary it") {
  MicroWorld a = gen_microworld(small_spec(21));
  MicroWorld b = gen_microworld(small_spec(21));
  MicroWorld c = gen_microworld(small_spec(22));
  int id = a.dataset.task_data[0].train_images[0];
  CHECK(a.render(id).px == b.render(id).px);
  CHECK(a.scenes.size() == b.scenes.size());
  bool same = true;
  for (const auto& [image_id, scene] : a.scenes) {
    auto it = c.scenes.find(image_id);
    if (it == c.scenes.end() || it->second.shapes.size() != scene.shapes.size()) {
      same = false;
      break;
    }
    for (size_t i = 0; i < scene.shapes.size(); ++i)
      same = same && it->second.shapes[i].cx == scene.shapes[i].cx;
  }
  CHECK_FALSE(same);
}
