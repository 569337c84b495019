// Synthetic micro-world: colored geometric shapes on a small canvas, with
// analytically exact boxes and masks.
//
// Eight color/shape categories and twelve verb-phrase tasks form a
// many-to-many affordance table (hand-authored rank fixture). Scenes are
// generated per task to hit the composition strata exactly: the generator
// draws relevant shapes for the requested tag plus optional distractor
// shapes from categories outside the task's ranking. Geometry is stored,
// so scenes re-render after object removal (elimination) and under
// augmentation (scale and crop, both exact re-renders; shapes that would
// be clipped by a crop are dropped rather than truncated).
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "affr/dataforge.hpp"
#include "affr/text.hpp"
#include "affr/util.hpp"

namespace affr {

enum class ShapeKind { kCircle, kSquare, kTriangle, kRing };

struct ShapeArchetype {
  int category_id = -1;
  std::string name;  // two words, e.g. "red circle"
  ShapeKind kind = ShapeKind::kCircle;
  std::array<double, 3> rgb{};
};

struct MicroWorldSpec {
  int canvas = 64;  // square canvas; multiple of the model patch size
  double min_radius = 7.0;
  double max_radius = 11.0;
  double margin = 2.0;  // minimum gap between shape bounding boxes
  int max_distractors = 2;
  int retry_budget = 64;
  uint64_t seed = 1;
  CompositionConfig composition;
  std::vector<ShapeArchetype> shapes;
  std::vector<TaskSpec> tasks;
};

// The built-in eight-category / twelve-task world. The rank table matches
// the shipped fixture file (assets/microworld_ranks.tsv).
MicroWorldSpec default_microworld_spec(uint64_t seed);

// Tab-separated rank fixture: task_verb <TAB> category_name <TAB> rank.
// Rows aggregate by verb in first-appearance order; ranks must come out
// gapless 1..m per task.
std::vector<TaskSpec> load_rank_table(const std::string& path,
                                      const std::vector<CategoryEntry>& categories);

// Vocabulary covering the world's text: the reserved tokens, verb-phrase
// words in task order, then category-name words column-wise (first words
// of every category before second words), all first-appearance deduped.
// Matches the shipped vocabulary asset line for line.
Vocabulary microworld_vocabulary(const MicroWorldSpec& spec);

// One placed shape: pixel center and half-extent of its bounding box.
struct SceneShape {
  int category_id = -1;
  double cx = 0, cy = 0, r = 0;
};

struct Scene {
  int image_id = -1;
  int h = 0, w = 0;
  std::vector<SceneShape> shapes;
};

// Pixel-center membership test rasterized over the canvas; exact for the
// four shape kinds (ring inner radius is 0.55 r).
Mask shape_mask(const SceneShape& s, ShapeKind kind, int h, int w);
// Normalized (cx,cy,w,h) of the shape's bounding box.
Box shape_box(const SceneShape& s, int h, int w);

struct MicroWorld {
  MicroWorldSpec spec;
  AffordanceDataset dataset;
  std::map<int, Scene> scenes;  // by image id
  int skipped_scenes = 0;

  const Scene& scene(int image_id) const;
  Image render(int image_id) const;

  // dataset.json, scenes.json, and images/*.png under dir.
  void save(const std::string& dir, bool write_images = true) const;
  static MicroWorld load(const std::string& dir);
};

// Builds all per-task scenes, tags them, applies the min-rank target rule,
// and splits train/test. Deterministic per spec.seed.
MicroWorld gen_microworld(const MicroWorldSpec& spec);

Image render_scene(const Scene& scene, const MicroWorldSpec& spec);

// Scale to a canvas in {48,64,80} and, with probability one half, crop a
// 48x48 window (only when the scaled canvas exceeds 48). Dropped shapes
// are those whose bounding box leaves the window. Geometry stays exact.
Scene augment_scene(const Scene& scene, const MicroWorldSpec& spec, Rng& rng);

}  // namespace affr
