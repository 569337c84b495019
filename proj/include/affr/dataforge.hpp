// Affordance dataset data model and assembly.
//
// A detection database (COCO-style annotation file) supplies images,
// categories, and instance annotations. A ranked task-object table assigns
// each task an ordered category preference. Composition tags classify each
// (task, image) pair: MCMO = two or more relevant categories present,
// SCMO = one relevant category with two or more instances, SCSO = exactly
// one relevant instance, Others = no relevant category. Targets of a
// (task, image) pair are exactly the instances of the best-ranked (lowest
// rank number) category present. The composition sampler fills the four
// strata at configured fractions and splits train/test disjointly.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "affr/boxes.hpp"
#include "affr/image.hpp"

namespace affr {

enum class SceneTag { kMCMO, kSCMO, kSCSO, kOthers };

const char* scene_tag_name(SceneTag tag);
SceneTag scene_tag_from_name(const std::string& name);

struct CategoryEntry {
  int id = -1;
  std::string name;
};

struct ImageRecord {
  int id = -1;
  int h = 0;
  int w = 0;
  std::string file;  // PNG path relative to the dataset file; may be empty
};

struct AnnotationRecord {
  int id = -1;
  int image_id = -1;
  int category_id = -1;
  Box box{};                      // normalized (cx,cy,w,h)
  std::vector<int64_t> mask_rle;  // at image resolution

  Mask decode_mask(int h, int w) const;
};

struct RankedCategory {
  int category_id = -1;
  int rank = 0;  // 1 = most preferred
};

struct TaskSpec {
  int id = -1;
  std::string verb;  // verb phrase, e.g. "drink water with"
  std::vector<RankedCategory> ranked;
};

// Detection database with by-id indexes; ids are unique but not required
// to be dense.
struct DetectionDb {
  std::vector<CategoryEntry> categories;
  std::vector<ImageRecord> images;
  std::vector<AnnotationRecord> annotations;

  std::map<int, int> image_pos;                  // image id -> index
  std::map<int, int> category_pos;               // category id -> index
  std::map<int, std::vector<int>> image_annotations;  // image id -> annotation indexes

  // Validates cross-references and uniqueness, then builds the maps.
  void build_index();
};

// Parses the documented COCO-style JSON annotation file. Boxes arrive as
// pixel [x,y,w,h] and are normalized; masks arrive as polygon or RLE
// segmentations. Malformed records are rejected with their array index.
DetectionDb load_detection_db(const std::string& path);

// Classification of one image against one task's ranked categories.
struct TaskView {
  SceneTag tag = SceneTag::kOthers;
  std::vector<int> target_annotation_ids;
  int target_category = -1;  // -1 when no targets
  int target_rank = 0;       // 0 when no targets
};

TaskView classify_image_for_task(const DetectionDb& db, int image_id, const TaskSpec& task);

struct TaskImageEntry {
  int image_id = -1;
  SceneTag tag = SceneTag::kOthers;
  std::vector<int> target_annotation_ids;
  int target_category = -1;
};

struct StratumReport {
  SceneTag tag = SceneTag::kOthers;
  int requested = 0;
  int filled = 0;
};

struct TaskData {
  int task_id = -1;
  std::vector<TaskImageEntry> entries;
  std::vector<int> train_images;  // image ids, disjoint from test_images
  std::vector<int> test_images;
  std::vector<StratumReport> report;
};

struct CompositionConfig {
  double frac_mcmo = 0.4;
  double frac_scmo = 0.4;
  double frac_scso = 0.1;
  double frac_others = 0.1;
  int train_per_task = 60;
  int test_per_task = 15;

  int images_per_task() const { return train_per_task + test_per_task; }
};

struct AffordanceDataset {
  std::vector<TaskSpec> tasks;
  std::vector<CategoryEntry> categories;
  std::vector<ImageRecord> images;
  std::vector<AnnotationRecord> annotations;
  std::vector<TaskData> task_data;
  CompositionConfig composition;
  std::string provenance;

  std::map<int, int> image_pos;
  std::map<int, int> annotation_pos;
  std::map<int, int> category_pos;
  std::map<int, int> task_pos;
  std::map<int, std::vector<int>> image_annotations;

  void build_index();

  const ImageRecord& image(int id) const;
  const AnnotationRecord& annotation(int id) const;
  const CategoryEntry& category(int id) const;
  const TaskSpec& task(int id) const;
  const TaskData& data_for_task(int id) const;

  // Deterministic UTF-8 JSON document; same content always serializes to
  // the same bytes.
  void save(const std::string& path) const;
  static AffordanceDataset load(const std::string& path);
};

// Samples each task's image multiset from the database at the configured
// stratum fractions (largest-remainder rounding, so counts sum exactly),
// applies the min-rank target rule, and splits train/test disjointly.
// Strata with too few candidates fill partially and report it.
AffordanceDataset compose_affordance_dataset(const DetectionDb& db,
                                             const std::vector<TaskSpec>& table,
                                             const CompositionConfig& cfg, uint64_t seed);

}  // namespace affr
