// Detection evaluation: AP@0.5 over preference-ranked predictions,
// threshold sweeps, and the iterative elimination procedure.
//
// Matching is greedy in descending score order (ties by prediction index);
// each prediction takes the unmatched ground truth with the highest IoU at
// or above the threshold (ties by ground-truth index). AP uses all-point
// interpolation. Conventions are pinned: a task with no ground truths and
// no predictions scores AP 1, no ground truths with predictions scores 0,
// and precision over zero retained predictions is 1.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "affr/boxes.hpp"
#include "affr/microworld.hpp"

namespace affr {

enum class EvalKind { kBox, kMask };

struct EvalPrediction {
  int image_id = -1;
  double score = 0;
  Box box{};
  Mask mask;  // same resolution as the ground-truth mask; kMask only
};

struct EvalGt {
  int image_id = -1;
  Box box{};
  Mask mask;
};

double ap50(std::vector<EvalPrediction> preds, const std::vector<EvalGt>& gts, EvalKind kind,
            double iou_thresh = 0.5);

// Arithmetic mean; rejects an empty list.
double map_over_tasks(const std::vector<double>& per_task_ap);

struct SweepPoint {
  double threshold = 0;
  int retained = 0;
  double precision = 1;
  double recall = 0;
  double f1 = 0;
};

// Thresholds must ascend. Retained predictions have score >= threshold;
// matching and conventions as above, recall is 1 when no ground truths.
std::vector<SweepPoint> threshold_sweep(const std::vector<EvalPrediction>& preds,
                                        const std::vector<EvalGt>& gts, EvalKind kind,
                                        const std::vector<double>& thresholds,
                                        double iou_thresh = 0.5);

struct EliminationRound {
  int round = 0;          // 1-based
  bool selected = false;  // false when every score fell below the threshold
  int shape_index = -1;   // index into the scene at the start of the round
  int category_id = -1;
  double score = 0;
  int remaining = 0;  // candidates left after the round
};

// Scores for every shape of the scene, in scene order.
using SceneScorer = std::function<std::vector<double>(const Scene&)>;

// Each round scores the current scene, selects the best-scoring shape at
// or above the acceptance threshold (ties to the lowest index), removes
// it, and continues on the shrunken scene.
std::vector<EliminationRound> elimination_run(const Scene& start, const SceneScorer& scorer,
                                              int rounds, double accept_threshold);

struct TaskEval {
  int task_id = -1;
  double ap_box = 0;
  double ap_mask = 0;
  int n_images = 0;
  int n_gt = 0;
};

struct EvalReport {
  std::vector<TaskEval> tasks;
  double map_box = 0;
  double map_mask = 0;
  std::vector<SweepPoint> sweep;  // optional

  // Deterministic JSON document.
  void save(const std::string& path) const;
  std::string summary_line() const;
};

}  // namespace affr
