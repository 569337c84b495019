#include "affr/evalkit.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "affr/util.hpp"

namespace affr {

namespace {

double pair_iou(const EvalPrediction& p, const EvalGt& g, EvalKind kind) {
  if (kind == EvalKind::kBox) return box_iou(p.box, g.box);
  return mask_iou(p.mask, g.mask);
}

// Greedy matching in descending score order; returns per-prediction hit
// flags aligned to the score-sorted order.
struct Matched {
  std::vector<int> order;  // indexes into preds, score descending
  std::vector<bool> hit;
};

Matched greedy_match(const std::vector<EvalPrediction>& preds, const std::vector<EvalGt>& gts,
                     EvalKind kind, double iou_thresh) {
  Matched m;
  m.order.resize(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) m.order[i] = int(i);
  std::stable_sort(m.order.begin(), m.order.end(),
                   [&](int a, int b) { return preds[size_t(a)].score > preds[size_t(b)].score; });
  m.hit.assign(preds.size(), false);
  std::vector<bool> gt_taken(gts.size(), false);
  for (size_t k = 0; k < m.order.size(); ++k) {
    const EvalPrediction& p = preds[size_t(m.order[k])];
    int best_gt = -1;
    double best_iou = 0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[g] || gts[g].image_id != p.image_id) continue;
      double iou = pair_iou(p, gts[g], kind);
      if (iou >= iou_thresh && iou > best_iou) {
        best_iou = iou;
        best_gt = int(g);
      }
    }
    if (best_gt >= 0) {
      gt_taken[size_t(best_gt)] = true;
      m.hit[k] = true;
    }
  }
  return m;
}

}  // namespace

double ap50(std::vector<EvalPrediction> preds, const std::vector<EvalGt>& gts, EvalKind kind,
            double iou_thresh) {
  if (gts.empty()) return preds.empty() ? 1.0 : 0.0;
  if (preds.empty()) return 0.0;

  Matched m = greedy_match(preds, gts, kind, iou_thresh);
  size_t n = preds.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (size_t k = 0; k < n; ++k) {
    if (m.hit[k]) ++tp;
    precision[k] = double(tp) / double(k + 1);
    recall[k] = double(tp) / double(gts.size());
  }
  // All-point interpolation: running maximum of precision from the right,
  // then the area under the precision-recall steps.
  for (size_t k = n - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0, prev_recall = 0;
  for (size_t k = 0; k < n; ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

double map_over_tasks(const std::vector<double>& per_task_ap) {
  if (per_task_ap.empty()) throw std::runtime_error("map_over_tasks: no tasks");
  double s = 0;
  for (double ap : per_task_ap) s += ap;
  return s / double(per_task_ap.size());
}

std::vector<SweepPoint> threshold_sweep(const std::vector<EvalPrediction>& preds,
                                        const std::vector<EvalGt>& gts, EvalKind kind,
                                        const std::vector<double>& thresholds,
                                        double iou_thresh) {
  for (size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1])
      throw std::runtime_error("threshold_sweep: thresholds must ascend");

  std::vector<SweepPoint> out;
  for (double t : thresholds) {
    std::vector<EvalPrediction> kept;
    for (const EvalPrediction& p : preds)
      if (p.score >= t) kept.push_back(p);
    SweepPoint pt;
    pt.threshold = t;
    pt.retained = int(kept.size());
    int tp = 0;
    if (!kept.empty() && !gts.empty()) {
      Matched m = greedy_match(kept, gts, kind, iou_thresh);
      for (bool h : m.hit) tp += h ? 1 : 0;
    }
    pt.precision = kept.empty() ? 1.0 : double(tp) / double(kept.size());
    pt.recall = gts.empty() ? 1.0 : double(tp) / double(gts.size());
    pt.f1 = (pt.precision + pt.recall) > 0
                ? 2 * pt.precision * pt.recall / (pt.precision + pt.recall)
                : 0.0;
    out.push_back(pt);
  }
  return out;
}

std::vector<EliminationRound> elimination_run(const Scene& start, const SceneScorer& scorer,
                                              int rounds, double accept_threshold) {
  std::vector<EliminationRound> transcript;
  Scene scene = start;
  for (int r = 1; r <= rounds; ++r) {
    EliminationRound round;
    round.round = r;
    round.remaining = int(scene.shapes.size());
    if (!scene.shapes.empty()) {
      std::vector<double> scores = scorer(scene);
      if (scores.size() != scene.shapes.size())
        throw std::runtime_error("elimination_run: scorer returned a wrong-sized score list");
      int best = -1;
      for (size_t i = 0; i < scores.size(); ++i)
        if (scores[i] >= accept_threshold && (best < 0 || scores[i] > scores[size_t(best)]))
          best = int(i);
      if (best >= 0) {
        round.selected = true;
        round.shape_index = best;
        round.category_id = scene.shapes[size_t(best)].category_id;
        round.score = scores[size_t(best)];
        scene.shapes.erase(scene.shapes.begin() + best);
        round.remaining = int(scene.shapes.size());
      }
    }
    transcript.push_back(round);
  }
  return transcript;
}

void EvalReport::save(const std::string& path) const {
  nlohmann::ordered_json root;
  root["map_box"] = map_box;
  root["map_mask"] = map_mask;
  root["tasks"] = nlohmann::ordered_json::array();
  for (const TaskEval& t : tasks) {
    root["tasks"].push_back(nlohmann::ordered_json{{"task", t.task_id},
                                                   {"ap_box", t.ap_box},
                                                   {"ap_mask", t.ap_mask},
                                                   {"images", t.n_images},
                                                   {"gt", t.n_gt}});
  }
  if (!sweep.empty()) {
    root["sweep"] = nlohmann::ordered_json::array();
    for (const SweepPoint& p : sweep) {
      root["sweep"].push_back(nlohmann::ordered_json{{"threshold", p.threshold},
                                                     {"retained", p.retained},
                                                     {"precision", p.precision},
                                                     {"recall", p.recall},
                                                     {"f1", p.f1}});
    }
  }
  write_text_file(path, root.dump(2) + "\n");
}

std::string EvalReport::summary_line() const {
  std::ostringstream os;
  os << "map_box=" << fmt_real(map_box) << " map_mask=" << fmt_real(map_mask)
     << " tasks=" << tasks.size();
  return os.str();
}

}  // namespace affr
