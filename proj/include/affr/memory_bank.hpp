// Clustered feature memory for noun-pronoun distillation.
//
// The bank keeps one fixed-capacity queue of teacher noun features per
// task. Queues fill in arrival order; once full, an update appends the new
// feature after evicting the existing entry nearest to it in Euclidean
// distance (ties evict the lowest index). K-means over a queue yields the
// per-task prototype centers; the student's pronoun feature is replaced by
// the nearest center. Centers go stale on every queue update and must be
// recomputed before selection. All storage is plain doubles; gradients
// never reach the bank.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "affr/autodiff.hpp"
#include "affr/text.hpp"

namespace affr {

struct KMeansResult {
  std::vector<std::vector<double>> centers;  // k rows
  std::vector<int> assign;                   // per point, nearest-center index
  double inertia = 0.0;                      // sum of squared point-center distances
  std::vector<double> inertia_trace;         // per Lloyd pass plus the final value; non-increasing
  int iterations = 0;
};

// Lloyd iterations with farthest-first seeding (first pick uniform under
// the seed, each next pick maximizes distance to the chosen set, ties to
// the lowest index). Empty clusters re-seed from the point farthest from
// its assigned center. Stops after 100 iterations or when inertia improves
// by less than 1e-6. Requires 1 <= k <= points.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, uint64_t seed);

// Euclidean-nearest center; ties select the lowest index. Rejects an empty
// center list.
std::pair<int, std::vector<double>> select_prototype(
    const std::vector<double>& pron, const std::vector<std::vector<double>>& centers);

// Mean of the feature rows inside each noun span, then the arithmetic mean
// over spans. Rejects empty span lists and out-of-range rows.
std::vector<double> extract_noun_feature(const ad::Var& text_features,
                                         const std::vector<TokenSpan>& noun_spans);

class MemoryBank {
 public:
  MemoryBank(int n_task, int n_mem, int d, int k);

  int n_task() const { return n_task_; }
  int n_mem() const { return n_mem_; }
  int dim() const { return d_; }
  int k() const { return k_; }

  bool full(int task) const;
  int queue_size(int task) const;
  const std::vector<std::vector<double>>& queue(int task) const;

  // Appends f; evicts the nearest existing entry once the queue is full.
  // Marks the task's centers stale.
  void update(int task, const std::vector<double>& f);

  void recluster(int task, uint64_t seed);
  // Reclusters every non-empty queue; task index folds into the seed.
  void recluster_all(uint64_t seed);

  bool centers_fresh(int task) const;
  // Rejects stale or absent centers.
  const std::vector<std::vector<double>>& centers(int task) const;

  // Flat named arrays for checkpointing. Import validates the dimensions
  // against this bank's configuration.
  std::map<std::string, std::vector<double>> export_arrays() const;
  void import_arrays(const std::map<std::string, std::vector<double>>& arrays);

 private:
  struct TaskBank {
    std::vector<std::vector<double>> queue;
    std::vector<std::vector<double>> centers;
    bool fresh = false;
  };

  void check_task(int task) const;

  int n_task_, n_mem_, d_, k_;
  std::vector<TaskBank> tasks_;
};

}  // namespace affr
