#include "affr/matching.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace affr {

double assignment_cost(const std::vector<std::vector<double>>& cost,
                       const std::vector<int>& perm) {
  double total = 0.0;
  for (size_t i = perm.size(); i-- > 0;) total = cost[i][size_t(perm[i])] + total;
  return total;
}

namespace {

void validate_square(const std::vector<std::vector<double>>& cost) {
  size_t n = cost.size();
  if (n == 0) throw std::runtime_error("assignment on an empty cost matrix");
  for (const auto& row : cost) {
    if (row.size() != n) throw std::runtime_error("assignment cost matrix is not square");
    for (double v : row)
      if (!std::isfinite(v)) throw std::runtime_error("assignment cost matrix has a non-finite entry");
  }
}

// Exact solver: over column subsets, g[mask] is the optimal cost of
// assigning rows popcount(mask)..n-1 to the columns outside mask, with the
// sum folded from the last row backward. Reconstruction scans columns in
// ascending order and extends with exact float equality, which some column
// satisfies by construction; that yields the lexicographically smallest
// optimal permutation.
Assignment solve_exact(const std::vector<std::vector<double>>& cost) {
  int n = int(cost.size());
  uint32_t full = (1u << n) - 1u;
  std::vector<double> g(size_t(full) + 1, 0.0);
  // Process masks in decreasing popcount so g[mask | bit] is ready.
  {
    std::vector<uint32_t> order;
    order.reserve(size_t(full) + 1);
    for (int cnt = n; cnt >= 0; --cnt)
      for (uint32_t m = 0; m <= full; ++m)
        if (std::popcount(m) == cnt) order.push_back(m);
    for (uint32_t m : order) {
      int row = std::popcount(m);
      if (row == n) {
        g[m] = 0.0;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) {
        if (m & (1u << j)) continue;
        double v = cost[size_t(row)][size_t(j)] + g[m | (1u << j)];
        if (v < best) best = v;
      }
      g[m] = best;
    }
  }
  Assignment a;
  a.perm.assign(size_t(n), -1);
  uint32_t mask = 0;
  for (int row = 0; row < n; ++row) {
    int pick = -1;
    for (int j = 0; j < n; ++j) {
      if (mask & (1u << j)) continue;
      if (cost[size_t(row)][size_t(j)] + g[mask | (1u << j)] == g[mask]) {
        pick = j;
        break;
      }
    }
    if (pick < 0) {
      // Accumulated rounding prevented an exact extension; take the argmin.
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) {
        if (mask & (1u << j)) continue;
        double v = cost[size_t(row)][size_t(j)] + g[mask | (1u << j)];
        if (v < best) {
          best = v;
          pick = j;
        }
      }
    }
    a.perm[size_t(row)] = pick;
    mask |= (1u << pick);
  }
  a.total = g[0];
  return a;
}

// Shortest-augmenting-path solver for sizes past the exact-DP range.
Assignment solve_large(const std::vector<std::vector<double>>& cost) {
  int n = int(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(size_t(n) + 1, 0.0), v(size_t(n) + 1, 0.0);
  std::vector<int> p(size_t(n) + 1, 0), way(size_t(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(size_t(n) + 1, inf);
    std::vector<char> used(size_t(n) + 1, 0);
    do {
      used[size_t(j0)] = 1;
      int i0 = p[size_t(j0)], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[size_t(j)]) continue;
        double cur = cost[size_t(i0 - 1)][size_t(j - 1)] - u[size_t(i0)] - v[size_t(j)];
        if (cur < minv[size_t(j)]) {
          minv[size_t(j)] = cur;
          way[size_t(j)] = j0;
        }
        if (minv[size_t(j)] < delta) {
          delta = minv[size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[size_t(j)]) {
          u[size_t(p[size_t(j)])] += delta;
          v[size_t(j)] -= delta;
        } else {
          minv[size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[size_t(j0)] != 0);
    do {
      int j1 = way[size_t(j0)];
      p[size_t(j0)] = p[size_t(j1)];
      j0 = j1;
    } while (j0);
  }
  Assignment a;
  a.perm.assign(size_t(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[size_t(j)] > 0) a.perm[size_t(p[size_t(j)] - 1)] = j - 1;
  a.total = assignment_cost(cost, a.perm);
  return a;
}

}  // namespace

Assignment hungarian(const std::vector<std::vector<double>>& cost) {
  validate_square(cost);
  if (cost.size() <= 20) return solve_exact(cost);
  return solve_large(cost);
}

double token_match_cost_row(const std::vector<double>& p_span,
                            const std::vector<double>& logits, bool log_form) {
  if (p_span.size() != logits.size())
    throw std::runtime_error("token cost: span row and logit row differ in length");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0;
  for (double v : logits) z += std::exp(v - mx);
  double lz = std::log(z);
  double acc = 0;
  for (size_t k = 0; k < logits.size(); ++k) {
    if (p_span[k] == 0.0) continue;
    double logp = logits[k] - mx - lz;
    acc += p_span[k] * (log_form ? logp : std::exp(logp));
  }
  return -acc;
}

double binary_kl(double pt_pos, double pt_neg, double ps_pos, double ps_neg) {
  double qa = std::max(ps_pos, 1e-12), qb = std::max(ps_neg, 1e-12);
  double acc = 0;
  if (pt_pos > 0) acc += pt_pos * (std::log(pt_pos) - std::log(qa));
  if (pt_neg > 0) acc += pt_neg * (std::log(pt_neg) - std::log(qb));
  return acc;
}

std::vector<std::vector<double>> gt_match_cost(const PredictionValues& pred,
                                               const GroundTruthSet& gt, bool token_log_form) {
  size_t n = pred.boxes.size();
  if (gt.objects.size() > n)
    throw std::runtime_error("more ground-truth objects (" + std::to_string(gt.objects.size()) +
                             ") than queries (" + std::to_string(n) + ")");
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < gt.objects.size(); ++i) {
    const auto& obj = gt.objects[i];
    for (size_t j = 0; j < n; ++j) {
      double c = box_l1(obj.box, pred.boxes[j]) + box_giou_loss(obj.box, pred.boxes[j]) +
                 token_match_cost_row(obj.p_span, pred.token_logits[j], token_log_form);
      cost[i][j] = c;
    }
  }
  return cost;
}

Assignment match_to_gt(const PredictionValues& pred, const GroundTruthSet& gt,
                       bool token_log_form) {
  return hungarian(gt_match_cost(pred, gt, token_log_form));
}

Assignment match_teacher_student(const PredictionValues& teacher,
                                 const PredictionValues& student,
                                 const DistillMatchWeights& w) {
  size_t n = teacher.boxes.size();
  if (student.boxes.size() != n)
    throw std::runtime_error("teacher and student query counts differ");
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    auto [tp, tn] = AffordanceModel::binary_probs_row(teacher.token_logits[i]);
    for (size_t j = 0; j < n; ++j) {
      auto [sp, sn] = AffordanceModel::binary_probs_row(student.token_logits[j]);
      cost[i][j] = w.l1 * box_l1(teacher.boxes[i], student.boxes[j]) +
                   w.giou * box_giou_loss(teacher.boxes[i], student.boxes[j]) +
                   w.kl * binary_kl(tp, tn, sp, sn);
    }
  }
  return hungarian(cost);
}

}  // namespace affr
