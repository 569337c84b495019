// Bipartite assignment between predictions and (padded) ground truth, and
// the cost assemblies that feed it.
//
// Ground truth is padded with no-object entries to the query count, so cost
// matrices are square. Padded rows cost zero everywhere; real rows carry
// box L1 + GIoU + the token-span cost. No gradients flow through matching;
// everything here runs on plain doubles.
#pragma once

#include <vector>

#include "affr/boxes.hpp"
#include "affr/detector.hpp"

namespace affr {

struct Assignment {
  std::vector<int> perm;  // perm[row] = assigned column
  double total = 0.0;     // equals assignment_cost(cost, perm)
};

// Sum of the selected entries, accumulated from the last row to the first.
// The solver reports totals with this exact accumulation order.
double assignment_cost(const std::vector<std::vector<double>>& cost,
                       const std::vector<int>& perm);

// Exact minimum-cost assignment on a square matrix. Among all optimal
// permutations the lexicographically smallest is returned. Sizes up to 20
// use an exact subset-DP; larger instances fall back to an augmenting-path
// solver whose tie-break is best-effort. Non-square or non-finite input is
// rejected.
Assignment hungarian(const std::vector<std::vector<double>>& cost);

// Token-span cost of prediction logits against a span distribution:
//   -sum_k p_span[k] * softmax(logits)[k]          (default)
//   -sum_k p_span[k] * log softmax(logits)[k]      (log_form = true)
double token_match_cost_row(const std::vector<double>& p_span,
                            const std::vector<double>& logits, bool log_form = false);

// KL divergence between two binary distributions {pos, neg}; the second
// argument is floored at 1e-12 before the log. Zero probability mass in the
// first argument contributes zero.
double binary_kl(double pt_pos, double pt_neg, double ps_pos, double ps_neg);

// Cost matrix with rows = padded ground-truth slots, columns = predictions.
// Entry (i, j) for a real object i is L1 + GIoU + token cost; rows past the
// real objects are all zero.
std::vector<std::vector<double>> gt_match_cost(const PredictionValues& pred,
                                               const GroundTruthSet& gt,
                                               bool token_log_form = false);

// Optimal assignment of padded ground truth to predictions.
Assignment match_to_gt(const PredictionValues& pred, const GroundTruthSet& gt,
                       bool token_log_form = false);

struct DistillMatchWeights {
  double l1 = 5.0;
  double giou = 2.0;
  double kl = 1.0;
};

// Pairs teacher queries (rows) with student queries (columns) by box
// distance plus the KL between their binary no-object splits.
Assignment match_teacher_student(const PredictionValues& teacher,
                                 const PredictionValues& student,
                                 const DistillMatchWeights& w = {});

}  // namespace affr
