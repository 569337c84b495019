// Differentiable training losses.
//
// Box regression uses L1 plus generalized-IoU; masks use Dice plus a focal
// binary cross-entropy (mean over pixels); token-span supervision uses a
// soft cross-entropy against the span distribution, with every query
// supervised (padded ground-truth slots target the no-object slot). The
// matching-time token cost omits the log under the default setting; a
// config switch selects the log form. Alignment is a symmetric InfoNCE over
// object and token embeddings, halved per direction, skipping queries
// matched to padding. The distillation total adds a cluster-distance pull
// on the pronoun feature and a KL between teacher and student no-object
// splits; both attach gradients to the student only.
#pragma once

#include <string>
#include <vector>

#include "affr/boxes.hpp"
#include "affr/detector.hpp"
#include "affr/matching.hpp"

namespace affr {

using ad::Tape;
using ad::Var;

struct LossWeights {
  double l1 = 5.0;      // lambda_1
  double giou = 2.0;    // lambda_2
  double dice = 1.0;    // lambda_3
  double focal = 1.0;   // lambda_4
  double token = 1.0;   // lambda_5
  double align = 1.0;   // lambda_6
  double cluster = 1.0; // lambda_7
  double binary = 1.0;  // lambda_8
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double tau = 0.07;
  bool token_log_form = false;
};

// Elementwise building blocks. Box arguments are {1,4} (cx,cy,w,h).
Var l1_box_loss(Tape& t, Var a, Var b);
Var giou_loss(Tape& t, Var a, Var b);

// Token-span costs for one logit row {1,n_max} against a span distribution.
Var token_m_cost(Tape& t, Var logits_row, const std::vector<double>& p_span,
                 bool log_form = false);
Var soft_token_loss(Tape& t, Var logits_row, const std::vector<double>& p_span);

// Mask losses for one flattened logit row against a binary target.
Var dice_loss(Tape& t, Var mask_logits, const std::vector<double>& target);
Var focal_loss(Tape& t, Var mask_logits, const std::vector<double>& target, double alpha,
               double gamma);

// Symmetric InfoNCE between object embeddings {n_pred,e} and token
// embeddings {n_max,e}. positive_tokens[i] lists the positive token
// indices of prediction i (empty = excluded from the object direction).
Var contrastive_alignment_loss(Tape& t, Var obj_embed, Var tok_embed,
                               const std::vector<std::vector<int>>& positive_tokens, double tau);

// Euclidean distance between a pronoun feature {1,d} and a fixed cluster
// center; exact zero at equality.
Var cluster_loss(Tape& t, Var pron_feature, const std::vector<double>& center);

// Sum over teacher queries of KL(teacher binary || student binary), with
// student probabilities read off the matched student rows and floored at
// 1e-12 before the log. floored_count reports how often the floor engaged.
Var soft_binary_target_loss(Tape& t, Var student_logits,
                            const std::vector<std::pair<double, double>>& teacher_binary,
                            const std::vector<int>& teacher_to_student,
                            int* floored_count = nullptr);

struct LossBreakdown {
  double total = 0, l1 = 0, giou = 0, dice = 0, focal = 0, token = 0, align = 0;
  double teacher_total = 0, student_total = 0, cluster = 0, binary = 0;
  int matched = 0;
  int binary_floored = 0;

  // One structured key=value line for the training log.
  std::string log_line(const std::string& tag, int64_t step) const;
};

// Weighted sum over the assignment per the training objective; padded
// ground-truth slots contribute token-span supervision toward no-object.
Var total_plain(Tape& t, const Prediction& pred, const GroundTruthSet& gt,
                const Assignment& match, const LossWeights& w, LossBreakdown* out = nullptr);

// teacher_loss/student_loss are the plain totals of the two models on this
// sample; cluster may be invalid (treated as zero) when no prototype was
// available. The KL term pairs queries via ts_match.
Var total_distill(Tape& t, Var teacher_loss, Var student_loss, const Prediction& student,
                  const std::vector<std::pair<double, double>>& teacher_binary,
                  const Assignment& ts_match, Var cluster, const LossWeights& w,
                  LossBreakdown* out = nullptr);

}  // namespace affr
