#include "affr/losses.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "affr/util.hpp"

namespace affr {

namespace {

constexpr double kEps = 1e-12;
constexpr double kProbFloor = 1e-12;

Var row_constant(Tape& t, const std::vector<double>& v) {
  std::vector<ad::real> data(v.begin(), v.end());
  return t.constant({1, int(v.size())}, std::move(data));
}

}  // namespace

Var l1_box_loss(Tape& t, Var a, Var b) { return t.sum(t.abs_(t.sub(a, b))); }

Var giou_loss(Tape& t, Var a, Var b) {
  // Mirrors box_giou_loss term for term so graph values match the scalar
  // routine bitwise on identical inputs.
  auto coord = [&](Var box, int k) { return t.slice_cols(box, k, k + 1); };
  auto corners = [&](Var box, Var& x1, Var& y1, Var& x2, Var& y2) {
    Var hw = t.scale(coord(box, 2), 0.5);
    Var hh = t.scale(coord(box, 3), 0.5);
    x1 = t.sub(coord(box, 0), hw);
    y1 = t.sub(coord(box, 1), hh);
    x2 = t.add(coord(box, 0), hw);
    y2 = t.add(coord(box, 1), hh);
  };
  Var ax1, ay1, ax2, ay2, bx1, by1, bx2, by2;
  corners(a, ax1, ay1, ax2, ay2);
  corners(b, bx1, by1, bx2, by2);

  Var iw = t.relu(t.sub(t.min_elem(ax2, bx2), t.max_elem(ax1, bx1)));
  Var ih = t.relu(t.sub(t.min_elem(ay2, by2), t.max_elem(ay1, by1)));
  Var inter = t.mul(iw, ih);
  Var area_a = t.mul(coord(a, 2), coord(a, 3));
  Var area_b = t.mul(coord(b, 2), coord(b, 3));
  Var uni = t.sub(t.add(area_a, area_b), inter);
  Var hull_w = t.sub(t.max_elem(ax2, bx2), t.min_elem(ax1, bx1));
  Var hull_h = t.sub(t.max_elem(ay2, by2), t.min_elem(ay1, by1));
  Var hull = t.mul(hull_w, hull_h);
  Var iou = t.div(inter, t.add_scalar(uni, kEps));
  Var penalty = t.div(t.sub(hull, uni), t.add_scalar(hull, kEps));
  return t.reshape(t.add_scalar(t.neg(t.sub(iou, penalty)), 1.0), {1});
}

Var token_m_cost(Tape& t, Var logits_row, const std::vector<double>& p_span, bool log_form) {
  if (log_form) return soft_token_loss(t, logits_row, p_span);
  Var sm = t.softmax_rows(logits_row);
  return t.neg(t.sum(t.mul(sm, row_constant(t, p_span))));
}

Var soft_token_loss(Tape& t, Var logits_row, const std::vector<double>& p_span) {
  Var ls = t.log_softmax_rows(logits_row);
  return t.neg(t.sum(t.mul(ls, row_constant(t, p_span))));
}

Var dice_loss(Tape& t, Var mask_logits, const std::vector<double>& target) {
  if (int(target.size()) != mask_logits.size())
    throw std::runtime_error("dice_loss: target size does not match logits");
  double target_sum = 0;
  for (double m : target) target_sum += m;
  Var s = t.sigmoid(t.reshape(mask_logits, {1, int(target.size())}));
  Var overlap = t.sum(t.mul(s, row_constant(t, target)));
  Var num = t.add_scalar(t.scale(overlap, 2.0), 1.0);
  Var den = t.add_scalar(t.sum(s), target_sum + 1.0);
  return t.add_scalar(t.neg(t.div(num, den)), 1.0);
}

Var focal_loss(Tape& t, Var mask_logits, const std::vector<double>& target, double alpha,
               double gamma) {
  int n = int(target.size());
  if (n != mask_logits.size())
    throw std::runtime_error("focal_loss: target size does not match logits");
  std::vector<double> one_minus(n), alpha_t(n);
  for (int i = 0; i < n; ++i) {
    one_minus[i] = 1.0 - target[i];
    alpha_t[i] = alpha * target[i] + (1.0 - alpha) * one_minus[i];
  }
  Var x = t.reshape(mask_logits, {1, n});
  Var m = row_constant(t, target);
  Var om = row_constant(t, one_minus);
  // Cross-entropy via log-sigmoid keeps both branches finite for any logit.
  Var ce = t.neg(t.add(t.mul(m, t.log_sigmoid(x)), t.mul(om, t.log_sigmoid(t.neg(x)))));
  Var s = t.sigmoid(x);
  Var p_t = t.add(t.mul(m, s), t.mul(om, t.add_scalar(t.neg(s), 1.0)));
  Var mod = t.pow_const(t.add_scalar(t.neg(p_t), 1.0), gamma);
  return t.mean(t.mul(row_constant(t, alpha_t), t.mul(mod, ce)));
}

Var contrastive_alignment_loss(Tape& t, Var obj_embed, Var tok_embed,
                               const std::vector<std::vector<int>>& positive_tokens, double tau) {
  int n_pred = obj_embed.rows();
  int n_tok = tok_embed.rows();
  if (int(positive_tokens.size()) != n_pred)
    throw std::runtime_error("contrastive_alignment_loss: positives list size mismatch");

  // Object direction: each prediction attends its positive tokens.
  std::vector<ad::real> w_obj(size_t(n_pred) * n_tok, 0);
  // Token direction: each token attends the predictions that list it.
  std::vector<std::vector<int>> preds_of_token(size_t(n_tok), std::vector<int>{});
  bool any = false;
  for (int i = 0; i < n_pred; ++i) {
    const auto& pos = positive_tokens[i];
    if (pos.empty()) continue;
    any = true;
    for (int k : pos) {
      if (k < 0 || k >= n_tok)
        throw std::runtime_error("contrastive_alignment_loss: positive token index out of range");
      w_obj[size_t(i) * n_tok + k] = ad::real(1.0 / double(pos.size()));
      preds_of_token[size_t(k)].push_back(i);
    }
  }
  if (!any) return t.scalar_constant(0);

  std::vector<ad::real> w_tok(size_t(n_tok) * n_pred, 0);
  for (int k = 0; k < n_tok; ++k) {
    const auto& preds = preds_of_token[size_t(k)];
    for (int i : preds) w_tok[size_t(k) * n_pred + i] = ad::real(1.0 / double(preds.size()));
  }

  Var sim = t.scale(t.matmul(obj_embed, t.transpose(tok_embed)), 1.0 / tau);
  Var obj_dir =
      t.neg(t.sum(t.mul(t.log_softmax_rows(sim), t.constant({n_pred, n_tok}, std::move(w_obj)))));
  Var tok_dir = t.neg(t.sum(
      t.mul(t.log_softmax_rows(t.transpose(sim)), t.constant({n_tok, n_pred}, std::move(w_tok)))));
  return t.scale(t.add(obj_dir, tok_dir), 0.5);
}

Var cluster_loss(Tape& t, Var pron_feature, const std::vector<double>& center) {
  if (int(center.size()) != pron_feature.size())
    throw std::runtime_error("cluster_loss: center size does not match feature");
  Var diff = t.sub(t.reshape(pron_feature, {1, int(center.size())}), row_constant(t, center));
  return t.sqrt_(t.sum(t.mul(diff, diff)));
}

Var soft_binary_target_loss(Tape& t, Var student_logits,
                            const std::vector<std::pair<double, double>>& teacher_binary,
                            const std::vector<int>& teacher_to_student, int* floored_count) {
  int n = int(teacher_binary.size());
  if (int(teacher_to_student.size()) != n)
    throw std::runtime_error("soft_binary_target_loss: matching size mismatch");
  int rows = student_logits.rows();
  int cols = student_logits.cols();
  if (n > rows) throw std::runtime_error("soft_binary_target_loss: more teacher rows than student");

  Var sm = t.softmax_rows(student_logits);
  Var p_neg = t.slice_cols(sm, cols - 1, cols);
  Var p_pos = t.sum_axis1(t.slice_cols(sm, 0, cols - 1));
  Var floor_col = t.constant({rows, 1}, std::vector<ad::real>(size_t(rows), ad::real(kProbFloor)));
  if (floored_count) {
    *floored_count = 0;
    for (int r = 0; r < rows; ++r) {
      if (p_pos.value()[size_t(r)] < kProbFloor) ++*floored_count;
      if (p_neg.value()[size_t(r)] < kProbFloor) ++*floored_count;
    }
  }
  Var log_pos = t.log_(t.max_elem(p_pos, floor_col));
  Var log_neg = t.log_(t.max_elem(p_neg, floor_col));

  // KL(p_t || p_s) = sum p_t log p_t - sum p_t log p_s; the first term is
  // constant and the weight keeps 0 log 0 = 0.
  double const_part = 0;
  std::vector<ad::real> w_pos(size_t(n), 0), w_neg(size_t(n), 0);
  for (int i = 0; i < n; ++i) {
    double tp = teacher_binary[size_t(i)].first;
    double tn = teacher_binary[size_t(i)].second;
    if (tp > 0) const_part += tp * std::log(std::max(tp, kProbFloor));
    if (tn > 0) const_part += tn * std::log(std::max(tn, kProbFloor));
    w_pos[size_t(i)] = ad::real(tp);
    w_neg[size_t(i)] = ad::real(tn);
  }
  Var gp = t.gather_rows(log_pos, teacher_to_student);
  Var gn = t.gather_rows(log_neg, teacher_to_student);
  Var cross = t.add(t.sum(t.mul(t.constant({n, 1}, std::move(w_pos)), gp)),
                    t.sum(t.mul(t.constant({n, 1}, std::move(w_neg)), gn)));
  return t.add_scalar(t.neg(cross), const_part);
}

std::string LossBreakdown::log_line(const std::string& tag, int64_t step) const {
  std::ostringstream os;
  os << "tag=" << tag << " step=" << step << " total=" << fmt_real(total) << " l1=" << fmt_real(l1)
     << " giou=" << fmt_real(giou) << " dice=" << fmt_real(dice) << " focal=" << fmt_real(focal)
     << " token=" << fmt_real(token) << " align=" << fmt_real(align) << " matched=" << matched;
  if (teacher_total != 0 || cluster != 0 || binary != 0) {
    os << " teacher=" << fmt_real(teacher_total) << " student=" << fmt_real(student_total)
       << " cluster=" << fmt_real(cluster) << " binary=" << fmt_real(binary)
       << " binary_floored=" << binary_floored;
  }
  return os.str();
}

Var total_plain(Tape& t, const Prediction& pred, const GroundTruthSet& gt,
                const Assignment& match, const LossWeights& w, LossBreakdown* out) {
  int n_slots = int(match.perm.size());
  int n_gt = gt.n_gt();
  if (n_gt > n_slots) throw std::runtime_error("total_plain: more objects than matched slots");
  int n_max = pred.token_logits.cols();

  int factor = 1;
  if (n_gt > 0) {
    if (pred.mask_h <= 0 || gt.img_h % pred.mask_h != 0 || gt.img_w % pred.mask_w != 0 ||
        gt.img_h / pred.mask_h != gt.img_w / pred.mask_w)
      throw std::runtime_error("total_plain: mask grid does not evenly divide the image");
    factor = gt.img_h / pred.mask_h;
  }

  std::vector<double> no_object(size_t(n_max), 0.0);
  no_object.back() = 1.0;

  LossBreakdown bd;
  bd.matched = n_gt;
  std::vector<std::vector<int>> positives(size_t(pred.boxes.rows()));
  Var acc = t.scalar_constant(0);
  auto take = [&](Var term, double lambda, double* slot) {
    *slot += term.value()[0];
    acc = t.add(acc, t.scale(term, lambda));
  };

  for (int i = 0; i < n_slots; ++i) {
    int j = match.perm[size_t(i)];
    Var logits_row = t.slice_rows(pred.token_logits, j, j + 1);
    if (i < n_gt) {
      const GroundTruthObject& obj = gt.objects[size_t(i)];
      Var pred_box = t.slice_rows(pred.boxes, j, j + 1);
      std::vector<ad::real> gt_box(obj.box.begin(), obj.box.end());
      Var gt_box_var = t.constant({1, 4}, std::move(gt_box));
      take(l1_box_loss(t, pred_box, gt_box_var), w.l1, &bd.l1);
      take(giou_loss(t, pred_box, gt_box_var), w.giou, &bd.giou);

      Mask target = obj.mask;
      if (factor > 1) target = downsample_mask(obj.mask, factor);
      if (target.h != pred.mask_h || target.w != pred.mask_w)
        throw std::runtime_error("total_plain: ground-truth mask resolution mismatch");
      std::vector<double> tv(target.v.begin(), target.v.end());
      Var mask_row = t.slice_rows(pred.mask_logits, j, j + 1);
      take(dice_loss(t, mask_row, tv), w.dice, &bd.dice);
      take(focal_loss(t, mask_row, tv, w.focal_alpha, w.focal_gamma), w.focal, &bd.focal);

      take(soft_token_loss(t, logits_row, obj.p_span), w.token, &bd.token);
      for (int k = 0; k < n_max; ++k)
        if (obj.p_span[size_t(k)] > 0) positives[size_t(j)].push_back(k);
    } else {
      take(soft_token_loss(t, logits_row, no_object), w.token, &bd.token);
    }
  }

  Var align = contrastive_alignment_loss(t, pred.object_embed, pred.token_embed, positives, w.tau);
  take(align, w.align, &bd.align);

  bd.total = acc.value()[0];
  if (out) *out = bd;
  return acc;
}

Var total_distill(Tape& t, Var teacher_loss, Var student_loss, const Prediction& student,
                  const std::vector<std::pair<double, double>>& teacher_binary,
                  const Assignment& ts_match, Var cluster, const LossWeights& w,
                  LossBreakdown* out) {
  LossBreakdown bd;
  bd.teacher_total = teacher_loss.value()[0];
  bd.student_total = student_loss.value()[0];

  Var acc = t.add(teacher_loss, student_loss);
  if (cluster.valid()) {
    bd.cluster = cluster.value()[0];
    acc = t.add(acc, t.scale(cluster, w.cluster));
  }
  int floored = 0;
  std::vector<int> teacher_to_student(ts_match.perm.begin(),
                                      ts_match.perm.begin() + long(teacher_binary.size()));
  Var kl =
      soft_binary_target_loss(t, student.token_logits, teacher_binary, teacher_to_student, &floored);
  bd.binary = kl.value()[0];
  bd.binary_floored = floored;
  acc = t.add(acc, t.scale(kl, w.binary));

  bd.total = acc.value()[0];
  if (out) *out = bd;
  return acc;
}

}  // namespace affr
