#include "affr/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "affr/matching.hpp"
#include "affr/util.hpp"

namespace affr {

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t mix(uint64_t a, uint64_t b) {
  return a ^ (b * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
}

// Geometry of one (task, image) pair before a prompt form is chosen.
struct RawSample {
  int task_id = -1;
  int image_id = -1;
  Image img;
  int target_category = -1;
  std::vector<Box> boxes;
  std::vector<Mask> masks;
  std::vector<int> cats;
};

Sample finish_sample(const RawSample& raw, const std::string& verb,
                     const std::string& category_name, const Vocabulary& vocab, int n_max,
                     PromptForm form, const std::string& pronoun) {
  int n_gt = int(raw.boxes.size());
  std::vector<std::string> cats;
  if (raw.target_category >= 0 && n_gt > 0) cats.push_back(category_name);
  PromptSpec spec = build_prompt(verb, form, cats, n_gt, pronoun);
  Sample s;
  s.task_id = raw.task_id;
  s.image_id = raw.image_id;
  s.img = raw.img;
  s.prompt = tokenize(spec, vocab, n_max);
  s.gt.img_h = raw.img.h;
  s.gt.img_w = raw.img.w;
  for (int i = 0; i < n_gt; ++i) {
    GroundTruthObject o;
    o.box = raw.boxes[size_t(i)];
    o.mask = raw.masks[size_t(i)];
    o.category_id = raw.cats[size_t(i)];
    if (s.prompt.form == PromptForm::kNoun)
      o.p_span = span_distribution(s.prompt.noun_spans.at(0), n_max);
    else
      o.p_span = span_distribution(TokenSpan{0, s.prompt.content_len}, n_max);
    s.gt.objects.push_back(std::move(o));
  }
  return s;
}

const TaskImageEntry& entry_for(const TaskData& td, int image_id) {
  for (const TaskImageEntry& e : td.entries)
    if (e.image_id == image_id) return e;
  throw std::runtime_error("image " + std::to_string(image_id) + " is not part of task " +
                           std::to_string(td.task_id));
}

bool finite(double v) { return std::isfinite(v); }

// Per-query eval predictions from one forward pass; masks are carried to
// ground-truth resolution by bilinear logit upsampling and a probability-
// half cut (logit 0).
void collect_predictions(const Prediction& p, const PredictionValues& pv, int image_id, int img_h,
                         int img_w, std::vector<EvalPrediction>* out) {
  const auto& ml = p.mask_logits.value();
  for (int q = 0; q < p.n_pred; ++q) {
    EvalPrediction ep;
    ep.image_id = image_id;
    ep.score = pv.scores[size_t(q)];
    ep.box = pv.boxes[size_t(q)];
    std::vector<double> grid(size_t(p.mask_h) * size_t(p.mask_w));
    for (size_t i = 0; i < grid.size(); ++i)
      grid[i] = double(ml[size_t(q) * grid.size() + i]);
    std::vector<double> up = bilinear_resize(grid, p.mask_h, p.mask_w, img_h, img_w);
    ep.mask.h = img_h;
    ep.mask.w = img_w;
    ep.mask.v.resize(up.size());
    for (size_t i = 0; i < up.size(); ++i) ep.mask.v[i] = up[i] > 0 ? 1 : 0;
    out->push_back(std::move(ep));
  }
}

}  // namespace

Sample make_sample(const AffordanceDataset& ds, const Vocabulary& vocab, int n_max, Image img,
                   int task_id, int image_id, PromptForm form, const std::string& pronoun) {
  const TaskSpec& task = ds.task(task_id);
  const TaskImageEntry& e = entry_for(ds.data_for_task(task_id), image_id);
  const ImageRecord& rec = ds.image(image_id);
  if (img.h != rec.h || img.w != rec.w)
    throw std::runtime_error("pixel size mismatch for image " + std::to_string(image_id));
  RawSample raw;
  raw.task_id = task_id;
  raw.image_id = image_id;
  raw.img = std::move(img);
  raw.target_category = e.target_category;
  for (int aid : e.target_annotation_ids) {
    const AnnotationRecord& a = ds.annotation(aid);
    raw.boxes.push_back(a.box);
    raw.masks.push_back(a.decode_mask(rec.h, rec.w));
    raw.cats.push_back(a.category_id);
  }
  std::string cat_name =
      e.target_category >= 0 ? ds.category(e.target_category).name : std::string();
  return finish_sample(raw, task.verb, cat_name, vocab, n_max, form, pronoun);
}

Trainer::Trainer(RunConfig cfg, const AffordanceDataset& ds, const Vocabulary& vocab,
                 PixelSource pixels, const MicroWorld* world)
    : cfg_(std::move(cfg)),
      ds_(&ds),
      vocab_(&vocab),
      pixels_(std::move(pixels)),
      world_(world),
      model_(cfg_.model) {
  if (vocab.size() > cfg_.model.vocab_size)
    throw std::runtime_error("vocabulary holds " + std::to_string(vocab.size()) +
                             " tokens but model.vocab_size is " +
                             std::to_string(cfg_.model.vocab_size));
  if (cfg_.data.augment && world_ == nullptr)
    throw std::runtime_error("augmentation requires micro-world scenes");
}

nn::ParamStore Trainer::init_params(uint64_t salt) const {
  nn::ParamStore ps;
  Rng rng(mix(cfg_.seed, salt));
  model_.init(ps, rng);
  return ps;
}

MemoryBank Trainer::make_bank() const {
  return MemoryBank{int(ds_->tasks.size()), cfg_.distill.n_mem, cfg_.model.dim, cfg_.distill.k};
}

std::vector<std::pair<int, int>> Trainer::split_pairs(bool train) const {
  std::vector<std::pair<int, int>> pairs;
  for (const TaskSpec& task : ds_->tasks) {
    const TaskData& td = ds_->data_for_task(task.id);
    const std::vector<int>& ids = train ? td.train_images : td.test_images;
    for (int id : ids) pairs.emplace_back(task.id, id);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

Sample Trainer::sample_for(int task_id, int image_id, PromptForm form, Rng* augment_rng) const {
  const TaskSpec& task = ds_->task(task_id);
  if (augment_rng == nullptr)
    return make_sample(*ds_, *vocab_, cfg_.model.n_max, pixels_(image_id), task_id, image_id, form,
                       cfg_.prompt.pronoun);

  // Augmented path: re-derive geometry and targets from the transformed
  // scene, under the same min-rank rule (ties to the lowest category id).
  Scene aug = augment_scene(world_->scene(image_id), world_->spec, *augment_rng);
  RawSample raw;
  raw.task_id = task_id;
  raw.image_id = image_id;
  raw.img = render_scene(aug, world_->spec);
  int best_rank = std::numeric_limits<int>::max();
  for (const SceneShape& sh : aug.shapes)
    for (const RankedCategory& rc : task.ranked)
      if (rc.category_id == sh.category_id) {
        if (rc.rank < best_rank ||
            (rc.rank == best_rank && rc.category_id < raw.target_category)) {
          best_rank = rc.rank;
          raw.target_category = rc.category_id;
        }
      }
  if (raw.target_category >= 0) {
    for (const SceneShape& sh : aug.shapes) {
      if (sh.category_id != raw.target_category) continue;
      ShapeKind kind = ShapeKind::kCircle;
      for (const ShapeArchetype& a : world_->spec.shapes)
        if (a.category_id == sh.category_id) kind = a.kind;
      raw.boxes.push_back(shape_box(sh, aug.h, aug.w));
      raw.masks.push_back(shape_mask(sh, kind, aug.h, aug.w));
      raw.cats.push_back(sh.category_id);
    }
  }
  std::string cat_name =
      raw.target_category >= 0 ? ds_->category(raw.target_category).name : std::string();
  return finish_sample(raw, task.verb, cat_name, *vocab_, cfg_.model.n_max, form,
                       cfg_.prompt.pronoun);
}

std::vector<double> Trainer::pronoun_feature(const nn::ParamStore& ps,
                                             const Prompt& prompt) const {
  std::vector<std::vector<double>> rows = model_.text_feature_rows(ps, prompt);
  const TokenSpan& sp = prompt.pronoun_span;
  std::vector<double> f(size_t(cfg_.model.dim), 0.0);
  for (int r = sp.begin; r < sp.end; ++r)
    for (int c = 0; c < cfg_.model.dim; ++c) f[size_t(c)] += rows[size_t(r)][size_t(c)];
  for (double& v : f) v /= double(sp.len());
  return f;
}

int Trainer::prototype_for(const nn::ParamStore& student, const Prompt& prompt, MemoryBank& bank,
                           int task_index, uint64_t salt, std::vector<double>* proto) const {
  if (prompt.form != PromptForm::kPronoun || prompt.pronoun_span.empty()) return -1;
  if (bank.queue_size(task_index) == 0) return -1;
  if (!bank.centers_fresh(task_index)) bank.recluster(task_index, mix(cfg_.seed, salt));
  auto [idx, center] = select_prototype(pronoun_feature(student, prompt), bank.centers(task_index));
  *proto = std::move(center);
  return idx;
}

TrainOutcome Trainer::train_plain(nn::ParamStore& ps, PromptForm form, const std::string& tag,
                                  const LogSink& log) const {
  nn::AdamConfig acfg;
  acfg.lr = cfg_.optim.lr;
  if (cfg_.optim.text_lr > 0) acfg.lr_overrides.push_back({"text.", cfg_.optim.text_lr});
  nn::Adam adam(acfg);

  TrainOutcome out;
  std::vector<std::pair<int, int>> pairs = split_pairs(true);
  uint64_t stream = mix(cfg_.seed, fnv1a(tag));
  auto last_good = ps.entries();

  for (int epoch = 1; epoch <= cfg_.optim.epochs; ++epoch) {
    Rng order_rng(mix(stream, uint64_t(epoch)));
    Rng aug_rng(mix(stream, 0xa000000ull + uint64_t(epoch)));
    std::vector<std::pair<int, int>> order = pairs;
    order_rng.shuffle(order);

    double loss_sum = 0.0;
    size_t done = 0;
    bool aborted = false;
    while (done < order.size()) {
      size_t take = std::min(size_t(cfg_.optim.batch), order.size() - done);
      ad::Tape t;
      Var batch_loss = t.scalar_constant(0);
      for (size_t i = 0; i < take; ++i) {
        auto [task_id, image_id] = order[done + i];
        Sample s = sample_for(task_id, image_id, form, cfg_.data.augment ? &aug_rng : nullptr);
        Prediction pred = model_.forward(t, ps, s.img, s.prompt);
        Assignment as = match_to_gt(snapshot(pred), s.gt, cfg_.loss.token_log_form);
        LossBreakdown bd;
        batch_loss = batch_loss + total_plain(t, pred, s.gt, as, cfg_.loss, &bd);
        loss_sum += bd.total;
      }
      batch_loss = t.scale(batch_loss, ad::real(1.0 / double(take)));
      if (!finite(double(batch_loss.scalar()))) {
        aborted = true;
        break;
      }
      t.backward(batch_loss);
      double gnorm = adam.step(ps, t);
      if (!finite(gnorm)) {
        aborted = true;
        break;
      }
      done += take;
    }
    if (aborted) {
      ps.entries() = last_good;
      out.diverged = true;
      log("tag=" + tag + " epoch=" + std::to_string(epoch) + " diverged=1 rolled_back=1");
      return out;
    }

    EvalReport report = evaluate(ps, form);
    EpochStat st;
    st.epoch = epoch;
    st.loss = loss_sum / double(order.size());
    st.map_box = report.map_box;
    st.map_mask = report.map_mask;
    out.trace.push_back(st);
    last_good = ps.entries();
    log("tag=" + tag + " epoch=" + std::to_string(epoch) + " loss=" + fmt_real(st.loss) +
        " map_box=" + fmt_real(st.map_box) + " map_mask=" + fmt_real(st.map_mask));
  }
  return out;
}

TrainOutcome Trainer::distill(nn::ParamStore& teacher, nn::ParamStore& student, MemoryBank& bank,
                              const std::string& tag, const LogSink& log) const {
  nn::AdamConfig acfg;
  acfg.lr = cfg_.optim.lr;
  if (cfg_.optim.text_lr > 0) acfg.lr_overrides.push_back({"text.", cfg_.optim.text_lr});
  nn::Adam student_adam(acfg);
  nn::Adam teacher_adam(acfg);
  bool joint = !cfg_.distill.frozen_teacher;

  TrainOutcome out;
  std::vector<std::pair<int, int>> pairs = split_pairs(true);
  uint64_t stream = mix(cfg_.seed, fnv1a(tag));
  auto last_good_s = student.entries();
  auto last_good_t = teacher.entries();
  int64_t step = 0;

  for (int epoch = 1; epoch <= cfg_.optim.distill_epochs; ++epoch) {
    Rng order_rng(mix(stream, uint64_t(epoch)));
    Rng aug_rng(mix(stream, 0xa000000ull + uint64_t(epoch)));
    std::vector<std::pair<int, int>> order = pairs;
    order_rng.shuffle(order);

    double loss_sum = 0.0;
    size_t done = 0;
    bool aborted = false;
    while (done < order.size()) {
      size_t take = std::min(size_t(cfg_.optim.distill_batch), order.size() - done);
      ++step;
      if (step % cfg_.distill.recluster_every == 0) bank.recluster_all(mix(stream, uint64_t(step)));

      ad::Tape t;        // student graph; the teacher enters as constants
      ad::Tape t_joint;  // teacher graph, joint mode only
      Var batch_loss = t.scalar_constant(0);
      Var teacher_batch = joint ? t_joint.scalar_constant(0) : Var{};
      for (size_t i = 0; i < take; ++i) {
        auto [task_id, image_id] = order[done + i];
        Rng* aug = cfg_.data.augment ? &aug_rng : nullptr;
        // Both forms must share one geometry, so the augmentation stream is
        // cloned for the second build.
        Rng aug_copy = aug ? *aug : Rng(0);
        Sample ts = sample_for(task_id, image_id, PromptForm::kNoun, aug);
        Sample ss = sample_for(task_id, image_id, PromptForm::kPronoun, aug ? &aug_copy : nullptr);
        int task_index = ds_->task_pos.at(task_id);

        ForwardOptions frozen;
        frozen.trainable = false;
        Prediction tpred = model_.forward(t, teacher, ts.img, ts.prompt, frozen);
        PredictionValues tpv = snapshot(tpred);
        Assignment t_as = match_to_gt(tpv, ts.gt, cfg_.loss.token_log_form);
        LossBreakdown tbd;
        Var teacher_loss = total_plain(t, tpred, ts.gt, t_as, cfg_.loss, &tbd);

        if (ts.prompt.form == PromptForm::kNoun && !ts.prompt.noun_spans.empty())
          bank.update(task_index, extract_noun_feature(tpred.text_after_va, ts.prompt.noun_spans));

        std::vector<double> proto;
        int proto_idx = prototype_for(student, ss.prompt, bank, task_index,
                                      0x9000000ull + uint64_t(step), &proto);
        ForwardOptions sopts;
        if (proto_idx >= 0) {
          sopts.replace_vec = &proto;
          sopts.replace_span = ss.prompt.pronoun_span;
        }
        Prediction spred = model_.forward(t, student, ss.img, ss.prompt, sopts);
        PredictionValues spv = snapshot(spred);
        Assignment s_as = match_to_gt(spv, ss.gt, cfg_.loss.token_log_form);
        LossBreakdown sbd;
        Var student_loss = total_plain(t, spred, ss.gt, s_as, cfg_.loss, &sbd);

        Var cluster;
        if (proto_idx >= 0) {
          const TokenSpan& sp = ss.prompt.pronoun_span;
          Var pron = t.scale(t.sum_axis0(t.slice_rows(spred.text_after_va, sp.begin, sp.end)),
                             ad::real(1.0 / double(sp.len())));
          cluster = cluster_loss(t, pron, proto);
        }

        std::vector<std::pair<double, double>> teacher_binary;
        for (const auto& row : tpv.token_logits)
          teacher_binary.push_back(AffordanceModel::binary_probs_row(row));
        Assignment ts_match = match_teacher_student(tpv, spv);
        LossBreakdown bd;
        batch_loss = batch_loss + total_distill(t, teacher_loss, student_loss, spred,
                                                teacher_binary, ts_match, cluster, cfg_.loss, &bd);
        loss_sum += bd.total;

        if (joint) {
          Prediction jt = model_.forward(t_joint, teacher, ts.img, ts.prompt);
          Assignment j_as = match_to_gt(snapshot(jt), ts.gt, cfg_.loss.token_log_form);
          teacher_batch = teacher_batch + total_plain(t_joint, jt, ts.gt, j_as, cfg_.loss);
        }
      }
      batch_loss = t.scale(batch_loss, ad::real(1.0 / double(take)));
      if (!finite(double(batch_loss.scalar()))) {
        aborted = true;
        break;
      }
      t.backward(batch_loss);
      double gnorm = student_adam.step(student, t);
      if (!finite(gnorm)) {
        aborted = true;
        break;
      }
      if (joint) {
        teacher_batch = t_joint.scale(teacher_batch, ad::real(1.0 / double(take)));
        if (!finite(double(teacher_batch.scalar()))) {
          aborted = true;
          break;
        }
        t_joint.backward(teacher_batch);
        if (!finite(teacher_adam.step(teacher, t_joint))) {
          aborted = true;
          break;
        }
      }
      done += take;
    }
    if (aborted) {
      student.entries() = last_good_s;
      teacher.entries() = last_good_t;
      out.diverged = true;
      log("tag=" + tag + " epoch=" + std::to_string(epoch) + " diverged=1 rolled_back=1");
      return out;
    }

    EvalReport report = evaluate(student, PromptForm::kPronoun, &bank);
    EpochStat st;
    st.epoch = epoch;
    st.loss = loss_sum / double(order.size());
    st.map_box = report.map_box;
    st.map_mask = report.map_mask;
    out.trace.push_back(st);
    last_good_s = student.entries();
    last_good_t = teacher.entries();
    log("tag=" + tag + " epoch=" + std::to_string(epoch) + " loss=" + fmt_real(st.loss) +
        " map_box=" + fmt_real(st.map_box) + " map_mask=" + fmt_real(st.map_mask));
  }
  // The exported bank carries fresh centers for every non-empty queue.
  bank.recluster_all(mix(stream, 0xf1a1ull));
  return out;
}

EvalReport Trainer::evaluate(const nn::ParamStore& ps, PromptForm form, MemoryBank* bank) const {
  EvalReport report;
  std::vector<double> aps_box, aps_mask;
  std::vector<EvalPrediction> pooled_preds;
  std::vector<EvalGt> pooled_gts;

  for (size_t ti = 0; ti < ds_->tasks.size(); ++ti) {
    const TaskSpec& task = ds_->tasks[ti];
    const TaskData& td = ds_->data_for_task(task.id);
    std::vector<EvalPrediction> preds;
    std::vector<EvalGt> gts;
    for (int image_id : td.test_images) {
      Sample s = sample_for(task.id, image_id, form, nullptr);
      ForwardOptions opts;
      opts.trainable = false;
      std::vector<double> proto;
      int proto_idx = -1;
      if (bank != nullptr)
        proto_idx = prototype_for(ps, s.prompt, *bank, int(ti), 0xe7a1ull, &proto);
      if (proto_idx >= 0) {
        opts.replace_vec = &proto;
        opts.replace_span = s.prompt.pronoun_span;
      }
      ad::Tape t;
      Prediction pred = model_.forward(t, ps, s.img, s.prompt, opts);
      collect_predictions(pred, snapshot(pred), image_id, s.img.h, s.img.w, &preds);
      for (const GroundTruthObject& o : s.gt.objects) {
        EvalGt g;
        g.image_id = image_id;
        g.box = o.box;
        g.mask = o.mask;
        gts.push_back(std::move(g));
      }
    }

    TaskEval te;
    te.task_id = task.id;
    te.n_images = int(td.test_images.size());
    te.n_gt = int(gts.size());
    te.ap_box = ap50(preds, gts, EvalKind::kBox);
    te.ap_mask = ap50(preds, gts, EvalKind::kMask);
    aps_box.push_back(te.ap_box);
    aps_mask.push_back(te.ap_mask);
    report.tasks.push_back(te);

    // Image ids repeat across tasks, so the pooled sweep remaps them into
    // disjoint per-task ranges.
    int offset = int(ti + 1) * 1000000;
    for (EvalPrediction p : preds) {
      p.image_id += offset;
      pooled_preds.push_back(std::move(p));
    }
    for (EvalGt g : gts) {
      g.image_id += offset;
      pooled_gts.push_back(std::move(g));
    }
  }

  report.map_box = map_over_tasks(aps_box);
  report.map_mask = map_over_tasks(aps_mask);
  report.sweep =
      threshold_sweep(pooled_preds, pooled_gts, EvalKind::kBox, cfg_.sweep_thresholds());
  return report;
}

}  // namespace affr
