// Training and evaluation drivers.
//
// A sample pairs rendered pixels with a prompt and its ground-truth set.
// The plain objective trains one model on one prompt form over the train
// split, evaluating the test split every epoch. Distillation runs the
// teacher on noun prompts to feed the per-task memory bank and the student
// on pronoun prompts with prototype replacement; gradients reach the
// student only, plus the teacher through its own objective in joint mode.
// Traces are line-oriented and bit-reproducible for a fixed config+seed.
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "affr/config.hpp"
#include "affr/dataforge.hpp"
#include "affr/detector.hpp"
#include "affr/evalkit.hpp"
#include "affr/losses.hpp"
#include "affr/memory_bank.hpp"
#include "affr/microworld.hpp"
#include "affr/text.hpp"

namespace affr {

// Supplies pixels for a dataset image id.
using PixelSource = std::function<Image(int image_id)>;

// Receives one complete log line at a time (no trailing newline).
using LogSink = std::function<void(const std::string&)>;

struct Sample {
  int task_id = -1;
  int image_id = -1;
  Image img;
  Prompt prompt;
  GroundTruthSet gt;
};

// Prompt plus ground truth for one (task, image) pair. Noun prompts name
// the target category; zero-target images yield the empty prompt whatever
// form was requested. Span targets: noun prompts point at the category
// tokens of the object's phrase, pronoun prompts spread uniformly over the
// prompt content.
Sample make_sample(const AffordanceDataset& ds, const Vocabulary& vocab, int n_max, Image img,
                   int task_id, int image_id, PromptForm form, const std::string& pronoun);

struct EpochStat {
  int epoch = 0;       // 1-based
  double loss = 0;     // mean per-sample total over the epoch
  double map_box = 0;  // test-split eval after the epoch
  double map_mask = 0;
};

struct TrainOutcome {
  std::vector<EpochStat> trace;
  bool diverged = false;  // non-finite loss hit; parameters rolled back
};

class Trainer {
 public:
  // world is optional; augmentation needs it (augmented geometry re-renders
  // from stored scenes). The dataset, vocabulary, and world must outlive
  // the trainer.
  Trainer(RunConfig cfg, const AffordanceDataset& ds, const Vocabulary& vocab,
          PixelSource pixels, const MicroWorld* world = nullptr);

  const AffordanceModel& model() const { return model_; }
  const RunConfig& config() const { return cfg_; }

  // Fresh parameters drawn from (config seed, salt).
  nn::ParamStore init_params(uint64_t salt) const;

  MemoryBank make_bank() const;

  TrainOutcome train_plain(nn::ParamStore& ps, PromptForm form, const std::string& tag,
                           const LogSink& log) const;

  TrainOutcome distill(nn::ParamStore& teacher, nn::ParamStore& student, MemoryBank& bank,
                       const std::string& tag, const LogSink& log) const;

  // Test-split evaluation. kNoun evaluates oracle prompts (teacher side);
  // kPronoun evaluates the plain task prompt. A bank switches on prototype
  // replacement (stale centers are reclustered first).
  EvalReport evaluate(const nn::ParamStore& ps, PromptForm form, MemoryBank* bank = nullptr) const;

  // (task id, image id) pairs of one split, ordered by task then image.
  std::vector<std::pair<int, int>> split_pairs(bool train) const;

 private:
  Sample sample_for(int task_id, int image_id, PromptForm form, Rng* augment_rng) const;
  std::vector<double> pronoun_feature(const nn::ParamStore& ps, const Prompt& prompt) const;
  int prototype_for(const nn::ParamStore& student, const Prompt& prompt, MemoryBank& bank,
                    int task_id, uint64_t salt, std::vector<double>* proto) const;

  RunConfig cfg_;
  const AffordanceDataset* ds_;
  const Vocabulary* vocab_;
  PixelSource pixels_;
  const MicroWorld* world_;
  AffordanceModel model_;
};

}  // namespace affr
