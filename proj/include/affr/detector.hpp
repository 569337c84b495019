// The full task-conditioned detector: encoders, fusion, a transformer
// encoder-decoder over the joint sequence, and the prediction heads
// (boxes, token-span logits, masks, alignment embeddings, scores).
//
// Token logits per query have n_max slots; the last slot is the no-object
// class. Per-layer logits are retained so intermediate decoder layers can be
// scored independently. Preference scores follow
//   s_i = 1 - exp(g_i[last]) / sum_j exp(g_i[j]).
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "affr/boxes.hpp"
#include "affr/encoders.hpp"
#include "affr/fusion.hpp"
#include "affr/nn.hpp"

namespace affr {

struct ModelConfig {
  int dim = 64;
  int heads = 4;
  int n_max = 32;
  int n_pred = 8;
  int vocab_size = 64;
  int patch = 8;
  int text_layers = 2;
  int vis_layers = 2;
  int enc_layers = 2;
  int dec_layers = 3;
  int ffn_mult = 4;
  int align_dim = 32;
  int mask_dim = 32;
  bool use_bi_fusion = true;
  bool use_verb_attention = true;
  bool decoder_self_attention = true;

  std::string canonical() const;  // stable key=value serialization
  std::string hash() const;       // sha256 of canonical()
};

struct Prediction {
  Var boxes;                          // n_pred x 4, sigmoided (cx,cy,w,h)
  Var token_logits;                   // n_pred x n_max (final decoder layer)
  std::vector<Var> layer_token_logits;  // one per decoder layer
  Var scores;                         // n_pred x 1
  Var mask_logits;                    // n_pred x (mask_h*mask_w)
  int mask_h = 0, mask_w = 0;
  Var object_embed;                   // n_pred x align_dim
  Var token_embed;                    // n_max x align_dim
  Var text_after_va;                  // n_max x dim (post verb-attention)
  int n_pred = 0, n_max = 0;
};

// Plain-double snapshot used for matching-cost assembly and evaluation.
struct PredictionValues {
  std::vector<Box> boxes;
  std::vector<std::vector<double>> token_logits;  // per query, length n_max
  std::vector<double> scores;
};

PredictionValues snapshot(const Prediction& p);

struct ForwardOptions {
  bool trainable = true;
  // When set, rows [replace_span) of the post-verb-attention text features
  // are replaced by this constant vector (broadcast across the span). All
  // other rows pass through bit-identically and the inserted rows receive
  // no gradient.
  const std::vector<double>* replace_vec = nullptr;
  TokenSpan replace_span;
};

class AffordanceModel {
 public:
  explicit AffordanceModel(ModelConfig cfg);

  void init(nn::ParamStore& ps, Rng& rng) const;
  Prediction forward(ad::Tape& t, const nn::ParamStore& ps, const Image& img,
                     const Prompt& prompt, const ForwardOptions& opts = {}) const;

  const ModelConfig& config() const { return cfg_; }

  // Post-verb-attention text features of one prompt as plain doubles, one
  // row per sequence position. Runs on a scratch tape without gradients;
  // values match forward()'s text_after_va bit for bit.
  std::vector<std::vector<double>> text_feature_rows(const nn::ParamStore& ps,
                                                     const Prompt& prompt) const;

  // Preference score of one query's logit row (plain doubles): probability
  // mass assigned away from the no-object slot.
  static double preference_score_row(const std::vector<double>& logits);
  // {p_pos, p_neg} of a logit row, summed over real slots vs the last slot.
  static std::pair<double, double> binary_probs_row(const std::vector<double>& logits);

 private:
  ModelConfig cfg_;
  TextEncoder text_enc_;
  ImageEncoder img_enc_;
  BiFusion bi_fusion_;
  VerbAttention verb_attn_;

  Var decoder_layer(ad::Tape& t, const nn::ParamStore& ps, int layer, Var h, Var memory,
                    const std::vector<uint8_t>& mem_mask, bool trainable) const;
  Var mask_head(ad::Tape& t, const nn::ParamStore& ps, Var queries_normed, Var memory, int gh,
                int gw, bool trainable) const;
};

}  // namespace affr
