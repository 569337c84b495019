// Cross-modal fusion blocks.
//
// BiFusion exchanges information between visual and text features through a
// pair of gated cross-attentions:
//   F_v' = F_v + gamma_v * Attn(LN(F_v) -> LN(F_t))
//   F_t' = F_t + gamma_t * Attn(LN(F_t) -> LN(F_v))
// Both gates start at zero, so an untrained block is an exact identity.
//
// VerbAttention re-emphasizes the verb: every text position cross-attends to
// the single first-verb-token feature and the result is added residually:
//   F_t'' = F_t + Attn(LN(F_t) -> LN(F_verb))
#pragma once

#include <utility>

#include "affr/nn.hpp"

namespace affr {

using ad::Tape;
using ad::Var;

class BiFusion {
 public:
  BiFusion(int dim, int heads) : dim_(dim), heads_(heads) {}

  void init(nn::ParamStore& ps, Rng& rng) const;

  // text_mask marks attendable text positions; a mask covering no position
  // is rejected. Returns {fused visual, fused text}.
  std::pair<Var, Var> apply(Tape& t, const nn::ParamStore& ps, Var f_v, Var f_t,
                            const std::vector<uint8_t>& text_mask, bool trainable = true) const;

 private:
  int dim_, heads_;
};

class VerbAttention {
 public:
  VerbAttention(int dim, int heads) : dim_(dim), heads_(heads) {}

  void init(nn::ParamStore& ps, Rng& rng) const;

  // verb_index must lie inside the prompt's content span (checked against
  // content_len by the caller passing it).
  Var apply(Tape& t, const nn::ParamStore& ps, Var f_t, int verb_index, int content_len,
            bool trainable = true) const;

 private:
  int dim_, heads_;
};

}  // namespace affr
