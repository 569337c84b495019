#include "affr/fusion.hpp"

#include <stdexcept>

namespace affr {

void BiFusion::init(nn::ParamStore& ps, Rng& rng) const {
  nn::LayerNorm{"bf.ln_v", dim_}.init(ps, rng);
  nn::LayerNorm{"bf.ln_t", dim_}.init(ps, rng);
  nn::MultiHeadAttention{"bf.v2t", dim_, heads_}.init(ps, rng);
  nn::MultiHeadAttention{"bf.t2v", dim_, heads_}.init(ps, rng);
  if (!ps.has("bf.gamma_v")) ps.create("bf.gamma_v", {1}, {ad::real(0)});
  if (!ps.has("bf.gamma_t")) ps.create("bf.gamma_t", {1}, {ad::real(0)});
}

std::pair<Var, Var> BiFusion::apply(Tape& t, const nn::ParamStore& ps, Var f_v, Var f_t,
                                    const std::vector<uint8_t>& text_mask,
                                    bool trainable) const {
  Var lv = nn::LayerNorm{"bf.ln_v", dim_}.apply(t, ps, f_v, trainable);
  Var lt = nn::LayerNorm{"bf.ln_t", dim_}.apply(t, ps, f_t, trainable);
  Var av = nn::MultiHeadAttention{"bf.v2t", dim_, heads_}.apply(t, ps, lv, lt, &text_mask,
                                                                trainable);
  Var at = nn::MultiHeadAttention{"bf.t2v", dim_, heads_}.apply(t, ps, lt, lv, nullptr,
                                                                trainable);
  Var gv = t.expand_scalar(ps.leaf(t, "bf.gamma_v", trainable), av.shape());
  Var gt = t.expand_scalar(ps.leaf(t, "bf.gamma_t", trainable), at.shape());
  Var out_v = t.add(f_v, t.mul(gv, av));
  Var out_t = t.add(f_t, t.mul(gt, at));
  return {out_v, out_t};
}

void VerbAttention::init(nn::ParamStore& ps, Rng& rng) const {
  nn::LayerNorm{"va.ln_t", dim_}.init(ps, rng);
  nn::LayerNorm{"va.ln_vb", dim_}.init(ps, rng);
  nn::MultiHeadAttention{"va.attn", dim_, heads_}.init(ps, rng);
}

Var VerbAttention::apply(Tape& t, const nn::ParamStore& ps, Var f_t, int verb_index,
                         int content_len, bool trainable) const {
  if (verb_index < 0 || verb_index >= content_len)
    throw std::runtime_error("verb index " + std::to_string(verb_index) +
                             " outside prompt content of length " + std::to_string(content_len));
  Var f_vb = t.slice_rows(f_t, verb_index, verb_index + 1);
  Var lt = nn::LayerNorm{"va.ln_t", dim_}.apply(t, ps, f_t, trainable);
  Var lvb = nn::LayerNorm{"va.ln_vb", dim_}.apply(t, ps, f_vb, trainable);
  Var attn = nn::MultiHeadAttention{"va.attn", dim_, heads_}.apply(t, ps, lt, lvb, nullptr,
                                                                   trainable);
  return t.add(f_t, attn);
}

}  // namespace affr
