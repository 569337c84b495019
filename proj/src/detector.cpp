#include "affr/detector.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "affr/util.hpp"

namespace affr {

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "dim=" << dim << "\nheads=" << heads << "\nn_max=" << n_max << "\nn_pred=" << n_pred
     << "\nvocab_size=" << vocab_size << "\npatch=" << patch << "\ntext_layers=" << text_layers
     << "\nvis_layers=" << vis_layers << "\nenc_layers=" << enc_layers
     << "\ndec_layers=" << dec_layers << "\nffn_mult=" << ffn_mult
     << "\nalign_dim=" << align_dim << "\nmask_dim=" << mask_dim
     << "\nuse_bi_fusion=" << (use_bi_fusion ? 1 : 0)
     << "\nuse_verb_attention=" << (use_verb_attention ? 1 : 0)
     << "\ndecoder_self_attention=" << (decoder_self_attention ? 1 : 0) << "\n";
  return os.str();
}

std::string ModelConfig::hash() const { return sha256_hex(canonical()); }

PredictionValues snapshot(const Prediction& p) {
  PredictionValues v;
  const auto& bx = p.boxes.value();
  const auto& tl = p.token_logits.value();
  const auto& sc = p.scores.value();
  v.boxes.resize(size_t(p.n_pred));
  v.token_logits.resize(size_t(p.n_pred));
  v.scores.resize(size_t(p.n_pred));
  for (int i = 0; i < p.n_pred; ++i) {
    for (int j = 0; j < 4; ++j) v.boxes[size_t(i)][size_t(j)] = double(bx[size_t(i) * 4 + j]);
    v.token_logits[size_t(i)].resize(size_t(p.n_max));
    for (int j = 0; j < p.n_max; ++j)
      v.token_logits[size_t(i)][size_t(j)] = double(tl[size_t(i) * p.n_max + j]);
    v.scores[size_t(i)] = double(sc[size_t(i)]);
  }
  return v;
}

AffordanceModel::AffordanceModel(ModelConfig cfg)
    : cfg_(cfg),
      text_enc_(cfg.vocab_size, cfg.dim, cfg.heads, cfg.text_layers, cfg.ffn_mult),
      img_enc_(cfg.patch, cfg.dim, cfg.heads, cfg.vis_layers, cfg.ffn_mult),
      bi_fusion_(cfg.dim, cfg.heads),
      verb_attn_(cfg.dim, cfg.heads) {
  if (cfg.dim % cfg.heads != 0) throw std::runtime_error("model dim must divide into heads");
  if (cfg.n_max < 2) throw std::runtime_error("n_max must be at least 2");
  if (cfg.n_pred < 1) throw std::runtime_error("n_pred must be positive");
}

void AffordanceModel::init(nn::ParamStore& ps, Rng& rng) const {
  text_enc_.init(ps, rng);
  img_enc_.init(ps, rng);
  bi_fusion_.init(ps, rng);
  verb_attn_.init(ps, rng);
  for (int l = 0; l < cfg_.enc_layers; ++l)
    nn::TransformerLayer{"enc.layer" + std::to_string(l), cfg_.dim, cfg_.heads,
                         cfg_.dim * cfg_.ffn_mult}
        .init(ps, rng);
  nn::LayerNorm{"enc.ln_out", cfg_.dim}.init(ps, rng);

  if (!ps.has("dec.queries"))
    ps.create("dec.queries", {cfg_.n_pred, cfg_.dim},
              nn::normal_init(rng, int64_t(cfg_.n_pred) * cfg_.dim, 0.02));
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    std::string p = "dec.l" + std::to_string(l);
    nn::LayerNorm{p + ".ln_self", cfg_.dim}.init(ps, rng);
    nn::MultiHeadAttention{p + ".self", cfg_.dim, cfg_.heads}.init(ps, rng);
    nn::LayerNorm{p + ".ln_cross", cfg_.dim}.init(ps, rng);
    nn::MultiHeadAttention{p + ".cross", cfg_.dim, cfg_.heads}.init(ps, rng);
    nn::LayerNorm{p + ".ln_ffn", cfg_.dim}.init(ps, rng);
    nn::Linear{p + ".ffn1", cfg_.dim, cfg_.dim * cfg_.ffn_mult}.init(ps, rng);
    nn::Linear{p + ".ffn2", cfg_.dim * cfg_.ffn_mult, cfg_.dim}.init(ps, rng);
  }
  nn::LayerNorm{"dec.ln_out", cfg_.dim}.init(ps, rng);

  nn::Linear{"head.box1", cfg_.dim, cfg_.dim}.init(ps, rng);
  nn::Linear{"head.box2", cfg_.dim, 4}.init(ps, rng);
  nn::Linear{"head.token", cfg_.dim, cfg_.n_max}.init(ps, rng);
  nn::Linear{"head.obj_align", cfg_.dim, cfg_.align_dim}.init(ps, rng);
  nn::Linear{"head.tok_align", cfg_.dim, cfg_.align_dim}.init(ps, rng);
  nn::Linear{"head.mask_proj", cfg_.dim, cfg_.mask_dim}.init(ps, rng);
  nn::Linear{"head.mask_conv1", 9 * cfg_.mask_dim, cfg_.mask_dim}.init(ps, rng);
  nn::Linear{"head.mask_conv2", 9 * cfg_.mask_dim, cfg_.mask_dim}.init(ps, rng);
  nn::Linear{"head.mask_q", cfg_.dim, cfg_.mask_dim}.init(ps, rng);
}

Var AffordanceModel::decoder_layer(ad::Tape& t, const nn::ParamStore& ps, int layer, Var h,
                                   Var memory, const std::vector<uint8_t>& mem_mask,
                                   bool trainable) const {
  std::string p = "dec.l" + std::to_string(layer);
  if (cfg_.decoder_self_attention) {
    Var q = nn::LayerNorm{p + ".ln_self", cfg_.dim}.apply(t, ps, h, trainable);
    h = t.add(h, nn::MultiHeadAttention{p + ".self", cfg_.dim, cfg_.heads}.apply(
                     t, ps, q, q, nullptr, trainable));
  }
  Var q = nn::LayerNorm{p + ".ln_cross", cfg_.dim}.apply(t, ps, h, trainable);
  h = t.add(h, nn::MultiHeadAttention{p + ".cross", cfg_.dim, cfg_.heads}.apply(
                   t, ps, q, memory, &mem_mask, trainable));
  Var f = nn::LayerNorm{p + ".ln_ffn", cfg_.dim}.apply(t, ps, h, trainable);
  f = nn::Linear{p + ".ffn1", cfg_.dim, cfg_.dim * cfg_.ffn_mult}.apply(t, ps, f, trainable);
  f = t.gelu(f);
  f = nn::Linear{p + ".ffn2", cfg_.dim * cfg_.ffn_mult, cfg_.dim}.apply(t, ps, f, trainable);
  return t.add(h, f);
}

namespace {

// Bilinear 2x upsampling as a constant matrix: (gh*gw) -> (2gh*2gw), applied
// from the right to a row-per-query score matrix.
std::vector<ad::real> upsample2_matrix(int gh, int gw) {
  int oh = 2 * gh, ow = 2 * gw;
  std::vector<ad::real> m(size_t(gh) * gw * oh * ow, ad::real(0));
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * 0.5 - 0.5;
    int y0 = int(std::floor(fy));
    double wy = fy - y0;
    int ya = std::clamp(y0, 0, gh - 1), yb = std::clamp(y0 + 1, 0, gh - 1);
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * 0.5 - 0.5;
      int x0 = int(std::floor(fx));
      double wx = fx - x0;
      int xa = std::clamp(x0, 0, gw - 1), xb = std::clamp(x0 + 1, 0, gw - 1);
      int dst = y * ow + x;
      auto add = [&](int sy, int sx, double w) {
        m[size_t(sy * gw + sx) * (size_t(oh) * ow) + dst] += ad::real(w);
      };
      add(ya, xa, (1 - wy) * (1 - wx));
      add(ya, xb, (1 - wy) * wx);
      add(yb, xa, wy * (1 - wx));
      add(yb, xb, wy * wx);
    }
  }
  return m;
}

}  // namespace

Var AffordanceModel::mask_head(ad::Tape& t, const nn::ParamStore& ps, Var queries_normed,
                               Var memory, int gh, int gw, bool trainable) const {
  int nv = gh * gw;
  int md = cfg_.mask_dim;
  Var vis = t.slice_rows(memory, 0, nv);
  Var p = nn::Linear{"head.mask_proj", cfg_.dim, md}.apply(t, ps, vis, trainable);

  // Two 3x3 same-padding convolutions, expressed as neighbor-gather plus a
  // dense projection. Row nv of the padded matrix is the zero border cell.
  auto conv3x3 = [&](Var grid, const std::string& wname) {
    Var padded = t.concat_rows({grid, t.constant({1, md}, std::vector<ad::real>(size_t(md), 0))});
    std::vector<Var> taps;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        std::vector<int> idx(static_cast<size_t>(nv), 0);
        for (int y = 0; y < gh; ++y)
          for (int x = 0; x < gw; ++x) {
            int sy = y + dy, sx = x + dx;
            idx[size_t(y) * gw + x] =
                (sy < 0 || sy >= gh || sx < 0 || sx >= gw) ? nv : sy * gw + sx;
          }
        taps.push_back(t.gather_rows(padded, idx));
      }
    Var stacked = t.concat_cols(taps);
    return t.gelu(nn::Linear{wname, 9 * md, md}.apply(t, ps, stacked, trainable));
  };
  Var c = conv3x3(p, "head.mask_conv1");
  c = conv3x3(c, "head.mask_conv2");

  Var q = nn::Linear{"head.mask_q", cfg_.dim, md}.apply(t, ps, queries_normed, trainable);
  Var scores = t.scale(t.matmul(q, t.transpose(c)), ad::real(1.0 / std::sqrt(double(md))));
  Var up = t.constant({nv, 4 * nv}, upsample2_matrix(gh, gw));
  return t.matmul(scores, up);
}

Prediction AffordanceModel::forward(ad::Tape& t, const nn::ParamStore& ps, const Image& img,
                                    const Prompt& prompt, const ForwardOptions& opts) const {
  if (prompt.n_max != cfg_.n_max)
    throw std::runtime_error("prompt tokenized for n_max=" + std::to_string(prompt.n_max) +
                             " but model expects " + std::to_string(cfg_.n_max));
  bool tr = opts.trainable;
  Prediction out;
  out.n_pred = cfg_.n_pred;
  out.n_max = cfg_.n_max;

  TextFeatures tf = text_enc_.encode(t, ps, prompt, tr);
  Var text = tf.features;
  if (cfg_.use_verb_attention && prompt.form != PromptForm::kEmpty)
    text = verb_attn_.apply(t, ps, text, prompt.verb_span.begin, prompt.content_len, tr);
  out.text_after_va = text;

  if (opts.replace_vec != nullptr) {
    const TokenSpan& sp = opts.replace_span;
    if (sp.empty() || sp.begin < 0 || sp.end > cfg_.n_max)
      throw std::runtime_error("replacement span is invalid");
    if (int(opts.replace_vec->size()) != cfg_.dim)
      throw std::runtime_error("replacement vector dim mismatch");
    std::vector<ad::real> center(opts.replace_vec->begin(), opts.replace_vec->end());
    Var c = t.broadcast_rows(t.constant({1, cfg_.dim}, center), sp.len());
    std::vector<Var> parts;
    if (sp.begin > 0) parts.push_back(t.slice_rows(text, 0, sp.begin));
    parts.push_back(c);
    if (sp.end < cfg_.n_max) parts.push_back(t.slice_rows(text, sp.end, cfg_.n_max));
    text = t.concat_rows(parts);
  }

  VisualFeatures vf = img_enc_.encode(t, ps, img, tr);
  Var vis = vf.features;
  if (cfg_.use_bi_fusion) {
    auto [v2, t2] = bi_fusion_.apply(t, ps, vis, text, tf.mask, tr);
    vis = v2;
    text = t2;
  }

  int nv = vf.gh * vf.gw;
  Var memory = t.concat_rows({vis, text});
  std::vector<uint8_t> mem_mask(size_t(nv), 1);
  mem_mask.insert(mem_mask.end(), tf.mask.begin(), tf.mask.end());
  for (int l = 0; l < cfg_.enc_layers; ++l)
    memory = nn::TransformerLayer{"enc.layer" + std::to_string(l), cfg_.dim, cfg_.heads,
                                  cfg_.dim * cfg_.ffn_mult}
                 .apply(t, ps, memory, &mem_mask, tr);
  memory = nn::LayerNorm{"enc.ln_out", cfg_.dim}.apply(t, ps, memory, tr);

  Var h = ps.leaf(t, "dec.queries", tr);
  nn::LayerNorm ln_out{"dec.ln_out", cfg_.dim};
  nn::Linear token_head{"head.token", cfg_.dim, cfg_.n_max};
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    h = decoder_layer(t, ps, l, h, memory, mem_mask, tr);
    out.layer_token_logits.push_back(token_head.apply(t, ps, ln_out.apply(t, ps, h, tr), tr));
  }
  Var hq = ln_out.apply(t, ps, h, tr);

  out.token_logits = out.layer_token_logits.back();
  Var bx = nn::Linear{"head.box1", cfg_.dim, cfg_.dim}.apply(t, ps, hq, tr);
  bx = t.gelu(bx);
  bx = nn::Linear{"head.box2", cfg_.dim, 4}.apply(t, ps, bx, tr);
  out.boxes = t.sigmoid(bx);

  Var sm = t.softmax_rows(out.token_logits);
  Var p_neg = t.slice_cols(sm, cfg_.n_max - 1, cfg_.n_max);
  out.scores = t.add_scalar(t.neg(p_neg), ad::real(1));

  out.mask_logits = mask_head(t, ps, hq, memory, vf.gh, vf.gw, tr);
  out.mask_h = 2 * vf.gh;
  out.mask_w = 2 * vf.gw;

  out.object_embed = nn::Linear{"head.obj_align", cfg_.dim, cfg_.align_dim}.apply(t, ps, hq, tr);
  Var text_mem = t.slice_rows(memory, nv, nv + cfg_.n_max);
  out.token_embed =
      nn::Linear{"head.tok_align", cfg_.dim, cfg_.align_dim}.apply(t, ps, text_mem, tr);
  return out;
}

std::vector<std::vector<double>> AffordanceModel::text_feature_rows(const nn::ParamStore& ps,
                                                                    const Prompt& prompt) const {
  ad::Tape t;
  TextFeatures tf = text_enc_.encode(t, ps, prompt, false);
  Var text = tf.features;
  if (cfg_.use_verb_attention && prompt.form != PromptForm::kEmpty)
    text = verb_attn_.apply(t, ps, text, prompt.verb_span.begin, prompt.content_len, false);
  std::vector<std::vector<double>> rows(size_t(cfg_.n_max));
  const auto& v = text.value();
  for (int r = 0; r < cfg_.n_max; ++r)
    rows[size_t(r)].assign(v.begin() + size_t(r) * size_t(cfg_.dim),
                           v.begin() + size_t(r + 1) * size_t(cfg_.dim));
  return rows;
}

double AffordanceModel::preference_score_row(const std::vector<double>& logits) {
  if (logits.empty()) throw std::runtime_error("empty logit row");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0;
  for (double v : logits) z += std::exp(v - mx);
  return 1.0 - std::exp(logits.back() - mx) / z;
}

std::pair<double, double> AffordanceModel::binary_probs_row(const std::vector<double>& logits) {
  if (logits.empty()) throw std::runtime_error("empty logit row");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0;
  for (double v : logits) z += std::exp(v - mx);
  double pos = 0;
  for (size_t i = 0; i + 1 < logits.size(); ++i) pos += std::exp(logits[i] - mx);
  return {pos / z, std::exp(logits.back() - mx) / z};
}

}  // namespace affr
