#include "affr/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace affr {

namespace {

// Interleaved sin/cos over geometrically spaced frequencies, matching the
// usual attention-model position encoding.
void fill_sinusoid(real* out, int pos, int dim, int stride) {
  for (int i = 0; i < dim / 2; ++i) {
    double freq = std::pow(10000.0, -2.0 * double(i) / double(dim));
    out[2 * i * stride] = real(std::sin(double(pos) * freq));
    out[(2 * i + 1) * stride] = real(std::cos(double(pos) * freq));
  }
}

}  // namespace

std::vector<real> sinusoid_1d(int n, int dim) {
  std::vector<real> v(size_t(n) * dim, real(0));
  for (int p = 0; p < n; ++p) fill_sinusoid(&v[size_t(p) * dim], p, dim, 1);
  return v;
}

std::vector<real> sinusoid_2d(int gh, int gw, int dim) {
  if (dim % 2 != 0) throw std::runtime_error("sinusoid_2d needs an even dim");
  int half = dim / 2;
  std::vector<real> v(size_t(gh) * gw * dim, real(0));
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x) {
      real* row = &v[(size_t(y) * gw + x) * dim];
      fill_sinusoid(row, y, half, 1);
      fill_sinusoid(row + half, x, half, 1);
    }
  return v;
}

TextEncoder::TextEncoder(int vocab_size, int dim, int heads, int layers, int ffn_mult)
    : vocab_size_(vocab_size), dim_(dim), heads_(heads), layers_(layers), ffn_mult_(ffn_mult) {}

void TextEncoder::init(nn::ParamStore& ps, Rng& rng) const {
  if (!ps.has("text.embed"))
    ps.create("text.embed", {vocab_size_, dim_},
              nn::normal_init(rng, int64_t(vocab_size_) * dim_, 0.02));
  for (int l = 0; l < layers_; ++l)
    nn::TransformerLayer{"text.layer" + std::to_string(l), dim_, heads_, dim_ * ffn_mult_}.init(
        ps, rng);
}

Var TextEncoder::embed(Tape& t, const nn::ParamStore& ps, const Prompt& prompt,
                       bool trainable) const {
  Var table = ps.leaf(t, "text.embed", trainable);
  Var e = t.gather_rows(table, prompt.ids);
  Var pos = t.constant({prompt.n_max, dim_}, sinusoid_1d(prompt.n_max, dim_));
  return t.add(e, pos);
}

TextFeatures TextEncoder::encode(Tape& t, const nn::ParamStore& ps, const Prompt& prompt,
                                 bool trainable) const {
  TextFeatures out;
  out.prompt = prompt;
  out.mask = prompt.attend_mask();
  Var x = embed(t, ps, prompt, trainable);
  for (int l = 0; l < layers_; ++l)
    x = nn::TransformerLayer{"text.layer" + std::to_string(l), dim_, heads_, dim_ * ffn_mult_}
            .apply(t, ps, x, &out.mask, trainable);
  out.features = x;
  return out;
}

ImageEncoder::ImageEncoder(int patch, int dim, int heads, int layers, int ffn_mult)
    : patch_(patch), dim_(dim), heads_(heads), layers_(layers), ffn_mult_(ffn_mult) {}

void ImageEncoder::init(nn::ParamStore& ps, Rng& rng) const {
  nn::Linear{"vis.patch", patch_ * patch_ * 3, dim_}.init(ps, rng);
  for (int l = 0; l < layers_; ++l)
    nn::TransformerLayer{"vis.layer" + std::to_string(l), dim_, heads_, dim_ * ffn_mult_}.init(
        ps, rng);
}

Var ImageEncoder::patch_embed(Tape& t, const nn::ParamStore& ps, const Image& img,
                              bool trainable) const {
  if (img.h % patch_ != 0 || img.w % patch_ != 0) {
    int nh = (img.h + patch_ / 2) / patch_ * patch_, nw = (img.w + patch_ / 2) / patch_ * patch_;
    nh = std::max(nh, patch_);
    nw = std::max(nw, patch_);
    throw std::runtime_error("image size " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                             " is not a multiple of patch " + std::to_string(patch_) +
                             "; nearest valid size is " + std::to_string(nh) + "x" +
                             std::to_string(nw));
  }
  int gh = img.h / patch_, gw = img.w / patch_;
  int pd = patch_ * patch_ * 3;
  std::vector<real> patches(size_t(gh) * gw * pd);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      real* dst = &patches[(size_t(py) * gw + px) * pd];
      for (int y = 0; y < patch_; ++y)
        for (int x = 0; x < patch_; ++x) {
          const double* p = img.at(py * patch_ + y, px * patch_ + x);
          int off = (y * patch_ + x) * 3;
          dst[off + 0] = real(p[0]);
          dst[off + 1] = real(p[1]);
          dst[off + 2] = real(p[2]);
        }
    }
  Var pv = t.constant({gh * gw, pd}, std::move(patches));
  Var e = nn::Linear{"vis.patch", pd, dim_}.apply(t, ps, pv, trainable);
  Var pos = t.constant({gh * gw, dim_}, sinusoid_2d(gh, gw, dim_));
  return t.add(e, pos);
}

VisualFeatures ImageEncoder::encode(Tape& t, const nn::ParamStore& ps, const Image& img,
                                    bool trainable) const {
  VisualFeatures out;
  out.gh = img.h / patch_;
  out.gw = img.w / patch_;
  Var x = patch_embed(t, ps, img, trainable);
  for (int l = 0; l < layers_; ++l)
    x = nn::TransformerLayer{"vis.layer" + std::to_string(l), dim_, heads_, dim_ * ffn_mult_}
            .apply(t, ps, x, nullptr, trainable);
  out.features = x;
  return out;
}

}  // namespace affr
