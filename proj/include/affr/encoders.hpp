// Toy text and image encoders feeding the fusion stack.
//
// Text: learned embeddings + 1-D sinusoidal positions + self-attention
// layers; PAD positions are masked out of every attention so their features
// never reach real content. Image: non-overlapping patch projection + 2-D
// sinusoidal positions + self-attention layers.
#pragma once

#include <vector>

#include "affr/autodiff.hpp"
#include "affr/image.hpp"
#include "affr/nn.hpp"
#include "affr/text.hpp"

namespace affr {

using ad::Tape;
using ad::Var;
using ad::real;

struct TextFeatures {
  Var features;                 // n_max x d
  std::vector<uint8_t> mask;    // attendable sequence positions
  Prompt prompt;
};

struct VisualFeatures {
  Var features;  // (gh*gw) x d
  int gh = 0;
  int gw = 0;
};

// Sinusoidal position tables (constants, recomputed deterministically).
std::vector<real> sinusoid_1d(int n, int dim);
// First half of the channels encodes the row, second half the column.
std::vector<real> sinusoid_2d(int gh, int gw, int dim);

class TextEncoder {
 public:
  TextEncoder(int vocab_size, int dim, int heads, int layers, int ffn_mult = 4);

  void init(nn::ParamStore& ps, Rng& rng) const;
  TextFeatures encode(Tape& t, const nn::ParamStore& ps, const Prompt& prompt,
                      bool trainable = true) const;
  // Embedding + positions before any attention (exposed for testing).
  Var embed(Tape& t, const nn::ParamStore& ps, const Prompt& prompt,
            bool trainable = true) const;

  int dim() const { return dim_; }

 private:
  int vocab_size_, dim_, heads_, layers_, ffn_mult_;
};

class ImageEncoder {
 public:
  ImageEncoder(int patch, int dim, int heads, int layers, int ffn_mult = 4);

  void init(nn::ParamStore& ps, Rng& rng) const;
  // Rejects images whose sides are not multiples of the patch size, naming
  // the nearest valid size.
  VisualFeatures encode(Tape& t, const nn::ParamStore& ps, const Image& img,
                        bool trainable = true) const;
  // Patch projection + positions before any attention (exposed for testing).
  Var patch_embed(Tape& t, const nn::ParamStore& ps, const Image& img,
                  bool trainable = true) const;

  int patch() const { return patch_; }
  int dim() const { return dim_; }

 private:
  int patch_, dim_, heads_, layers_, ffn_mult_;
};

}  // namespace affr
