// Parameter storage and the small layer kit used by the model: linear maps,
// affine layer norm, multi-head attention, pre-norm transformer blocks, Adam.
//
// Layers hold only names and dimensions. Parameters live in a ParamStore and
// enter each fresh Tape as named leaves, so one ParamStore can drive many
// graphs and a frozen copy can enter a graph as constants.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "affr/autodiff.hpp"
#include "affr/util.hpp"

namespace affr::nn {

using ad::Shape;
using ad::Tape;
using ad::Var;
using ad::real;

class ParamStore {
 public:
  struct Entry {
    Shape shape;
    std::vector<real> value;
    std::vector<real> m;  // Adam first moment
    std::vector<real> v;  // Adam second moment
  };

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  void create(const std::string& name, Shape shape, std::vector<real> value);
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;

  // Emits the parameter into a tape as a trainable leaf (or a constant when
  // trainable=false, e.g. a frozen teacher).
  Var leaf(Tape& t, const std::string& name, bool trainable = true) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }
  size_t count() const { return entries_.size(); }

 private:
  std::map<std::string, Entry> entries_;
};

// Initializers (all draws go through the provided Rng).
std::vector<real> xavier_uniform(Rng& rng, int fan_in, int fan_out);
std::vector<real> normal_init(Rng& rng, int64_t n, double sigma);
std::vector<real> zeros(int64_t n);
std::vector<real> ones(int64_t n);

// y = x W + b, with W in {in,out} and b in {out}.
struct Linear {
  std::string name;
  int in = 0, out = 0;

  void init(ParamStore& ps, Rng& rng) const;
  Var apply(Tape& t, const ParamStore& ps, Var x, bool trainable = true) const;
};

// Row-wise normalization followed by a learned affine transform.
struct LayerNorm {
  std::string name;
  int dim = 0;

  void init(ParamStore& ps, Rng& rng) const;
  Var apply(Tape& t, const ParamStore& ps, Var x, bool trainable = true) const;
};

// Standard scaled dot-product multi-head attention. A key mask marks which
// key positions may be attended to; fully masked inputs are rejected.
struct MultiHeadAttention {
  std::string name;
  int dim = 0;
  int heads = 0;

  void init(ParamStore& ps, Rng& rng) const;
  Var apply(Tape& t, const ParamStore& ps, Var queries, Var keys_values,
            const std::vector<uint8_t>* key_mask = nullptr, bool trainable = true) const;
};

// Pre-norm transformer block: x += attn(ln1(x)); x += ffn(ln2(x)).
struct TransformerLayer {
  std::string name;
  int dim = 0;
  int heads = 0;
  int ffn_dim = 0;

  void init(ParamStore& ps, Rng& rng) const;
  Var apply(Tape& t, const ParamStore& ps, Var x, const std::vector<uint8_t>* key_mask = nullptr,
            bool trainable = true) const;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Longest-prefix override of the learning rate, e.g. {"text.", 5e-6}.
  std::vector<std::pair<std::string, double>> lr_overrides;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Applies one update using gradients harvested from the tape's named
  // leaves. Parameters without a leaf in this tape are left untouched.
  // Returns the global gradient L2 norm (diagnostic).
  double step(ParamStore& ps, const Tape& t);

  int64_t steps() const { return steps_; }
  void reset() { steps_ = 0; }

 private:
  AdamConfig cfg_;
  int64_t steps_ = 0;
};

}  // namespace affr::nn
