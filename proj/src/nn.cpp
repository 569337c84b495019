#include "affr/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace affr::nn {

void ParamStore::create(const std::string& name, Shape shape, std::vector<real> value) {
  if (entries_.count(name)) throw std::runtime_error("parameter already exists: " + name);
  if (int64_t(value.size()) != ad::numel(shape))
    throw std::runtime_error("parameter " + name + " value size does not match shape");
  Entry e;
  e.shape = std::move(shape);
  e.value = std::move(value);
  e.m.assign(e.value.size(), real(0));
  e.v.assign(e.value.size(), real(0));
  entries_.emplace(name, std::move(e));
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::runtime_error("no such parameter: " + name);
  return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::runtime_error("no such parameter: " + name);
  return it->second;
}

Var ParamStore::leaf(Tape& t, const std::string& name, bool trainable) const {
  const Entry& e = at(name);
  // Frozen leaves stay anonymous so a frozen model and a trainable one can
  // share a tape without colliding on parameter names.
  if (!trainable) return t.constant(e.shape, e.value);
  if (t.has_named(name)) return t.named(name);
  return t.input(name, e.shape, e.value, true);
}

std::vector<real> xavier_uniform(Rng& rng, int fan_in, int fan_out) {
  double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::vector<real> v(size_t(fan_in) * size_t(fan_out));
  for (auto& x : v) x = real(rng.uniform(-limit, limit));
  return v;
}

std::vector<real> normal_init(Rng& rng, int64_t n, double sigma) {
  std::vector<real> v(static_cast<size_t>(n), real(0));
  for (auto& x : v) x = real(rng.normal(0.0, sigma));
  return v;
}

std::vector<real> zeros(int64_t n) { return std::vector<real>(size_t(n), real(0)); }
std::vector<real> ones(int64_t n) { return std::vector<real>(size_t(n), real(1)); }

void Linear::init(ParamStore& ps, Rng& rng) const {
  if (!ps.has(name + ".w")) ps.create(name + ".w", {in, out}, xavier_uniform(rng, in, out));
  if (!ps.has(name + ".b")) ps.create(name + ".b", {out}, zeros(out));
}

Var Linear::apply(Tape& t, const ParamStore& ps, Var x, bool trainable) const {
  Var w = ps.leaf(t, name + ".w", trainable);
  Var b = ps.leaf(t, name + ".b", trainable);
  Var y = t.matmul(x, w);
  return t.add(y, t.broadcast_rows(b, y.rows()));
}

void LayerNorm::init(ParamStore& ps, Rng& rng) const {
  (void)rng;
  if (!ps.has(name + ".g")) ps.create(name + ".g", {dim}, ones(dim));
  if (!ps.has(name + ".b")) ps.create(name + ".b", {dim}, zeros(dim));
}

Var LayerNorm::apply(Tape& t, const ParamStore& ps, Var x, bool trainable) const {
  Var g = ps.leaf(t, name + ".g", trainable);
  Var b = ps.leaf(t, name + ".b", trainable);
  Var y = t.layer_norm_rows(x);
  y = t.mul(y, t.broadcast_rows(g, y.rows()));
  return t.add(y, t.broadcast_rows(b, y.rows()));
}

void MultiHeadAttention::init(ParamStore& ps, Rng& rng) const {
  if (dim % heads != 0) throw std::runtime_error(name + ": dim must divide evenly into heads");
  Linear{name + ".q", dim, dim}.init(ps, rng);
  Linear{name + ".k", dim, dim}.init(ps, rng);
  Linear{name + ".v", dim, dim}.init(ps, rng);
  Linear{name + ".o", dim, dim}.init(ps, rng);
}

Var MultiHeadAttention::apply(Tape& t, const ParamStore& ps, Var queries, Var keys_values,
                              const std::vector<uint8_t>* key_mask, bool trainable) const {
  int lk = keys_values.rows();
  if (key_mask != nullptr) {
    if (int(key_mask->size()) != lk)
      throw ad::AdError("attention", -1, name + ": key mask length does not match key count");
    bool any = false;
    for (uint8_t m : *key_mask) any = any || (m != 0);
    if (!any) throw ad::AdError("attention", -1, name + ": attention over an empty key set");
  }
  Var q = Linear{name + ".q", dim, dim}.apply(t, ps, queries, trainable);
  Var k = Linear{name + ".k", dim, dim}.apply(t, ps, keys_values, trainable);
  Var v = Linear{name + ".v", dim, dim}.apply(t, ps, keys_values, trainable);

  int dh = dim / heads;
  real scale = real(1.0 / std::sqrt(double(dh)));

  // Masked keys get a large negative score bias; after the stable softmax
  // their weight underflows to exactly zero.
  Var bias{};
  if (key_mask != nullptr) {
    std::vector<real> row(size_t(lk), real(0));
    for (int j = 0; j < lk; ++j)
      if (!(*key_mask)[size_t(j)]) row[size_t(j)] = real(-1e30);
    bias = t.broadcast_rows(t.constant({1, lk}, row), queries.rows());
  }

  std::vector<Var> head_out;
  head_out.reserve(size_t(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = t.scale(t.matmul(qh, t.transpose(kh)), scale);
    if (key_mask != nullptr) scores = t.add(scores, bias);
    Var attn = t.softmax_rows(scores);
    head_out.push_back(t.matmul(attn, vh));
  }
  Var ctx = heads == 1 ? head_out[0] : t.concat_cols(head_out);
  return Linear{name + ".o", dim, dim}.apply(t, ps, ctx, trainable);
}

void TransformerLayer::init(ParamStore& ps, Rng& rng) const {
  LayerNorm{name + ".ln1", dim}.init(ps, rng);
  LayerNorm{name + ".ln2", dim}.init(ps, rng);
  MultiHeadAttention{name + ".attn", dim, heads}.init(ps, rng);
  Linear{name + ".ffn1", dim, ffn_dim}.init(ps, rng);
  Linear{name + ".ffn2", ffn_dim, dim}.init(ps, rng);
}

Var TransformerLayer::apply(Tape& t, const ParamStore& ps, Var x,
                            const std::vector<uint8_t>* key_mask, bool trainable) const {
  Var h1 = LayerNorm{name + ".ln1", dim}.apply(t, ps, x, trainable);
  x = t.add(x, MultiHeadAttention{name + ".attn", dim, heads}.apply(t, ps, h1, h1, key_mask,
                                                                    trainable));
  Var h2 = LayerNorm{name + ".ln2", dim}.apply(t, ps, x, trainable);
  Var f = Linear{name + ".ffn1", dim, ffn_dim}.apply(t, ps, h2, trainable);
  f = t.gelu(f);
  f = Linear{name + ".ffn2", ffn_dim, dim}.apply(t, ps, f, trainable);
  return t.add(x, f);
}

double Adam::step(ParamStore& ps, const Tape& t) {
  ++steps_;
  double b1t = 1.0 - std::pow(cfg_.beta1, double(steps_));
  double b2t = 1.0 - std::pow(cfg_.beta2, double(steps_));
  double grad_sq = 0.0;
  for (auto& [name, e] : ps.entries()) {
    if (!t.has_named(name)) continue;
    const auto& node = t.node(t.named(name).id);
    if (!node.requires_grad || node.grad.empty()) continue;
    double lr = cfg_.lr;
    size_t best_len = 0;
    for (const auto& [prefix, olr] : cfg_.lr_overrides) {
      if (prefix.size() >= best_len && name.rfind(prefix, 0) == 0) {
        lr = olr;
        best_len = prefix.size();
      }
    }
    for (size_t i = 0; i < e.value.size(); ++i) {
      double g = double(node.grad[i]);
      grad_sq += g * g;
      double m = cfg_.beta1 * double(e.m[i]) + (1.0 - cfg_.beta1) * g;
      double v = cfg_.beta2 * double(e.v[i]) + (1.0 - cfg_.beta2) * g * g;
      e.m[i] = real(m);
      e.v[i] = real(v);
      double mhat = m / b1t;
      double vhat = v / b2t;
      e.value[i] = real(double(e.value[i]) - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
  return std::sqrt(grad_sq);
}

}  // namespace affr::nn
