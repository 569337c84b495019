// Parameter store semantics, layer arithmetic, and Adam updates.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "affr/nn.hpp"

using namespace affr;
using nn::Adam;
using nn::AdamConfig;
using nn::ParamStore;
using ad::Tape;
using ad::Var;

TEST_CASE("store rejects duplicates and size mismatches") {
  ParamStore ps;
  ps.create("w", {2, 2}, {1, 2, 3, 4});
  CHECK_THROWS(ps.create("w", {2, 2}, {0, 0, 0, 0}));
  CHECK_THROWS(ps.create("bad", {2, 2}, {1, 2, 3}));
  CHECK_THROWS(ps.at("missing"));
  CHECK(ps.count() == 1);
}

TEST_CASE("trainable leaves register once and are reused by name") {
  ParamStore ps;
  ps.create("w", {2}, {1.0, 2.0});
  Tape t;
  Var a = ps.leaf(t, "w");
  Var b = ps.leaf(t, "w");
  CHECK(a.id == b.id);
  CHECK(t.has_named("w"));
  CHECK(t.node(a.id).requires_grad);
}

TEST_CASE("frozen leaves enter as anonymous constants") {
  // A frozen copy of the same parameters must coexist with trainable ones
  // on one tape without name collisions or gradient flow.
  ParamStore ps;
  ps.create("w", {2}, {1.0, 2.0});
  Tape t;
  Var frozen = ps.leaf(t, "w", false);
  Var live = ps.leaf(t, "w", true);
  CHECK(frozen.id != live.id);
  CHECK_FALSE(t.node(frozen.id).requires_grad);
  CHECK(frozen.value() == live.value());
  Var loss = t.sum(t.mul(frozen, live));
  t.backward(loss);
  CHECK(t.node(frozen.id).grad.empty());
  CHECK_FALSE(t.node(live.id).grad.empty());
}

TEST_CASE("linear applies xW plus bias") {
  ParamStore ps;
  ps.create("lin.w", {2, 3}, {1, 2, 3, 4, 5, 6});
  ps.create("lin.b", {3}, {0.5, -0.5, 1.0});
  Tape t;
  Var x = t.constant({1, 2}, {2.0, 3.0});
  Var y = nn::Linear{"lin", 2, 3}.apply(t, ps, x);
  REQUIRE(y.shape() == ad::Shape{1, 3});
  CHECK(y.value()[0] == doctest::Approx(2 * 1 + 3 * 4 + 0.5));
  CHECK(y.value()[1] == doctest::Approx(2 * 2 + 3 * 5 - 0.5));
  CHECK(y.value()[2] == doctest::Approx(2 * 3 + 3 * 6 + 1.0));
}

TEST_CASE("layer norm with identity affine reproduces the raw normalization") {
  ParamStore ps;
  Rng rng(1);
  nn::LayerNorm{"ln", 4}.init(ps, rng);
  Tape t;
  Var x = t.constant({2, 4}, {1, 2, 3, 4, -2, 0, 2, 8});
  Var y = nn::LayerNorm{"ln", 4}.apply(t, ps, x);
  Var raw = t.layer_norm_rows(x);
  for (size_t i = 0; i < y.value().size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(raw.value()[i]).epsilon(1e-12));
}

TEST_CASE("attention rows are convex mixes under a key mask") {
  ParamStore ps;
  Rng rng(7);
  nn::MultiHeadAttention mha{"attn", 8, 2};
  mha.init(ps, rng);
  Tape t;
  std::vector<double> qv(2 * 8), kv(3 * 8);
  for (auto& v : qv) v = rng.uniform(-1, 1);
  for (auto& v : kv) v = rng.uniform(-1, 1);
  Var q = t.constant({2, 8}, qv);
  Var kvv = t.constant({3, 8}, kv);
  std::vector<uint8_t> mask{1, 0, 1};
  Var out = mha.apply(t, ps, q, kvv, &mask);
  CHECK(out.shape() == ad::Shape{2, 8});

  // A fully masked key set is rejected.
  std::vector<uint8_t> none{0, 0, 0};
  CHECK_THROWS_AS(mha.apply(t, ps, q, kvv, &none), ad::AdError);
  std::vector<uint8_t> wrong{1, 1};
  CHECK_THROWS_AS(mha.apply(t, ps, q, kvv, &wrong), ad::AdError);
}

TEST_CASE("masked keys contribute nothing to attention output") {
  ParamStore ps;
  Rng rng(9);
  nn::MultiHeadAttention mha{"attn", 4, 1};
  mha.init(ps, rng);
  std::vector<double> qv(1 * 4), kv(3 * 4);
  for (auto& v : qv) v = rng.uniform(-1, 1);
  for (auto& v : kv) v = rng.uniform(-1, 1);
  std::vector<uint8_t> mask{1, 0, 1};

  auto run = [&](const std::vector<double>& keys) {
    Tape t;
    Var q = t.constant({1, 4}, qv);
    Var k = t.constant({3, 4}, keys);
    return mha.apply(t, ps, q, k, &mask).value();
  };
  std::vector<double> kv2 = kv;
  for (int j = 0; j < 4; ++j) kv2[size_t(4 + j)] += 17.0;  // masked row only
  CHECK(run(kv) == run(kv2));
}

TEST_CASE("adam first step matches the closed form") {
  ParamStore ps;
  ps.create("w", {1}, {1.0});
  Tape t;
  Var w = ps.leaf(t, "w");
  Var loss = t.scale(w, 3.0);  // gradient 3
  t.backward(t.sum(loss));
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt(cfg);
  double gnorm = opt.step(ps, t);
  CHECK(gnorm == doctest::Approx(3.0).epsilon(1e-12));
  // With bias correction the first step is lr * g / (|g| + eps).
  double expect = 1.0 - 0.1 * 3.0 / (3.0 + cfg.eps);
  CHECK(ps.at("w").value[0] == doctest::Approx(expect).epsilon(1e-9));
  CHECK(ps.at("w").m[0] == doctest::Approx((1 - cfg.beta1) * 3.0).epsilon(1e-12));
  CHECK(ps.at("w").v[0] == doctest::Approx((1 - cfg.beta2) * 9.0).epsilon(1e-9));
}

TEST_CASE("learning-rate overrides pick the longest matching prefix") {
  ParamStore ps;
  ps.create("text.embed.w", {1}, {0.0});
  ps.create("text.other", {1}, {0.0});
  ps.create("head.w", {1}, {0.0});
  Tape t;
  Var a = ps.leaf(t, "text.embed.w");
  Var b = ps.leaf(t, "text.other");
  Var c = ps.leaf(t, "head.w");
  t.backward(t.sum(t.add(t.add(a, b), c)));  // gradient 1 everywhere
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.lr_overrides = {{"text.", 0.01}, {"text.embed.", 0.001}};
  Adam opt(cfg);
  opt.step(ps, t);
  // First-step displacement is the effective lr up to the eps term.
  CHECK(ps.at("text.embed.w").value[0] == doctest::Approx(-0.001).epsilon(1e-6));
  CHECK(ps.at("text.other").value[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(ps.at("head.w").value[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("parameters absent from the tape are left untouched") {
  ParamStore ps;
  ps.create("used", {1}, {1.0});
  ps.create("unused", {1}, {5.0});
  Tape t;
  Var w = ps.leaf(t, "used");
  t.backward(t.sum(w));
  Adam opt(AdamConfig{});
  opt.step(ps, t);
  CHECK(ps.at("unused").value[0] == 5.0);
  CHECK(ps.at("used").value[0] != 1.0);
}

TEST_CASE("adam converges on a small quadratic") {
  ParamStore ps;
  ps.create("w", {2}, {4.0, -3.0});
  AdamConfig cfg;
  cfg.lr = 0.05;
  Adam opt(cfg);
  for (int i = 0; i < 400; ++i) {
    Tape t;
    Var w = ps.leaf(t, "w");
    t.backward(t.sum(t.mul(w, w)));
    opt.step(ps, t);
  }
  CHECK(std::abs(ps.at("w").value[0]) < 0.05);
  CHECK(std::abs(ps.at("w").value[1]) < 0.05);
  CHECK(opt.steps() == 400);
}
