// End-to-end model forward: output contracts, preference scores, prototype
// replacement, and the text-only feature path.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "affr/detector.hpp"

using namespace affr;
using ad::Tape;
using ad::Var;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.dim = 16;
  c.heads = 2;
  c.n_max = 10;
  c.n_pred = 4;
  c.vocab_size = 16;
  c.patch = 4;
  c.text_layers = 1;
  c.vis_layers = 1;
  c.enc_layers = 1;
  c.dec_layers = 2;
  c.align_dim = 8;
  c.mask_dim = 8;
  return c;
}

Vocabulary test_vocab() {
  return Vocabulary::from_tokens({"<pad>", "<noobj>", "something", "it", "them", "abcd", "drink",
                                  "water", "with", "red", "cup"});
}

Prompt test_prompt(PromptForm form, int n_max) {
  if (form == PromptForm::kNoun)
    return tokenize(build_prompt("drink water with", form, {"red cup"}, 1), test_vocab(), n_max);
  return tokenize(build_prompt("drink water with", form, {}, form == PromptForm::kEmpty ? 0 : 1),
                  test_vocab(), n_max);
}

Image test_image(int side, uint64_t seed) {
  Rng rng(seed);
  Image img{side, side, std::vector<double>(size_t(side) * size_t(side) * 3)};
  for (auto& v : img.px) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("forward obeys the output shape contracts") {
  ModelConfig cfg = small_config();
  AffordanceModel model(cfg);
  nn::ParamStore ps;
  Rng rng(1);
  model.init(ps, rng);
  Image img = test_image(16, 2);
  for (PromptForm form : {PromptForm::kNoun, PromptForm::kPronoun, PromptForm::kEmpty}) {
    Tape t;
    Prediction p = model.forward(t, ps, img, test_prompt(form, cfg.n_max));
    CHECK(p.n_pred == 4);
    CHECK(p.n_max == 10);
    CHECK(p.boxes.shape() == ad::Shape{4, 4});
    CHECK(p.token_logits.shape() == ad::Shape{4, 10});
    CHECK(int(p.layer_token_logits.size()) == cfg.dec_layers);
    CHECK(p.scores.shape() == ad::Shape{4, 1});
    CHECK(p.mask_logits.rows() == 4);
    CHECK(p.mask_logits.cols() == p.mask_h * p.mask_w);
    CHECK(p.mask_h > 0);
    CHECK(p.object_embed.shape() == ad::Shape{4, 8});
    CHECK(p.token_embed.shape() == ad::Shape{10, 8});
    CHECK(p.text_after_va.shape() == ad::Shape{10, 16});
    for (double b : p.boxes.value()) {
      CHECK(b > 0.0);
      CHECK(b < 1.0);
    }
  }
}

TEST_CASE("scores equal the probability mass off the no-object slot") {
  ModelConfig cfg = small_config();
  AffordanceModel model(cfg);
  nn::ParamStore ps;
  Rng rng(3);
  model.init(ps, rng);
  Tape t;
  Prediction p = model.forward(t, ps, test_image(16, 4), test_prompt(PromptForm::kPronoun, 10));
  PredictionValues v = snapshot(p);
  REQUIRE(int(v.scores.size()) == 4);
  for (int q = 0; q < 4; ++q) {
    double s = AffordanceModel::preference_score_row(v.token_logits[size_t(q)]);
    CHECK(std::abs(s - v.scores[size_t(q)]) < 1e-12);
    auto [pos, neg] = AffordanceModel::binary_probs_row(v.token_logits[size_t(q)]);
    CHECK(std::abs(pos + neg - 1.0) < 1e-12);
    CHECK(std::abs(pos - s) < 1e-12);
  }
}

TEST_CASE("snapshot mirrors the live prediction values") {
  ModelConfig cfg = small_config();
  AffordanceModel model(cfg);
  nn::ParamStore ps;
  Rng rng(5);
  model.init(ps, rng);
  Tape t;
  Prediction p = model.forward(t, ps, test_image(16, 6), test_prompt(PromptForm::kNoun, 10));
  PredictionValues v = snapshot(p);
  for (int q = 0; q < 4; ++q) {
    for (int c = 0; c < 4; ++c)
      CHECK(v.boxes[size_t(q)][size_t(c)] == p.boxes.value()[size_t(q * 4 + c)]);
    for (int c = 0; c < 10; ++c)
      CHECK(v.token_logits[size_t(q)][size_t(c)] ==
            p.token_logits.value()[size_t(q * 10 + c)]);
    CHECK(v.scores[size_t(q)] == p.scores.value()[size_t(q)]);
  }
}

TEST_CASE("prototype replacement swaps exactly the requested rows") {
  ModelConfig cfg = small_config();
  AffordanceModel model(cfg);
  nn::ParamStore ps;
  Rng rng(7);
  model.init(ps, rng);
  Image img = test_image(16, 8);
  Prompt prompt = test_prompt(PromptForm::kPronoun, 10);
  REQUIRE(prompt.pronoun_span.len() == 1);

  Tape t0;
  Prediction base = model.forward(t0, ps, img, prompt);

  std::vector<double> proto(16);
  for (int j = 0; j < 16; ++j) proto[size_t(j)] = 0.1 * double(j) - 0.4;
  ForwardOptions opts;
  opts.replace_vec = &proto;
  opts.replace_span = prompt.pronoun_span;
  Tape t1;
  Prediction rep = model.forward(t1, ps, img, prompt, opts);

  const auto& bv = base.text_after_va.value();
  const auto& rv = rep.text_after_va.value();
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < 16; ++c) {
      double got = rv[size_t(r * 16 + c)];
      if (r >= prompt.pronoun_span.begin && r < prompt.pronoun_span.end) {
        CHECK(got == proto[size_t(c)]);
      } else {
        CHECK(got == bv[size_t(r * 16 + c)]);
      }
    }
  }
  // Downstream heads see the replacement.
  CHECK(rep.token_logits.value() != base.token_logits.value());
}

TEST_CASE("replaced rows carry no gradient back to the parameters") {
  ModelConfig cfg = small_config();
  AffordanceModel model(cfg);
  nn::ParamStore ps;
  Rng rng(9);
  model.init(ps, rng);
  Prompt prompt = test_prompt(PromptForm::kPronoun, 10);
  std::vector<double> proto(16, 0.25);
  ForwardOptions opts;
  opts.replace_vec = &proto;
  opts.replace_span = prompt.pronoun_span;
  Tape t;
  Prediction p = model.forward(t, ps, test_image(16, 10), prompt, opts);
  Var span_only =
      t.sum(t.slice_rows(p.text_after_va, prompt.pronoun_span.begin, prompt.pronoun_span.end));
  t.backward(span_only);
  for (const auto& [name, id] : t.named_inputs()) {
    const auto& g = t.node(id).grad;
    bool zero = true;
    for (double x : g) zero = zero && x == 0.0;
    INFO("parameter ", name);
    CHECK(zero);
  }
}

TEST_CASE("text-only feature rows match the forward text stream bitwise") {
  ModelConfig cfg = small_config();
  AffordanceModel model(cfg);
  nn::ParamStore ps;
  Rng rng(11);
  model.init(ps, rng);
  for (PromptForm form : {PromptForm::kNoun, PromptForm::kPronoun, PromptForm::kEmpty}) {
    Prompt prompt = test_prompt(form, 10);
    auto rows = model.text_feature_rows(ps, prompt);
    Tape t;
    Prediction p = model.forward(t, ps, test_image(16, 12), prompt);
    REQUIRE(int(rows.size()) == 10);
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 16; ++c)
        CHECK(rows[size_t(r)][size_t(c)] == p.text_after_va.value()[size_t(r * 16 + c)]);
  }
}

TEST_CASE("module toggles change the computation") {
  ModelConfig cfg = small_config();
  Image img = test_image(16, 14);

  auto run = [&](bool va, bool bf) {
    ModelConfig c = cfg;
    c.use_verb_attention = va;
    c.use_bi_fusion = bf;
    AffordanceModel model(c);
    nn::ParamStore ps;
    Rng rng(15);
    model.init(ps, rng);
    // Gates start closed, so open them to make fusion observable.
    for (auto& [name, e] : ps.entries())
      if (name == "bf.gamma_v" || name == "bf.gamma_t") e.value[0] = ad::real(0.5);
    Tape t;
    return model.forward(t, ps, img, test_prompt(PromptForm::kPronoun, 10))
        .token_logits.value();
  };
  auto base = run(false, false);
  CHECK(run(true, false) != base);
  CHECK(run(false, true) != base);
  CHECK(run(true, true) != base);
}

TEST_CASE("model config canonical text is stable and hashed") {
  ModelConfig a = small_config();
  ModelConfig b = small_config();
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
  b.dim = 32;
  CHECK(a.hash() != b.hash());
  CHECK(a.canonical().find("dim") != std::string::npos);
}
