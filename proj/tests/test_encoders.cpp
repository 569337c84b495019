// Text and image encoders: position tables, shapes, masking, determinism.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "affr/encoders.hpp"

using namespace affr;
using ad::Tape;
using ad::Var;

namespace {

Vocabulary test_vocab() {
  return Vocabulary::from_tokens(
      {"<pad>", "<noobj>", "something", "it", "them", "abcd", "drink", "water", "with"});
}

Prompt test_prompt(int n_max = 8) {
  return tokenize(build_prompt("drink water with", PromptForm::kPronoun, {}, 1), test_vocab(),
                  n_max);
}

Image test_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Image img{h, w, std::vector<double>(size_t(h) * size_t(w) * 3)};
  for (auto& v : img.px) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("sinusoid tables have the right extent and stay bounded") {
  auto p1 = sinusoid_1d(6, 8);
  REQUIRE(p1.size() == size_t(6 * 8));
  for (double v : p1) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(p1[0] == doctest::Approx(std::sin(0.0)));  // position 0, first channel

  auto p2 = sinusoid_2d(3, 4, 8);
  REQUIRE(p2.size() == size_t(12 * 8));
  CHECK(sinusoid_2d(3, 4, 8) == p2);  // deterministic

  // Distinct positions receive distinct encodings.
  bool all_same = true;
  for (int c = 0; c < 8; ++c) all_same = all_same && p1[size_t(c)] == p1[size_t(8 + c)];
  CHECK_FALSE(all_same);
}

TEST_CASE("text encoder emits one row per sequence slot") {
  TextEncoder enc(16, 8, 2, 1);
  nn::ParamStore ps;
  Rng rng(3);
  enc.init(ps, rng);
  Prompt p = test_prompt();
  Tape t;
  TextFeatures f = enc.encode(t, ps, p);
  CHECK(f.features.shape() == ad::Shape{8, 8});
  CHECK(f.mask == p.attend_mask());
  CHECK(f.prompt.content_len == p.content_len);

  Var e = enc.embed(t, ps, p);
  CHECK(e.shape() == ad::Shape{8, 8});
}

TEST_CASE("text encoding is deterministic for fixed parameters") {
  TextEncoder enc(16, 8, 2, 2);
  nn::ParamStore ps;
  Rng rng(11);
  enc.init(ps, rng);
  Prompt p = test_prompt();
  Tape t1, t2;
  CHECK(enc.encode(t1, ps, p).features.value() == enc.encode(t2, ps, p).features.value());
}

TEST_CASE("image encoder grids the canvas into patches") {
  ImageEncoder enc(4, 8, 2, 1);
  nn::ParamStore ps;
  Rng rng(5);
  enc.init(ps, rng);
  Image img = test_image(12, 8, 1);
  Tape t;
  VisualFeatures f = enc.encode(t, ps, img);
  CHECK(f.gh == 3);
  CHECK(f.gw == 2);
  CHECK(f.features.shape() == ad::Shape{6, 8});
  CHECK(enc.patch_embed(t, ps, img).shape() == ad::Shape{6, 8});
}

TEST_CASE("off-grid image sizes are rejected naming a valid size") {
  ImageEncoder enc(8, 8, 2, 1);
  nn::ParamStore ps;
  Rng rng(5);
  enc.init(ps, rng);
  Image img = test_image(12, 16, 2);
  Tape t;
  try {
    enc.encode(t, ps, img);
    FAIL("expected rejection");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("8") != std::string::npos);
  }
}

TEST_CASE("patch content drives exactly its own embedding row") {
  ImageEncoder enc(4, 8, 2, 1);
  nn::ParamStore ps;
  Rng rng(5);
  enc.init(ps, rng);
  Image a = test_image(8, 8, 3);
  Image b = a;
  b.at(1, 1)[0] += 0.25;  // inside patch (0,0)
  Tape t;
  auto ea = enc.patch_embed(t, ps, a).value();
  auto eb = enc.patch_embed(t, ps, b).value();
  bool row0_differs = false;
  for (int c = 0; c < 8; ++c) row0_differs = row0_differs || ea[size_t(c)] != eb[size_t(c)];
  CHECK(row0_differs);
  for (size_t i = 8; i < ea.size(); ++i) CHECK(ea[i] == eb[i]);
}
