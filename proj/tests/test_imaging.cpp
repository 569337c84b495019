// Raster primitives: run-length codec, polygon fill, resampling, PNG IO,
// and mask IoU conventions.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <numeric>

#include "affr/image.hpp"
#include "affr/util.hpp"

using namespace affr;

namespace {

Mask random_mask(Rng& rng, int h, int w, double p) {
  Mask m{h, w, std::vector<uint8_t>(size_t(h) * size_t(w), 0)};
  for (auto& v : m.v) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("rle counts start with the zero run and sum to the area") {
  Mask m{2, 3, {1, 1, 0, 0, 1, 0}};
  auto counts = rle_encode(m);
  REQUIRE(counts.size() >= 2);
  CHECK(counts[0] == 0);  // mask starts with a 1
  CHECK(std::accumulate(counts.begin(), counts.end(), int64_t(0)) == 6);
  Mask back = rle_decode(counts, 2, 3);
  CHECK(back.v == m.v);
}

TEST_CASE("rle round-trips random masks") {
  Rng rng(5);
  for (int it = 0; it < 200; ++it) {
    int h = 1 + int(rng.uniform_int(12));
    int w = 1 + int(rng.uniform_int(12));
    Mask m = random_mask(rng, h, w, rng.uniform(0.05, 0.95));
    Mask back = rle_decode(rle_encode(m), h, w);
    REQUIRE(back.h == h);
    REQUIRE(back.w == w);
    CHECK(back.v == m.v);
  }
}

TEST_CASE("rle rejects counts that do not cover the area") {
  CHECK_THROWS(rle_decode({3, 2}, 2, 3));
}

TEST_CASE("polygon fill covers pixel centers inside the contour") {
  // Square with corners (1,1)-(5,5): centers x+0.5 in (1,5) give x=1..4.
  Mask m = polygon_to_mask({1, 1, 5, 1, 5, 5, 1, 5}, 8, 8);
  CHECK(m.area() == 16);
  CHECK(m.v[size_t(2 * 8 + 2)] == 1);
  CHECK(m.v[size_t(0 * 8 + 0)] == 0);
  CHECK(m.v[size_t(6 * 8 + 6)] == 0);

  // Right triangle (0,0)-(8,0)-(0,8) covers roughly half the canvas.
  Mask tri = polygon_to_mask({0, 0, 8, 0, 0, 8}, 8, 8);
  CHECK(tri.area() > 20);
  CHECK(tri.area() < 40);
  CHECK(tri.v[size_t(0 * 8 + 0)] == 1);
  CHECK(tri.v[size_t(7 * 8 + 7)] == 0);
}

TEST_CASE("png round-trips quantized images bitwise") {
  namespace fs = std::filesystem;
  Rng rng(17);
  Image img{5, 7, {}};
  img.px.resize(size_t(5 * 7 * 3));
  for (auto& v : img.px) v = double(rng.uniform_int(256)) / 255.0;
  fs::path p = fs::temp_directory_path() / "affr_imaging_rt.png";
  write_png(p.string(), img);
  Image back = read_png(p.string());
  REQUIRE(back.h == 5);
  REQUIRE(back.w == 7);
  CHECK(back.px == img.px);

  // Deterministic encoder: a second write produces identical bytes.
  fs::path p2 = fs::temp_directory_path() / "affr_imaging_rt2.png";
  write_png(p2.string(), img);
  CHECK(sha256_file(p.string()) == sha256_file(p2.string()));
  fs::remove(p);
  fs::remove(p2);
}

TEST_CASE("downsample thresholds block coverage at one half") {
  Mask m{4, 4, {1, 1, 0, 0,   //
                1, 1, 0, 0,   //
                1, 0, 0, 1,   //
                0, 0, 1, 1}};
  Mask d = downsample_mask(m, 2);
  REQUIRE(d.h == 2);
  REQUIRE(d.w == 2);
  CHECK(d.v[0] == 1);  // 4/4 covered
  CHECK(d.v[1] == 0);  // 0/4
  CHECK(d.v[2] == 0);  // 1/4, below one half
  CHECK(d.v[3] == 1);  // 3/4
  CHECK_THROWS(downsample_mask(m, 3));
}

TEST_CASE("bilinear resize preserves constants and the identity") {
  std::vector<double> field{1, 2, 3, 4, 5, 6};
  CHECK(bilinear_resize(field, 2, 3, 2, 3) == field);
  std::vector<double> c(12, 0.75);
  for (double v : bilinear_resize(c, 3, 4, 7, 5)) CHECK(v == doctest::Approx(0.75));
  std::vector<double> one{2.5};
  for (double v : bilinear_resize(one, 1, 1, 4, 4)) CHECK(v == doctest::Approx(2.5));
  // Values never escape the source range.
  Rng rng(23);
  std::vector<double> src(size_t(6 * 5));
  for (auto& v : src) v = rng.uniform();
  for (double v : bilinear_resize(src, 6, 5, 17, 13)) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("mask iou conventions") {
  Mask a{2, 2, {0, 0, 0, 0}};
  Mask b{2, 2, {0, 0, 0, 0}};
  CHECK(mask_iou(a, b) == 1.0);  // empty vs empty
  b.v = {1, 0, 0, 0};
  CHECK(mask_iou(a, b) == 0.0);
  a.v = {1, 0, 0, 0};
  CHECK(mask_iou(a, b) == 1.0);
  a.v = {1, 1, 0, 0};
  b.v = {0, 1, 1, 0};
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0));
}
