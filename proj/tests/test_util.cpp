// RNG determinism and hashing helpers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "affr/util.hpp"

using namespace affr;

TEST_CASE("same seed reproduces the draw sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 200; ++i) {
    CHECK(a.raw() == b.raw());
  }
  Rng c(42), d(43);
  int diff = 0;
  for (int i = 0; i < 20; ++i)
    if (c.raw() != d.raw()) ++diff;
  CHECK(diff > 0);
}

TEST_CASE("uniform stays in the half-open unit interval") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("uniform_int stays below its bound and covers small ranges") {
  Rng rng(11);
  std::vector<int> seen(5, 0);
  for (int i = 0; i < 5000; ++i) {
    uint64_t v = rng.uniform_int(5);
    REQUIRE(v < 5);
    ++seen[size_t(v)];
  }
  for (int c : seen) CHECK(c > 0);
  CHECK(rng.uniform_int(0) == 0);
  CHECK(rng.uniform_int(1) == 0);
}

TEST_CASE("shuffle permutes without losing elements") {
  Rng rng(3);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[size_t(i)] = i;
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[size_t(i)] == i);
}

TEST_CASE("fork derives a reproducible independent stream") {
  Rng a(9), b(9);
  Rng fa = a.fork(1), fb = b.fork(1);
  for (int i = 0; i < 20; ++i) CHECK(fa.raw() == fb.raw());
}

TEST_CASE("sha256 matches published vectors") {
  CHECK(sha256_hex(std::string()) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string(
            "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")) ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("file hashing agrees with the in-memory digest") {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "affr_util_hash.txt";
  write_text_file(p.string(), "hello\nworld\n");
  CHECK(sha256_file(p.string()) == sha256_hex(std::string("hello\nworld\n")));
  CHECK(read_text_file(p.string()) == "hello\nworld\n");
  fs::remove(p);
  CHECK_THROWS(sha256_file(p.string()));
}

TEST_CASE("fmt_real round-trips doubles through text") {
  for (double v : {0.0, 0.5, 1.0 / 3.0, -2.75, 3.0e-4, 123456.789, 1e-12}) {
    std::string s = fmt_real(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(fmt_real(0.5) == "0.5");
  CHECK(fmt_real(1.0) == "1.0");
}

TEST_CASE("split and join are inverse on single-space text") {
  auto parts = split_ws("  drink   water with \t cup\n");
  REQUIRE(parts.size() == 4);
  CHECK(parts[0] == "drink");
  CHECK(parts[3] == "cup");
  CHECK(join(parts, " ") == "drink water with cup");
  CHECK(split_ws("").empty());
  CHECK(split_ws("   ").empty());
}
