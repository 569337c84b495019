// Binary checkpoint container: byte-exact round trips, corruption
// detection with offsets, and parameter/bank restoration.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "affr/checkpoint.hpp"
#include "affr/util.hpp"

using namespace affr;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / name; }

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.config_hash = "cafe0123";
  ck.add("alpha", {2, 3}, {1, 2, 3, 4, 5, 6});
  ck.add("beta", {2}, {-0.5, 0.25});
  ck.add("gamma", {1}, {42});
  return ck;
}

std::string file_bytes(const fs::path& p) { return read_text_file(p.string()); }

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("save then load restores every array and the config hash") {
  Checkpoint ck = sample_checkpoint();
  fs::path p = tmp("affr_ck_rt.bin");
  ck.save(p.string());
  Checkpoint back = Checkpoint::load(p.string());
  CHECK(back.version == 1);
  CHECK(back.config_hash == "cafe0123");
  REQUIRE(back.arrays.size() == 3);
  CHECK(back.arrays.at("alpha").shape == std::vector<int>{2, 3});
  CHECK(back.arrays.at("alpha").data == std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(back.arrays.at("beta").data == std::vector<double>{-0.5, 0.25});
  // Saving the loaded copy reproduces the file byte for byte.
  fs::path q = tmp("affr_ck_rt2.bin");
  back.save(q.string());
  CHECK(sha256_file(p.string()) == sha256_file(q.string()));
  fs::remove(p);
  fs::remove(q);
}

TEST_CASE("adding arrays validates names and sizes") {
  Checkpoint ck;
  ck.add("a", {2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(ck.add("a", {1}, {0}), doctest::Contains("duplicate"), CheckpointError);
  CHECK_THROWS_WITH_AS(ck.add("b", {3}, {1, 2}), doctest::Contains("shape"), CheckpointError);
  CHECK_THROWS_AS(ck.add("c", {-1}, {}), CheckpointError);
}

TEST_CASE("truncated files report the byte offset where reading stopped") {
  Checkpoint ck = sample_checkpoint();
  fs::path p = tmp("affr_ck_trunc.bin");
  ck.save(p.string());
  std::string full = file_bytes(p);
  // Cut at several depths: inside the magic, the header, and the payload.
  for (size_t cut : {size_t(4), size_t(20), full.size() - 9}) {
    fs::path t = tmp("affr_ck_cut.bin");
    write_bytes(t, full.substr(0, cut));
    try {
      Checkpoint::load(t.string());
      FAIL("truncated file was accepted");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("truncated checkpoint at byte offset") !=
            std::string::npos);
      CHECK(e.offset >= 0);
      CHECK(e.offset <= int64_t(cut));
    }
    fs::remove(t);
  }
  fs::remove(p);
}

TEST_CASE("bad magic and trailing bytes are rejected") {
  Checkpoint ck = sample_checkpoint();
  fs::path p = tmp("affr_ck_bad.bin");
  ck.save(p.string());
  std::string full = file_bytes(p);

  std::string wrong = full;
  wrong[0] = 'X';
  write_bytes(p, wrong);
  CHECK_THROWS_WITH_AS(Checkpoint::load(p.string()), doctest::Contains("bad magic"),
                       CheckpointError);

  write_bytes(p, full + "junk");
  try {
    Checkpoint::load(p.string());
    FAIL("trailing bytes were accepted");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("trailing bytes") != std::string::npos);
    CHECK(e.offset == int64_t(full.size()));
  }
  fs::remove(p);
}

TEST_CASE("missing files are reported by name") {
  CHECK_THROWS_WITH_AS(Checkpoint::load(tmp("affr_ck_absent.bin").string()),
                       doctest::Contains("affr_ck_absent"), CheckpointError);
}

TEST_CASE("parameters and Adam moments survive a checkpoint round trip") {
  nn::ParamStore ps;
  ps.create("enc.w", {2, 2}, {1, 2, 3, 4});
  ps.create("enc.b", {2}, {0.5, -0.5});
  ps.entries().at("enc.w").m = {0.1, 0.2, 0.3, 0.4};
  ps.entries().at("enc.w").v = {0.01, 0.02, 0.03, 0.04};

  Checkpoint ck = checkpoint_from_params(ps, "deadbeef");
  CHECK(ck.arrays.count("param.enc.w") == 1);
  CHECK(ck.arrays.count("adam.m.enc.w") == 1);
  CHECK(ck.arrays.count("adam.v.enc.b") == 1);

  nn::ParamStore fresh;
  fresh.create("enc.w", {2, 2}, {0, 0, 0, 0});
  fresh.create("enc.b", {2}, {0, 0});
  params_from_checkpoint(ck, fresh);
  CHECK(fresh.entries().at("enc.w").value == std::vector<ad::real>{1, 2, 3, 4});
  CHECK(fresh.entries().at("enc.w").m == std::vector<ad::real>{0.1, 0.2, 0.3, 0.4});
  CHECK(fresh.entries().at("enc.b").value == std::vector<ad::real>{0.5, -0.5});

  // A store entry absent from the checkpoint refuses to load.
  nn::ParamStore extra;
  extra.create("enc.w", {2, 2}, {0, 0, 0, 0});
  extra.create("other", {1}, {0});
  CHECK_THROWS_WITH_AS(params_from_checkpoint(ck, extra), doctest::Contains("other"),
                       CheckpointError);

  // Shape mismatches are named.
  nn::ParamStore wrong;
  wrong.create("enc.w", {4}, {0, 0, 0, 0});
  wrong.create("enc.b", {2}, {0, 0});
  CHECK_THROWS_WITH_AS(params_from_checkpoint(ck, wrong), doctest::Contains("enc.w"),
                       CheckpointError);
}

TEST_CASE("absent moment arrays leave the store's moments untouched") {
  Checkpoint ck;
  ck.config_hash = "h";
  ck.add("param.w", {2}, {7, 8});
  nn::ParamStore ps;
  ps.create("w", {2}, {0, 0});
  ps.entries().at("w").m = {0.5, 0.5};
  params_from_checkpoint(ck, ps);
  CHECK(ps.entries().at("w").value == std::vector<ad::real>{7, 8});
  CHECK(ps.entries().at("w").m == std::vector<ad::real>{0.5, 0.5});
}

TEST_CASE("memory bank state rides in the same container") {
  MemoryBank bank(2, 4, 3, 2);
  Rng rng(5);
  for (int i = 0; i < 6; ++i) {
    std::vector<double> f = {rng.uniform(), rng.uniform(), rng.uniform()};
    bank.update(i % 2, f);
  }
  bank.recluster_all(11);

  Checkpoint ck;
  ck.config_hash = "h";
  CHECK_FALSE(checkpoint_has_bank(ck));
  add_bank_to_checkpoint(ck, bank);
  CHECK(checkpoint_has_bank(ck));

  fs::path p = tmp("affr_ck_bank.bin");
  ck.save(p.string());
  Checkpoint back = Checkpoint::load(p.string());
  MemoryBank restored = bank_from_checkpoint(back);
  for (int t = 0; t < 2; ++t) {
    CHECK(restored.queue(t) == bank.queue(t));
    CHECK(restored.centers_fresh(t) == bank.centers_fresh(t));
    if (bank.centers_fresh(t)) CHECK(restored.centers(t) == bank.centers(t));
  }
  fs::remove(p);

  Checkpoint no_bank;
  CHECK_THROWS_WITH_AS(bank_from_checkpoint(no_bank), doctest::Contains("no memory bank"),
                       CheckpointError);
}

TEST_CASE("loading against the wrong config hash is refused unless forced") {
  Checkpoint ck = sample_checkpoint();
  fs::path p = tmp("affr_ck_hash.bin");
  ck.save(p.string());
  CHECK_THROWS_WITH_AS(load_checkpoint_for(p.string(), "other", false),
                       doctest::Contains("--force"), CheckpointError);
  Checkpoint ok = load_checkpoint_for(p.string(), "cafe0123", false);
  CHECK(ok.arrays.size() == 3);
  Checkpoint forced = load_checkpoint_for(p.string(), "other", true);
  CHECK(forced.config_hash == "cafe0123");
  fs::remove(p);
}
