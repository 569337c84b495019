// Assignment solver against exhaustive enumeration, cost assembly, and the
// binary KL helper.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "affr/matching.hpp"
#include "affr/util.hpp"

using namespace affr;

namespace {

// Reference: try every permutation, track the minimum with lexicographic
// tie-break, accumulating costs exactly like assignment_cost.
Assignment exhaustive(const std::vector<std::vector<double>>& cost) {
  int n = int(cost.size());
  std::vector<int> perm(size_t(n));
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best;
  best.total = std::numeric_limits<double>::infinity();
  bool first = true;
  do {
    double c = assignment_cost(cost, perm);
    if (first || c < best.total) {
      best.total = c;
      best.perm = perm;
      first = false;
    }
    // std::next_permutation walks in lexicographic order, so the first
    // minimum seen is the lexicographically smallest optimum.
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::vector<double>> random_cost(Rng& rng, int n, bool integer) {
  std::vector<std::vector<double>> c(size_t(n), std::vector<double>(size_t(n)));
  for (auto& row : c)
    for (auto& v : row) v = integer ? double(rng.uniform_int(6)) : rng.uniform(0, 10);
  return c;
}

}  // namespace

TEST_CASE("solver reproduces a worked example") {
  std::vector<std::vector<double>> cost{{4, 1, 3}, {2, 0, 5}, {3, 2, 2}};
  Assignment a = hungarian(cost);
  CHECK(a.perm == std::vector<int>{1, 0, 2});
  CHECK(a.total == 5.0);
  CHECK(assignment_cost(cost, a.perm) == 5.0);
}

TEST_CASE("ties resolve to the lexicographically smallest permutation") {
  std::vector<std::vector<double>> zeros(4, std::vector<double>(4, 0.0));
  CHECK(hungarian(zeros).perm == std::vector<int>{0, 1, 2, 3});
  std::vector<std::vector<double>> ones{{1, 1}, {1, 1}};
  CHECK(hungarian(ones).perm == std::vector<int>{0, 1});
  // Two optimal assignments; (0,1) beats (1,0) lexicographically.
  std::vector<std::vector<double>> tie{{2, 3}, {4, 5}};
  CHECK(hungarian(tie).perm == std::vector<int>{0, 1});
}

TEST_CASE("solver matches exhaustive search on random matrices") {
  Rng rng(31);
  for (int n = 3; n <= 6; ++n) {
    for (int it = 0; it < 60; ++it) {
      // Integer costs force frequent ties, exercising the tie-break.
      auto cost = random_cost(rng, n, it % 2 == 0);
      Assignment got = hungarian(cost);
      Assignment want = exhaustive(cost);
      CHECK(got.total == want.total);
      CHECK(got.perm == want.perm);
    }
  }
}

TEST_CASE("large instances still produce a valid optimal-cost permutation") {
  Rng rng(37);
  auto cost = random_cost(rng, 25, false);
  Assignment a = hungarian(cost);
  REQUIRE(int(a.perm.size()) == 25);
  std::vector<int> sorted = a.perm;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 25; ++i) CHECK(sorted[size_t(i)] == i);
  CHECK(a.total == doctest::Approx(assignment_cost(cost, a.perm)));
}

TEST_CASE("malformed matrices are rejected") {
  CHECK_THROWS(hungarian({{1, 2}, {3}}));
  CHECK_THROWS(hungarian({{1, 2, 3}, {1, 2, 3}}));
  double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS(hungarian({{1, inf}, {2, 3}}));
  CHECK_THROWS(hungarian({{1, std::nan("")}, {2, 3}}));
}

TEST_CASE("token matching cost follows both formula variants") {
  std::vector<double> p_span{0.5, 0.5, 0, 0};
  std::vector<double> logits{0, 0, 0, 0};  // uniform softmax 1/4
  CHECK(token_match_cost_row(p_span, logits) == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(token_match_cost_row(p_span, logits, true) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // The plain form is bounded in [-1, 0]; the log form is nonnegative.
  Rng rng(41);
  for (int it = 0; it < 500; ++it) {
    std::vector<double> p(4, 0.0);
    double sum = 0;
    for (auto& v : p) {
      v = rng.uniform();
      sum += v;
    }
    for (auto& v : p) v /= sum;
    std::vector<double> lg(4);
    for (auto& v : lg) v = rng.uniform(-6, 6);
    double m = token_match_cost_row(p, lg);
    CHECK(m >= -1.0 - 1e-12);
    CHECK(m <= 0.0 + 1e-12);
    CHECK(token_match_cost_row(p, lg, true) >= -1e-12);
  }
}

TEST_CASE("binary KL matches hand values and floors the second argument") {
  CHECK(binary_kl(1.0, 0.0, 0.5, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(binary_kl(0.5, 0.5, 0.5, 0.5) == doctest::Approx(0.0));
  CHECK(binary_kl(0.0, 1.0, 0.5, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Zero mass in the first argument contributes nothing even against zero.
  CHECK(std::isfinite(binary_kl(0.0, 1.0, 0.0, 1.0)));
  CHECK(binary_kl(0.0, 1.0, 0.0, 1.0) == doctest::Approx(0.0));
  // The floor keeps a zero student probability finite.
  double v = binary_kl(1.0, 0.0, 0.0, 1.0);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(std::log(1e12)).epsilon(1e-9));
}

TEST_CASE("ground-truth cost pads with zero rows") {
  PredictionValues pred;
  pred.boxes = {{0.5, 0.5, 0.2, 0.2}, {0.3, 0.3, 0.1, 0.1}, {0.7, 0.7, 0.2, 0.2}};
  pred.token_logits = {{0, 0, 0, 1}, {1, 0, 0, 0}, {0, 1, 0, 0}};
  pred.scores = {0.5, 0.5, 0.5};
  GroundTruthSet gt;
  gt.img_h = 10;
  gt.img_w = 10;
  GroundTruthObject o;
  o.box = {0.5, 0.5, 0.2, 0.2};
  o.p_span = {1, 0, 0, 0};
  gt.objects.push_back(o);
  auto cost = gt_match_cost(pred, gt);
  REQUIRE(cost.size() == 3);  // padded to n_pred rows
  REQUIRE(cost[0].size() == 3);
  for (int j = 0; j < 3; ++j) {
    CHECK(cost[1][size_t(j)] == 0.0);
    CHECK(cost[2][size_t(j)] == 0.0);
  }
  // Row 0 prefers the identical box.
  CHECK(cost[0][0] < cost[0][1]);
  CHECK(cost[0][0] < cost[0][2]);
  Assignment m = match_to_gt(pred, gt);
  CHECK(m.perm[0] == 0);
}

TEST_CASE("teacher-student pairing prefers nearby boxes") {
  PredictionValues teacher;
  teacher.boxes = {{0.2, 0.2, 0.1, 0.1}, {0.8, 0.8, 0.1, 0.1}};
  teacher.token_logits = {{0, -9}, {0, -9}};
  teacher.scores = {0.9, 0.9};
  PredictionValues student;
  student.boxes = {{0.81, 0.81, 0.1, 0.1}, {0.19, 0.2, 0.1, 0.1}};
  student.token_logits = {{0, -9}, {0, -9}};
  student.scores = {0.9, 0.9};
  Assignment a = match_teacher_student(teacher, student);
  CHECK(a.perm == std::vector<int>{1, 0});
}
