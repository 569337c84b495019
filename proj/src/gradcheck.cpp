#include "affr/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "affr/autodiff.hpp"
#include "affr/fusion.hpp"
#include "affr/losses.hpp"
#include "affr/util.hpp"

namespace affr {

namespace {

using ad::Shape;
using ad::Tape;
using ad::Var;
using ad::real;

using Builder = std::function<Var(Tape&, Var)>;
// Per probe point: draws the input and any fixed co-arguments.
using PointMaker = std::function<std::pair<Shape, std::vector<real>>(Rng&, Builder*)>;

GradCheckCase run_case(const std::string& name, int points, uint64_t seed,
                       const PointMaker& make) {
  GradCheckCase c;
  c.name = name;
  c.points = points;
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed ^ (0x9e3779b97f4a7c15ull * (1 + std::hash<std::string>{}(name))));
  for (int p = 0; p < points; ++p) {
    Builder f;
    auto [shape, x] = make(rng, &f);
    ad::GradCheckResult r = ad::finite_difference_check(f, shape, x);
    c.max_err = std::max(c.max_err, r.max_rel_err);
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

std::vector<real> draw(Rng& rng, size_t n, double lo, double hi) {
  std::vector<real> v(n);
  for (auto& x : v) x = real(rng.uniform(lo, hi));
  return v;
}

// Box away from degeneracy: center well inside, extent bounded.
std::vector<real> draw_box(Rng& rng) {
  return {real(rng.uniform(0.35, 0.65)), real(rng.uniform(0.35, 0.65)),
          real(rng.uniform(0.2, 0.5)), real(rng.uniform(0.2, 0.5))};
}

double min_coord_gap(const std::vector<real>& a, const std::vector<real>& b) {
  double corners_a[4] = {double(a[0]) - double(a[2]) / 2, double(a[1]) - double(a[3]) / 2,
                         double(a[0]) + double(a[2]) / 2, double(a[1]) + double(a[3]) / 2};
  double corners_b[4] = {double(b[0]) - double(b[2]) / 2, double(b[1]) - double(b[3]) / 2,
                         double(b[0]) + double(b[2]) / 2, double(b[1]) + double(b[3]) / 2};
  double gap = 1e9;
  for (int i = 0; i < 4; ++i) gap = std::min(gap, std::abs(corners_a[i] - corners_b[i]));
  return gap;
}

std::vector<double> random_span_row(Rng& rng, int n) {
  int b = int(rng.uniform_int(uint64_t(n - 2)));
  int e = b + 1 + int(rng.uniform_int(uint64_t(n - 1 - b)));
  std::vector<double> row(size_t(n), 0.0);
  for (int i = b; i < e; ++i) row[size_t(i)] = 1.0 / double(e - b);
  return row;
}

void randomize_store(nn::ParamStore& ps, Rng& rng) {
  for (auto& [name, e] : ps.entries())
    for (auto& v : e.value) v = real(rng.uniform(-0.5, 0.5));
}

// Alignment-case and fusion-case dimensions.
constexpr int kObj = 3, kTok = 6, kEmb = 4;
constexpr int kDim = 8, kHeads = 2, kNv = 4, kNt = 5;

}  // namespace

std::vector<GradCheckCase> run_gradcheck(int points, uint64_t seed) {
  std::vector<GradCheckCase> out;

  out.push_back(run_case("l1_box", points, seed, [](Rng& rng, Builder* f) {
    std::vector<real> a = draw_box(rng), b;
    do {
      b = draw_box(rng);
    } while (std::abs(double(a[0]) - double(b[0])) < 0.05 ||
             std::abs(double(a[1]) - double(b[1])) < 0.05 ||
             std::abs(double(a[2]) - double(b[2])) < 0.05 ||
             std::abs(double(a[3]) - double(b[3])) < 0.05);
    *f = [b](Tape& t, Var x) { return l1_box_loss(t, x, t.constant({1, 4}, b)); };
    return std::pair<Shape, std::vector<real>>({1, 4}, a);
  }));

  out.push_back(run_case("giou", points, seed, [](Rng& rng, Builder* f) {
    std::vector<real> a = draw_box(rng), b;
    do {
      b = draw_box(rng);
    } while (min_coord_gap(a, b) < 0.02);
    *f = [b](Tape& t, Var x) { return giou_loss(t, x, t.constant({1, 4}, b)); };
    return std::pair<Shape, std::vector<real>>({1, 4}, a);
  }));

  out.push_back(run_case("token_m", points, seed, [](Rng& rng, Builder* f) {
    const int n = 8;
    std::vector<double> p = random_span_row(rng, n);
    *f = [p](Tape& t, Var x) { return token_m_cost(t, x, p, false); };
    return std::pair<Shape, std::vector<real>>({1, n}, draw(rng, n, -2.0, 2.0));
  }));

  out.push_back(run_case("token_m_log", points, seed, [](Rng& rng, Builder* f) {
    const int n = 8;
    std::vector<double> p = random_span_row(rng, n);
    *f = [p](Tape& t, Var x) { return token_m_cost(t, x, p, true); };
    return std::pair<Shape, std::vector<real>>({1, n}, draw(rng, n, -2.0, 2.0));
  }));

  out.push_back(run_case("soft_token", points, seed, [](Rng& rng, Builder* f) {
    const int n = 8;
    std::vector<double> p = random_span_row(rng, n);
    *f = [p](Tape& t, Var x) { return soft_token_loss(t, x, p); };
    return std::pair<Shape, std::vector<real>>({1, n}, draw(rng, n, -2.0, 2.0));
  }));

  out.push_back(run_case("dice", points, seed, [](Rng& rng, Builder* f) {
    const int n = 16;
    std::vector<double> target(n);
    for (auto& v : target) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    *f = [target](Tape& t, Var x) { return dice_loss(t, x, target); };
    return std::pair<Shape, std::vector<real>>({1, n}, draw(rng, n, -2.0, 2.0));
  }));

  out.push_back(run_case("focal", points, seed, [](Rng& rng, Builder* f) {
    const int n = 16;
    std::vector<double> target(n);
    for (auto& v : target) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    *f = [target](Tape& t, Var x) { return focal_loss(t, x, target, 0.25, 2.0); };
    return std::pair<Shape, std::vector<real>>({1, n}, draw(rng, n, -2.0, 2.0));
  }));

  auto draw_positives = [](Rng& rng) {
    std::vector<std::vector<int>> pos(kObj);
    bool any = false;
    for (auto& row : pos)
      for (int k = 0; k < kTok; ++k)
        if (rng.bernoulli(0.3)) {
          row.push_back(k);
          any = true;
        }
    if (!any) pos[0].push_back(0);
    return pos;
  };

  out.push_back(run_case("contrastive_alignment_obj", points, seed,
                         [&draw_positives](Rng& rng, Builder* f) {
    std::vector<std::vector<int>> pos = draw_positives(rng);
    std::vector<real> tok = draw(rng, size_t(kTok) * kEmb, -1.0, 1.0);
    *f = [pos, tok](Tape& t, Var x) {
      return contrastive_alignment_loss(t, x, t.constant({kTok, kEmb}, tok), pos, 0.07);
    };
    return std::pair<Shape, std::vector<real>>({kObj, kEmb}, draw(rng, size_t(kObj) * kEmb, -1.0, 1.0));
  }));

  out.push_back(run_case("contrastive_alignment_tok", points, seed,
                         [&draw_positives](Rng& rng, Builder* f) {
    std::vector<std::vector<int>> pos = draw_positives(rng);
    std::vector<real> obj = draw(rng, size_t(kObj) * kEmb, -1.0, 1.0);
    *f = [pos, obj](Tape& t, Var x) {
      return contrastive_alignment_loss(t, t.constant({kObj, kEmb}, obj), x, pos, 0.07);
    };
    return std::pair<Shape, std::vector<real>>({kTok, kEmb}, draw(rng, size_t(kTok) * kEmb, -1.0, 1.0));
  }));

  out.push_back(run_case("cluster", points, seed, [](Rng& rng, Builder* f) {
    const int d = 8;
    std::vector<real> x;
    std::vector<double> center(d);
    double dist;
    do {
      x = draw(rng, d, -1.0, 1.0);
      dist = 0;
      for (int i = 0; i < d; ++i) {
        center[size_t(i)] = rng.uniform(-1.0, 1.0);
        dist += (double(x[size_t(i)]) - center[size_t(i)]) * (double(x[size_t(i)]) - center[size_t(i)]);
      }
    } while (std::sqrt(dist) < 0.1);
    *f = [center](Tape& t, Var v) { return cluster_loss(t, v, center); };
    return std::pair<Shape, std::vector<real>>({1, d}, x);
  }));

  out.push_back(run_case("binary_kl", points, seed, [](Rng& rng, Builder* f) {
    const int n_t = 2, n_s = 3, n_max = 6;
    std::vector<std::pair<double, double>> tb;
    for (int i = 0; i < n_t; ++i) {
      double p = rng.uniform(0.05, 0.95);
      tb.emplace_back(p, 1.0 - p);
    }
    std::vector<int> map = {0, 1};
    *f = [tb, map](Tape& t, Var x) { return soft_binary_target_loss(t, x, tb, map); };
    return std::pair<Shape, std::vector<real>>({n_s, n_max}, draw(rng, size_t(n_s) * n_max, -2.0, 2.0));
  }));

  out.push_back(run_case("bi_fusion_visual", points, seed, [&](Rng& rng, Builder* f) {
    nn::ParamStore ps;
    Rng init_rng(rng.raw());
    BiFusion bf(kDim, kHeads);
    bf.init(ps, init_rng);
    randomize_store(ps, rng);
    std::vector<real> text = draw(rng, size_t(kNt) * kDim, -1.0, 1.0);
    std::vector<uint8_t> mask(kNt, 1);
    auto store = std::make_shared<nn::ParamStore>(std::move(ps));
    *f = [store, bf, text, mask](Tape& t, Var x) {
      auto [v2, t2] = bf.apply(t, *store, x, t.constant({kNt, kDim}, text), mask, false);
      return t.sum(v2) + t.sum(t2);
    };
    return std::pair<Shape, std::vector<real>>({kNv, kDim}, draw(rng, size_t(kNv) * kDim, -1.0, 1.0));
  }));

  out.push_back(run_case("bi_fusion_text", points, seed, [&](Rng& rng, Builder* f) {
    nn::ParamStore ps;
    Rng init_rng(rng.raw());
    BiFusion bf(kDim, kHeads);
    bf.init(ps, init_rng);
    randomize_store(ps, rng);
    std::vector<real> vis = draw(rng, size_t(kNv) * kDim, -1.0, 1.0);
    std::vector<uint8_t> mask(kNt, 1);
    mask[kNt - 1] = 0;  // one padded position keeps the mask path active
    auto store = std::make_shared<nn::ParamStore>(std::move(ps));
    *f = [store, bf, vis, mask](Tape& t, Var x) {
      auto [v2, t2] = bf.apply(t, *store, t.constant({kNv, kDim}, vis), x, mask, false);
      return t.sum(v2) + t.sum(t2);
    };
    return std::pair<Shape, std::vector<real>>({kNt, kDim}, draw(rng, size_t(kNt) * kDim, -1.0, 1.0));
  }));

  out.push_back(run_case("verb_attention", points, seed, [&](Rng& rng, Builder* f) {
    nn::ParamStore ps;
    Rng init_rng(rng.raw());
    VerbAttention va(kDim, kHeads);
    va.init(ps, init_rng);
    randomize_store(ps, rng);
    auto store = std::make_shared<nn::ParamStore>(std::move(ps));
    const int content = 4;
    *f = [store, va, content](Tape& t, Var x) {
      return t.sum(va.apply(t, *store, x, 0, content, false));
    };
    return std::pair<Shape, std::vector<real>>({kNt + 1, kDim},
                                               draw(rng, size_t(kNt + 1) * kDim, -1.0, 1.0));
  }));

  return out;
}

}  // namespace affr
