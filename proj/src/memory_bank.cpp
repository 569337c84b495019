#include "affr/memory_bank.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "affr/util.hpp"

namespace affr {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Index of the row nearest to f; ties resolve to the lowest index.
int nearest_row(const std::vector<std::vector<double>>& rows, const std::vector<double>& f) {
  int best = 0;
  double best_d = sq_dist(rows[0], f);
  for (int i = 1; i < int(rows.size()); ++i) {
    double d = sq_dist(rows[size_t(i)], f);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, uint64_t seed) {
  int n = int(points.size());
  if (n == 0) throw std::runtime_error("kmeans: no points");
  if (k < 1 || k > n) throw std::runtime_error("kmeans: k must be in [1, points]");

  Rng rng(seed);
  KMeansResult r;
  r.centers.reserve(size_t(k));

  // Farthest-first seeding: spreads initial centers so well-separated
  // groups each receive one.
  int first = int(rng.uniform_int(uint64_t(n)));
  r.centers.push_back(points[size_t(first)]);
  std::vector<double> min_d(size_t(n), 0.0);
  for (int i = 0; i < n; ++i) min_d[size_t(i)] = sq_dist(points[size_t(i)], r.centers[0]);
  while (int(r.centers.size()) < k) {
    int far = 0;
    for (int i = 1; i < n; ++i)
      if (min_d[size_t(i)] > min_d[size_t(far)]) far = i;
    r.centers.push_back(points[size_t(far)]);
    for (int i = 0; i < n; ++i) {
      double d = sq_dist(points[size_t(i)], r.centers.back());
      if (d < min_d[size_t(i)]) min_d[size_t(i)] = d;
    }
  }

  r.assign.assign(size_t(n), 0);
  double prev_inertia = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= 100; ++iter) {
    r.iterations = iter;
    double inertia = 0;
    for (int i = 0; i < n; ++i) {
      int a = nearest_row(r.centers, points[size_t(i)]);
      r.assign[size_t(i)] = a;
      inertia += sq_dist(points[size_t(i)], r.centers[size_t(a)]);
    }
    r.inertia = inertia;
    r.inertia_trace.push_back(inertia);

    std::vector<std::vector<double>> sums(size_t(k),
                                          std::vector<double>(points[0].size(), 0.0));
    std::vector<int> counts(size_t(k), 0);
    for (int i = 0; i < n; ++i) {
      int a = r.assign[size_t(i)];
      ++counts[size_t(a)];
      for (size_t j = 0; j < points[0].size(); ++j) sums[size_t(a)][j] += points[size_t(i)][j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[size_t(c)] == 0) {
        // Re-seed from the point farthest from its assigned center; this
        // strictly reduces that point's contribution, keeping inertia
        // non-increasing.
        int far = 0;
        double far_d = -1;
        for (int i = 0; i < n; ++i) {
          double d = sq_dist(points[size_t(i)], r.centers[size_t(r.assign[size_t(i)])]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        r.centers[size_t(c)] = points[size_t(far)];
        r.assign[size_t(far)] = c;
      } else {
        for (size_t j = 0; j < points[0].size(); ++j)
          r.centers[size_t(c)][j] = sums[size_t(c)][j] / double(counts[size_t(c)]);
      }
    }

    if (prev_inertia - inertia < 1e-6) break;
    prev_inertia = inertia;
  }

  // Final labels and inertia against the converged centers.
  double inertia = 0;
  for (int i = 0; i < n; ++i) {
    int a = nearest_row(r.centers, points[size_t(i)]);
    r.assign[size_t(i)] = a;
    inertia += sq_dist(points[size_t(i)], r.centers[size_t(a)]);
  }
  r.inertia = inertia;
  r.inertia_trace.push_back(inertia);
  return r;
}

std::pair<int, std::vector<double>> select_prototype(
    const std::vector<double>& pron, const std::vector<std::vector<double>>& centers) {
  if (centers.empty()) throw std::runtime_error("select_prototype: no centers");
  for (const auto& c : centers)
    if (c.size() != pron.size())
      throw std::runtime_error("select_prototype: center dimension mismatch");
  int idx = nearest_row(centers, pron);
  return {idx, centers[size_t(idx)]};
}

std::vector<double> extract_noun_feature(const ad::Var& text_features,
                                         const std::vector<TokenSpan>& noun_spans) {
  if (noun_spans.empty()) throw std::runtime_error("extract_noun_feature: no noun spans");
  int rows = text_features.rows();
  int d = text_features.cols();
  const auto& v = text_features.value();
  std::vector<double> out(size_t(d), 0.0);
  for (const TokenSpan& s : noun_spans) {
    if (s.empty() || s.begin < 0 || s.end > rows)
      throw std::runtime_error("extract_noun_feature: span out of range");
    std::vector<double> mean(size_t(d), 0.0);
    for (int r = s.begin; r < s.end; ++r)
      for (int j = 0; j < d; ++j) mean[size_t(j)] += v[size_t(r) * size_t(d) + size_t(j)];
    for (int j = 0; j < d; ++j) out[size_t(j)] += mean[size_t(j)] / double(s.len());
  }
  for (int j = 0; j < d; ++j) out[size_t(j)] /= double(noun_spans.size());
  return out;
}

MemoryBank::MemoryBank(int n_task, int n_mem, int d, int k)
    : n_task_(n_task), n_mem_(n_mem), d_(d), k_(k) {
  if (n_task < 1 || n_mem < 1 || d < 1 || k < 1 || k > n_mem)
    throw std::runtime_error("MemoryBank: invalid configuration");
  tasks_.resize(size_t(n_task));
}

void MemoryBank::check_task(int task) const {
  if (task < 0 || task >= n_task_) throw std::runtime_error("MemoryBank: task id out of range");
}

bool MemoryBank::full(int task) const {
  check_task(task);
  return int(tasks_[size_t(task)].queue.size()) == n_mem_;
}

int MemoryBank::queue_size(int task) const {
  check_task(task);
  return int(tasks_[size_t(task)].queue.size());
}

const std::vector<std::vector<double>>& MemoryBank::queue(int task) const {
  check_task(task);
  return tasks_[size_t(task)].queue;
}

void MemoryBank::update(int task, const std::vector<double>& f) {
  check_task(task);
  if (int(f.size()) != d_) throw std::runtime_error("MemoryBank: feature dimension mismatch");
  for (double x : f)
    if (!std::isfinite(x)) throw std::runtime_error("MemoryBank: non-finite feature");
  TaskBank& tb = tasks_[size_t(task)];
  if (int(tb.queue.size()) == n_mem_) {
    int victim = nearest_row(tb.queue, f);
    tb.queue.erase(tb.queue.begin() + victim);
  }
  tb.queue.push_back(f);
  tb.fresh = false;
}

void MemoryBank::recluster(int task, uint64_t seed) {
  check_task(task);
  TaskBank& tb = tasks_[size_t(task)];
  if (tb.queue.empty()) throw std::runtime_error("MemoryBank: recluster on empty queue");
  int k_eff = std::min(k_, int(tb.queue.size()));
  tb.centers = kmeans(tb.queue, k_eff, seed).centers;
  tb.fresh = true;
}

void MemoryBank::recluster_all(uint64_t seed) {
  for (int t = 0; t < n_task_; ++t)
    if (!tasks_[size_t(t)].queue.empty()) recluster(t, seed + uint64_t(t) * 0x9e3779b97f4a7c15ull);
}

bool MemoryBank::centers_fresh(int task) const {
  check_task(task);
  return tasks_[size_t(task)].fresh;
}

const std::vector<std::vector<double>>& MemoryBank::centers(int task) const {
  check_task(task);
  const TaskBank& tb = tasks_[size_t(task)];
  if (!tb.fresh) throw std::runtime_error("MemoryBank: centers are stale; recluster first");
  return tb.centers;
}

std::map<std::string, std::vector<double>> MemoryBank::export_arrays() const {
  std::map<std::string, std::vector<double>> out;
  out["bank.shape"] = {double(n_task_), double(n_mem_), double(d_), double(k_)};
  for (int t = 0; t < n_task_; ++t) {
    const TaskBank& tb = tasks_[size_t(t)];
    std::ostringstream key;
    key << "bank.task" << t;
    std::vector<double> q;
    q.reserve(tb.queue.size() * size_t(d_));
    for (const auto& row : tb.queue) q.insert(q.end(), row.begin(), row.end());
    out[key.str() + ".queue"] = std::move(q);
    if (tb.fresh) {
      std::vector<double> c;
      for (const auto& row : tb.centers) c.insert(c.end(), row.begin(), row.end());
      out[key.str() + ".centers"] = std::move(c);
    }
  }
  return out;
}

void MemoryBank::import_arrays(const std::map<std::string, std::vector<double>>& arrays) {
  auto shape_it = arrays.find("bank.shape");
  if (shape_it == arrays.end() || shape_it->second.size() != 4)
    throw std::runtime_error("MemoryBank: missing bank.shape array");
  const auto& s = shape_it->second;
  if (int(s[0]) != n_task_ || int(s[1]) != n_mem_ || int(s[2]) != d_ || int(s[3]) != k_)
    throw std::runtime_error("MemoryBank: checkpoint bank shape mismatch");
  for (int t = 0; t < n_task_; ++t) {
    TaskBank& tb = tasks_[size_t(t)];
    std::ostringstream key;
    key << "bank.task" << t;
    auto qit = arrays.find(key.str() + ".queue");
    if (qit == arrays.end()) throw std::runtime_error("MemoryBank: missing queue array");
    const auto& q = qit->second;
    if (q.size() % size_t(d_) != 0 || q.size() > size_t(n_mem_) * size_t(d_))
      throw std::runtime_error("MemoryBank: queue array size mismatch");
    tb.queue.clear();
    for (size_t off = 0; off < q.size(); off += size_t(d_))
      tb.queue.emplace_back(q.begin() + long(off), q.begin() + long(off + size_t(d_)));
    auto cit = arrays.find(key.str() + ".centers");
    if (cit != arrays.end() && !cit->second.empty()) {
      const auto& c = cit->second;
      if (c.size() % size_t(d_) != 0)
        throw std::runtime_error("MemoryBank: centers array size mismatch");
      tb.centers.clear();
      for (size_t off = 0; off < c.size(); off += size_t(d_))
        tb.centers.emplace_back(c.begin() + long(off), c.begin() + long(off + size_t(d_)));
      tb.fresh = true;
    } else {
      tb.centers.clear();
      tb.fresh = false;
    }
  }
}

}  // namespace affr
