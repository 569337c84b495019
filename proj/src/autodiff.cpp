#include "affr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace affr::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// C (m x n) += A (m x k) * B (k x n)
void gemm_nn(const real* A, const real* B, real* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real* a = A + int64_t(i) * k;
    real* c = C + int64_t(i) * n;
    for (int p = 0; p < k; ++p) {
      real av = a[p];
      if (av == real(0)) continue;
      const real* b = B + int64_t(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C (m x k) += A (m x n) * B^T, with B stored as (k x n)
void gemm_nt(const real* A, const real* B, real* C, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const real* a = A + int64_t(i) * n;
    real* c = C + int64_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const real* b = B + int64_t(p) * n;
      real acc = 0;
      for (int j = 0; j < n; ++j) acc += a[j] * b[j];
      c[p] += acc;
    }
  }
}

// C (k x n) += A^T * B, with A stored as (m x k), B as (m x n)
void gemm_tn(const real* A, const real* B, real* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real* a = A + int64_t(i) * k;
    const real* b = B + int64_t(i) * n;
    for (int p = 0; p < k; ++p) {
      real av = a[p];
      if (av == real(0)) continue;
      real* c = C + int64_t(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

real stable_log1p_exp(real x) {
  // log(1 + e^x) without overflow for large |x|.
  if (x > real(30)) return x;
  if (x < real(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "{";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "}";
  return os.str();
}

const Shape& Var::shape() const { return tape->node(id).shape; }
const std::vector<real>& Var::value() const { return tape->node(id).value; }
const std::vector<real>& Var::grad() const { return tape->node(id).grad; }
int Var::rows() const { return shape().size() == 2 ? shape()[0] : 1; }
int Var::cols() const {
  const Shape& s = shape();
  return s.size() == 2 ? s[1] : (s.empty() ? 1 : s[0]);
}
int64_t Var::size() const { return numel(shape()); }

real Var::scalar() const {
  if (size() != 1) throw AdError("scalar", id, "value has " + std::to_string(size()) + " elements");
  return value()[0];
}

Var Tape::emit(Node n) {
  if (int64_t(n.value.size()) != numel(n.shape))
    throw AdError(n.op, next_id(), "value size " + std::to_string(n.value.size()) +
                                       " does not match shape " + shape_str(n.shape));
  nodes_.push_back(std::move(n));
  return Var{this, int(nodes_.size()) - 1};
}

void Tape::check_same_shape(const char* op, Var a, Var b) const {
  if (a.shape() != b.shape())
    throw AdError(op, next_id(),
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void Tape::check_2d(const char* op, Var a) const {
  if (a.shape().size() != 2)
    throw AdError(op, next_id(), "expected a 2-D operand, got " + shape_str(a.shape()));
}

std::vector<real>& Tape::grad_buf(int id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.empty()) n.grad.assign(n.value.size(), real(0));
  return n.grad;
}

Var Tape::input(const std::string& name, Shape shape, std::vector<real> value,
                bool requires_grad) {
  if (named_.count(name))
    throw AdError("input", next_id(), "duplicate input name '" + name + "'");
  Node n;
  n.op = "input";
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  Var v = emit(std::move(n));
  named_[name] = v.id;
  return v;
}

Var Tape::constant(Shape shape, std::vector<real> value) {
  Node n;
  n.op = "const";
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = false;
  return emit(std::move(n));
}

Var Tape::scalar_constant(real v) { return constant({1}, {v}); }

Var Tape::named(const std::string& name) const {
  auto it = named_.find(name);
  if (it == named_.end()) throw AdError("named", -1, "no input named '" + name + "'");
  return Var{const_cast<Tape*>(this), it->second};
}

bool Tape::has_named(const std::string& name) const { return named_.count(name) != 0; }

// ---- elementwise binary ----

Var Tape::add(Var a, Var b) {
  check_same_shape("add", a, b);
  Node n;
  n.op = "add";
  n.in = {a.id, b.id, -1, -1};
  n.n_in = 2;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = a.value()[i] + b.value()[i];
  n.requires_grad = node(a.id).requires_grad || node(b.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s = t.node(self);
    for (int w = 0; w < 2; ++w) {
      if (!t.node(s.in[size_t(w)]).requires_grad) continue;
      auto& g = t.grad_buf(s.in[size_t(w)]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i];
    }
  };
  return emit(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  check_same_shape("sub", a, b);
  Node n;
  n.op = "sub";
  n.in = {a.id, b.id, -1, -1};
  n.n_in = 2;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = a.value()[i] - b.value()[i];
  n.requires_grad = node(a.id).requires_grad || node(b.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s = t.node(self);
    if (t.node(s.in[0]).requires_grad) {
      auto& g = t.grad_buf(s.in[0]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i];
    }
    if (t.node(s.in[1]).requires_grad) {
      auto& g = t.grad_buf(s.in[1]);
      for (size_t i = 0; i < g.size(); ++i) g[i] -= s.grad[i];
    }
  };
  return emit(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  check_same_shape("mul", a, b);
  Node n;
  n.op = "mul";
  n.in = {a.id, b.id, -1, -1};
  n.n_in = 2;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = a.value()[i] * b.value()[i];
  n.requires_grad = node(a.id).requires_grad || node(b.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s = t.node(self);
    const auto& av = t.node(s.in[0]).value;
    const auto& bv = t.node(s.in[1]).value;
    if (t.node(s.in[0]).requires_grad) {
      auto& g = t.grad_buf(s.in[0]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i] * bv[i];
    }
    if (t.node(s.in[1]).requires_grad) {
      auto& g = t.grad_buf(s.in[1]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i] * av[i];
    }
  };
  return emit(std::move(n));
}

Var Tape::div(Var a, Var b) {
  check_same_shape("div", a, b);
  Node n;
  n.op = "div";
  n.in = {a.id, b.id, -1, -1};
  n.n_in = 2;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = a.value()[i] / b.value()[i];
  n.requires_grad = node(a.id).requires_grad || node(b.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s = t.node(self);
    const auto& av = t.node(s.in[0]).value;
    const auto& bv = t.node(s.in[1]).value;
    if (t.node(s.in[0]).requires_grad) {
      auto& g = t.grad_buf(s.in[0]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i] / bv[i];
    }
    if (t.node(s.in[1]).requires_grad) {
      auto& g = t.grad_buf(s.in[1]);
      for (size_t i = 0; i < g.size(); ++i) g[i] -= s.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  };
  return emit(std::move(n));
}

Var Tape::min_elem(Var a, Var b) {
  check_same_shape("min_elem", a, b);
  Node n;
  n.op = "min_elem";
  n.in = {a.id, b.id, -1, -1};
  n.n_in = 2;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::min(a.value()[i], b.value()[i]);
  n.requires_grad = node(a.id).requires_grad || node(b.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s = t.node(self);
    const auto& av = t.node(s.in[0]).value;
    const auto& bv = t.node(s.in[1]).value;
    for (size_t i = 0; i < s.grad.size(); ++i) {
      int pick = av[i] <= bv[i] ? s.in[0] : s.in[1];
      if (t.node(pick).requires_grad) t.grad_buf(pick)[i] += s.grad[i];
    }
  };
  return emit(std::move(n));
}

Var Tape::max_elem(Var a, Var b) {
  check_same_shape("max_elem", a, b);
  Node n;
  n.op = "max_elem";
  n.in = {a.id, b.id, -1, -1};
  n.n_in = 2;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::max(a.value()[i], b.value()[i]);
  n.requires_grad = node(a.id).requires_grad || node(b.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s = t.node(self);
    const auto& av = t.node(s.in[0]).value;
    const auto& bv = t.node(s.in[1]).value;
    for (size_t i = 0; i < s.grad.size(); ++i) {
      int pick = av[i] >= bv[i] ? s.in[0] : s.in[1];
      if (t.node(pick).requires_grad) t.grad_buf(pick)[i] += s.grad[i];
    }
  };
  return emit(std::move(n));
}

Var Tape::neg(Var a) { return scale(a, real(-1)); }

Var Tape::scale(Var a, real c) {
  Node n;
  n.op = "scale";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = a.value()[i] * c;
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [c](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i] * c;
  };
  return emit(std::move(n));
}

Var Tape::add_scalar(Var a, real c) {
  Node n;
  n.op = "add_scalar";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = a.value()[i] + c;
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i];
  };
  return emit(std::move(n));
}

// ---- unary maps ----

namespace {
// Shared scaffolding for elementwise unaries: dval/dx as a closure over x, y.
template <class F, class G>
Tape::Node make_unary(Tape& t, const char* op, Var a, F fwd, G dfdx) {
  Tape::Node n;
  n.op = op;
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = fwd(a.value()[i]);
  n.requires_grad = t.node(a.id).requires_grad;
  n.backward = [dfdx](Tape& tt, int self) {
    const Tape::Node& s = tt.node(self);
    if (!tt.node(s.in[0]).requires_grad) return;
    const auto& x = tt.node(s.in[0]).value;
    auto& g = tt.grad_buf(s.in[0]);
    for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i] * dfdx(x[i], s.value[i]);
  };
  return n;
}
}  // namespace

Var Tape::exp_(Var a) {
  return emit(make_unary(*this, "exp", a, [](real x) { return std::exp(x); },
                         [](real, real y) { return y; }));
}

Var Tape::log_(Var a) {
  return emit(make_unary(*this, "log", a, [](real x) { return std::log(x); },
                         [](real x, real) { return real(1) / x; }));
}

Var Tape::sqrt_(Var a) {
  return emit(make_unary(*this, "sqrt", a, [](real x) { return std::sqrt(x); },
                         [](real, real y) { return y > real(0) ? real(0.5) / y : real(0); }));
}

Var Tape::abs_(Var a) {
  return emit(make_unary(*this, "abs", a, [](real x) { return std::abs(x); },
                         [](real x, real) {
                           if (x > real(0)) return real(1);
                           if (x < real(0)) return real(-1);
                           return real(0);
                         }));
}

Var Tape::pow_const(Var a, real p) {
  for (real x : a.value())
    if (x < real(0)) throw AdError("pow_const", next_id(), "negative base");
  return emit(make_unary(*this, "pow_const", a, [p](real x) { return std::pow(x, p); },
                         [p](real x, real) {
                           if (p == real(0)) return real(0);
                           if (x == real(0)) return p >= real(1) ? real(0) : real(0);
                           return p * std::pow(x, p - real(1));
                         }));
}

Var Tape::sigmoid(Var a) {
  return emit(make_unary(*this, "sigmoid", a,
                         [](real x) {
                           if (x >= real(0)) return real(1) / (real(1) + std::exp(-x));
                           real e = std::exp(x);
                           return e / (real(1) + e);
                         },
                         [](real, real y) { return y * (real(1) - y); }));
}

Var Tape::log_sigmoid(Var a) {
  return emit(make_unary(*this, "log_sigmoid", a,
                         [](real x) { return -stable_log1p_exp(-x); },
                         [](real x, real) {
                           // d/dx log sigma(x) = sigma(-x)
                           if (x <= real(0)) return real(1) / (real(1) + std::exp(x));
                           real e = std::exp(-x);
                           return e / (real(1) + e);
                         }));
}

Var Tape::tanh_(Var a) {
  return emit(make_unary(*this, "tanh", a, [](real x) { return std::tanh(x); },
                         [](real, real y) { return real(1) - y * y; }));
}

Var Tape::relu(Var a) {
  return emit(make_unary(*this, "relu", a, [](real x) { return x > real(0) ? x : real(0); },
                         [](real x, real) { return x > real(0) ? real(1) : real(0); }));
}

Var Tape::gelu(Var a) {
  return emit(make_unary(
      *this, "gelu", a,
      [](real x) { return real(0.5) * x * (real(1) + real(std::erf(double(x) * kInvSqrt2))); },
      [](real x, real) {
        double cdf = 0.5 * (1.0 + std::erf(double(x) * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * double(x) * double(x));
        return real(cdf + double(x) * pdf);
      }));
}

// ---- linear algebra ----

Var Tape::matmul(Var a, Var b) {
  check_2d("matmul", a);
  check_2d("matmul", b);
  int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], w = b.shape()[1];
  if (k != k2)
    throw AdError("matmul", next_id(),
                  "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Node n;
  n.op = "matmul";
  n.in = {a.id, b.id, -1, -1};
  n.n_in = 2;
  n.shape = {m, w};
  n.value.assign(size_t(m) * w, real(0));
  gemm_nn(a.value().data(), b.value().data(), n.value.data(), m, k, w);
  n.requires_grad = node(a.id).requires_grad || node(b.id).requires_grad;
  n.backward = [m, k, w](Tape& t, int self) {
    const Node& s = t.node(self);
    const Node& na = t.node(s.in[0]);
    const Node& nb = t.node(s.in[1]);
    if (na.requires_grad)
      gemm_nt(s.grad.data(), nb.value.data(), t.grad_buf(s.in[0]).data(), m, w, k);
    if (nb.requires_grad)
      gemm_tn(na.value.data(), s.grad.data(), t.grad_buf(s.in[1]).data(), m, k, w);
  };
  return emit(std::move(n));
}

Var Tape::transpose(Var a) {
  check_2d("transpose", a);
  int r = a.shape()[0], c = a.shape()[1];
  Node n;
  n.op = "transpose";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = {c, r};
  n.value.resize(size_t(r) * c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n.value[size_t(j) * r + i] = a.value()[size_t(i) * c + j];
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [r, c](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g[size_t(i) * c + j] += s.grad[size_t(j) * r + i];
  };
  return emit(std::move(n));
}

// ---- structure ----

Var Tape::reshape(Var a, Shape s) {
  if (numel(s) != numel(a.shape()))
    throw AdError("reshape", next_id(),
                  "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(s));
  Node n;
  n.op = "reshape";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = std::move(s);
  n.value = a.value();
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s2 = t.node(self);
    if (!t.node(s2.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s2.in[0]);
    for (size_t i = 0; i < g.size(); ++i) g[i] += s2.grad[i];
  };
  return emit(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw AdError("concat_rows", next_id(), "empty operand list");
  int c = xs[0].cols(), rtot = 0;
  for (Var v : xs) {
    check_2d("concat_rows", v);
    if (v.cols() != c) throw AdError("concat_rows", next_id(), "column counts differ");
    rtot += v.shape()[0];
  }
  Node n;
  n.op = "concat_rows";
  n.n_in = 0;
  std::vector<int> ids;
  for (Var v : xs) ids.push_back(v.id);
  n.shape = {rtot, c};
  n.value.reserve(size_t(rtot) * c);
  for (Var v : xs) n.value.insert(n.value.end(), v.value().begin(), v.value().end());
  for (Var v : xs) n.requires_grad = n.requires_grad || node(v.id).requires_grad;
  n.backward = [ids](Tape& t, int self) {
    const Node& s = t.node(self);
    size_t off = 0;
    for (int id : ids) {
      const Node& src = t.node(id);
      if (src.requires_grad) {
        auto& g = t.grad_buf(id);
        for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[off + i];
      }
      off += src.value.size();
    }
  };
  return emit(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw AdError("concat_cols", next_id(), "empty operand list");
  int r = xs[0].rows(), ctot = 0;
  for (Var v : xs) {
    check_2d("concat_cols", v);
    if (v.shape()[0] != r) throw AdError("concat_cols", next_id(), "row counts differ");
    ctot += v.shape()[1];
  }
  Node n;
  n.op = "concat_cols";
  n.n_in = 0;
  std::vector<int> ids;
  std::vector<int> widths;
  for (Var v : xs) {
    ids.push_back(v.id);
    widths.push_back(v.shape()[1]);
  }
  n.shape = {r, ctot};
  n.value.resize(size_t(r) * ctot);
  {
    int c0 = 0;
    for (size_t w = 0; w < ids.size(); ++w) {
      const auto& src = node(ids[w]).value;
      for (int i = 0; i < r; ++i)
        std::memcpy(&n.value[size_t(i) * ctot + c0], &src[size_t(i) * widths[w]],
                    sizeof(real) * size_t(widths[w]));
      c0 += widths[w];
    }
  }
  for (Var v : xs) n.requires_grad = n.requires_grad || node(v.id).requires_grad;
  n.backward = [ids, widths, r, ctot](Tape& t, int self) {
    const Node& s = t.node(self);
    int c0 = 0;
    for (size_t w = 0; w < ids.size(); ++w) {
      if (t.node(ids[w]).requires_grad) {
        auto& g = t.grad_buf(ids[w]);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < widths[w]; ++j)
            g[size_t(i) * widths[w] + j] += s.grad[size_t(i) * ctot + c0 + j];
      }
      c0 += widths[w];
    }
  };
  return emit(std::move(n));
}

Var Tape::slice_rows(Var a, int r0, int r1) {
  check_2d("slice_rows", a);
  int r = a.shape()[0], c = a.shape()[1];
  if (r0 < 0 || r1 > r || r0 >= r1)
    throw AdError("slice_rows", next_id(),
                  "range [" + std::to_string(r0) + "," + std::to_string(r1) + ") out of " +
                      std::to_string(r) + " rows");
  Node n;
  n.op = "slice_rows";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = {r1 - r0, c};
  n.value.assign(a.value().begin() + int64_t(r0) * c, a.value().begin() + int64_t(r1) * c);
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [r0, c](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (size_t i = 0; i < s.grad.size(); ++i) g[size_t(r0) * c + i] += s.grad[i];
  };
  return emit(std::move(n));
}

Var Tape::slice_cols(Var a, int c0, int c1) {
  check_2d("slice_cols", a);
  int r = a.shape()[0], c = a.shape()[1];
  if (c0 < 0 || c1 > c || c0 >= c1)
    throw AdError("slice_cols", next_id(),
                  "range [" + std::to_string(c0) + "," + std::to_string(c1) + ") out of " +
                      std::to_string(c) + " cols");
  int w = c1 - c0;
  Node n;
  n.op = "slice_cols";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = {r, w};
  n.value.resize(size_t(r) * w);
  for (int i = 0; i < r; ++i)
    std::memcpy(&n.value[size_t(i) * w], &a.value()[size_t(i) * c + c0], sizeof(real) * size_t(w));
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [c0, c, w, r](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j) g[size_t(i) * c + c0 + j] += s.grad[size_t(i) * w + j];
  };
  return emit(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
  check_2d("gather_rows", a);
  int r = a.shape()[0], c = a.shape()[1];
  for (int i : idx)
    if (i < 0 || i >= r)
      throw AdError("gather_rows", next_id(),
                    "row index " + std::to_string(i) + " out of " + std::to_string(r));
  Node n;
  n.op = "gather_rows";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = {int(idx.size()), c};
  n.value.resize(idx.size() * size_t(c));
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(&n.value[i * size_t(c)], &a.value()[size_t(idx[i]) * c], sizeof(real) * size_t(c));
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [idx = std::move(idx), c](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < c; ++j) g[size_t(idx[i]) * c + j] += s.grad[i * size_t(c) + j];
  };
  return emit(std::move(n));
}

Var Tape::broadcast_rows(Var row, int nrows) {
  const Shape& s = row.shape();
  int c;
  if (s.size() == 1)
    c = s[0];
  else if (s.size() == 2 && s[0] == 1)
    c = s[1];
  else
    throw AdError("broadcast_rows", next_id(), "expected {C} or {1,C}, got " + shape_str(s));
  if (nrows <= 0) throw AdError("broadcast_rows", next_id(), "row count must be positive");
  Node n;
  n.op = "broadcast_rows";
  n.in = {row.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = {nrows, c};
  n.value.resize(size_t(nrows) * c);
  for (int i = 0; i < nrows; ++i)
    std::memcpy(&n.value[size_t(i) * c], row.value().data(), sizeof(real) * size_t(c));
  n.requires_grad = node(row.id).requires_grad;
  n.backward = [nrows, c](Tape& t, int self) {
    const Node& s2 = t.node(self);
    if (!t.node(s2.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s2.in[0]);
    for (int i = 0; i < nrows; ++i)
      for (int j = 0; j < c; ++j) g[size_t(j)] += s2.grad[size_t(i) * c + j];
  };
  return emit(std::move(n));
}

Var Tape::expand_scalar(Var s, Shape shape) {
  if (numel(s.shape()) != 1)
    throw AdError("expand_scalar", next_id(), "operand must be scalar, got " + shape_str(s.shape()));
  Node n;
  n.op = "expand_scalar";
  n.in = {s.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = std::move(shape);
  n.value.assign(size_t(numel(n.shape)), s.value()[0]);
  n.requires_grad = node(s.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s2 = t.node(self);
    if (!t.node(s2.in[0]).requires_grad) return;
    real acc = 0;
    for (real g : s2.grad) acc += g;
    t.grad_buf(s2.in[0])[0] += acc;
  };
  return emit(std::move(n));
}

// ---- reductions ----

Var Tape::sum(Var a) {
  Node n;
  n.op = "sum";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = {1};
  real acc = 0;
  for (real v : a.value()) acc += v;
  n.value = {acc};
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (size_t i = 0; i < g.size(); ++i) g[i] += s.grad[0];
  };
  return emit(std::move(n));
}

Var Tape::mean(Var a) {
  int64_t n_el = numel(a.shape());
  if (n_el == 0) throw AdError("mean", next_id(), "mean over empty array");
  return scale(sum(a), real(1) / real(n_el));
}

Var Tape::sum_axis1(Var a) {
  check_2d("sum_axis1", a);
  int r = a.shape()[0], c = a.shape()[1];
  Node n;
  n.op = "sum_axis1";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = {r, 1};
  n.value.resize(size_t(r));
  for (int i = 0; i < r; ++i) {
    real acc = 0;
    for (int j = 0; j < c; ++j) acc += a.value()[size_t(i) * c + j];
    n.value[size_t(i)] = acc;
  }
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [r, c](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g[size_t(i) * c + j] += s.grad[size_t(i)];
  };
  return emit(std::move(n));
}

Var Tape::sum_axis0(Var a) {
  check_2d("sum_axis0", a);
  int r = a.shape()[0], c = a.shape()[1];
  Node n;
  n.op = "sum_axis0";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = {1, c};
  n.value.assign(size_t(c), real(0));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n.value[size_t(j)] += a.value()[size_t(i) * c + j];
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [r, c](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g[size_t(i) * c + j] += s.grad[size_t(j)];
  };
  return emit(std::move(n));
}

// ---- row-wise normalizations ----

Var Tape::softmax_rows(Var a) {
  check_2d("softmax_rows", a);
  int r = a.shape()[0], c = a.shape()[1];
  if (c == 0) throw AdError("softmax_rows", next_id(), "softmax over empty axis");
  Node n;
  n.op = "softmax_rows";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (int i = 0; i < r; ++i) {
    const real* x = &a.value()[size_t(i) * c];
    real* y = &n.value[size_t(i) * c];
    real mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    real z = 0;
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= z;
  }
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [r, c](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (int i = 0; i < r; ++i) {
      const real* y = &s.value[size_t(i) * c];
      const real* dy = &s.grad[size_t(i) * c];
      real dot = 0;
      for (int j = 0; j < c; ++j) dot += y[j] * dy[j];
      for (int j = 0; j < c; ++j) g[size_t(i) * c + j] += y[j] * (dy[j] - dot);
    }
  };
  return emit(std::move(n));
}

Var Tape::log_softmax_rows(Var a) {
  check_2d("log_softmax_rows", a);
  int r = a.shape()[0], c = a.shape()[1];
  if (c == 0) throw AdError("log_softmax_rows", next_id(), "softmax over empty axis");
  Node n;
  n.op = "log_softmax_rows";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (int i = 0; i < r; ++i) {
    const real* x = &a.value()[size_t(i) * c];
    real* y = &n.value[size_t(i) * c];
    real mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    real z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    real lse = mx + std::log(z);
    for (int j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [r, c](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    auto& g = t.grad_buf(s.in[0]);
    for (int i = 0; i < r; ++i) {
      const real* y = &s.value[size_t(i) * c];
      const real* dy = &s.grad[size_t(i) * c];
      real tot = 0;
      for (int j = 0; j < c; ++j) tot += dy[j];
      for (int j = 0; j < c; ++j) g[size_t(i) * c + j] += dy[j] - std::exp(y[j]) * tot;
    }
  };
  return emit(std::move(n));
}

Var Tape::layer_norm_rows(Var a, real eps) {
  check_2d("layer_norm_rows", a);
  int r = a.shape()[0], c = a.shape()[1];
  if (c == 0) throw AdError("layer_norm_rows", next_id(), "normalization over empty axis");
  Node n;
  n.op = "layer_norm_rows";
  n.in = {a.id, -1, -1, -1};
  n.n_in = 1;
  n.shape = a.shape();
  n.value.resize(a.value().size());
  for (int i = 0; i < r; ++i) {
    const real* x = &a.value()[size_t(i) * c];
    real* y = &n.value[size_t(i) * c];
    real mu = 0;
    for (int j = 0; j < c; ++j) mu += x[j];
    mu /= real(c);
    real var = 0;
    for (int j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= real(c);
    real inv = real(1) / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) y[j] = (x[j] - mu) * inv;
  }
  n.requires_grad = node(a.id).requires_grad;
  n.backward = [r, c, eps](Tape& t, int self) {
    const Node& s = t.node(self);
    if (!t.node(s.in[0]).requires_grad) return;
    const auto& x = t.node(s.in[0]).value;
    auto& g = t.grad_buf(s.in[0]);
    for (int i = 0; i < r; ++i) {
      const real* xr = &x[size_t(i) * c];
      const real* y = &s.value[size_t(i) * c];
      const real* dy = &s.grad[size_t(i) * c];
      real mu = 0;
      for (int j = 0; j < c; ++j) mu += xr[j];
      mu /= real(c);
      real var = 0;
      for (int j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= real(c);
      real inv = real(1) / std::sqrt(var + eps);
      real m1 = 0, m2 = 0;
      for (int j = 0; j < c; ++j) {
        m1 += dy[j];
        m2 += dy[j] * y[j];
      }
      m1 /= real(c);
      m2 /= real(c);
      for (int j = 0; j < c; ++j) g[size_t(i) * c + j] += inv * (dy[j] - m1 - y[j] * m2);
    }
  };
  return emit(std::move(n));
}

// ---- backward ----

void Tape::backward(Var out) {
  if (out.tape != this) throw AdError("backward", out.id, "output belongs to another tape");
  if (numel(out.shape()) != 1)
    throw AdError("backward", out.id,
                  "output must be scalar, got shape " + shape_str(out.shape()));
  if (!node(out.id).requires_grad)
    throw AdError("backward", out.id, "output does not depend on any differentiable input");
  grad_buf(out.id)[0] = real(1);
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[size_t(id)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

// ---- finite differences ----

GradCheckResult finite_difference_check(const std::function<Var(Tape&, Var)>& f,
                                        const Shape& shape, const std::vector<real>& x,
                                        real eps) {
  // Analytic gradient.
  Tape t;
  Var in = t.input("x", shape, x, true);
  Var out = f(t, in);
  if (numel(out.shape()) != 1)
    throw AdError("finite_difference_check", out.id, "builder must produce a scalar");
  if (!std::isfinite(double(out.scalar())))
    throw AdError("finite_difference_check", out.id, "non-finite value at base point");
  t.backward(out);
  std::vector<real> analytic = t.node(in.id).grad;
  if (analytic.empty()) analytic.assign(x.size(), real(0));

  auto value_at = [&](const std::vector<real>& probe, size_t coord) {
    Tape tt;
    Var i2 = tt.input("x", shape, probe, false);
    Var o2 = f(tt, i2);
    real v = o2.scalar();
    if (!std::isfinite(double(v)))
      throw AdError("finite_difference_check", int(coord), "non-finite value at probe coordinate " +
                                                               std::to_string(coord));
    return v;
  };

  GradCheckResult res;
  std::vector<real> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    real up = value_at(probe, i);
    probe[i] = x[i] - eps;
    real dn = value_at(probe, i);
    probe[i] = x[i];
    double central = (double(up) - double(dn)) / (2.0 * double(eps));
    double err = std::abs(double(analytic[i]) - central) /
                 std::max(1.0, std::abs(double(analytic[i])));
    if (err > res.max_rel_err) {
      res.max_rel_err = err;
      res.worst_coord = int(i);
    }
  }
  return res;
}

}  // namespace affr::ad
