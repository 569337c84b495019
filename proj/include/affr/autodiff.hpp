// Reverse-mode automatic differentiation on dense row-major arrays.
//
// A Tape owns an append-only list of nodes; construction order is a valid
// topological order, so backward() is a single reverse sweep. All forward
// values are computed eagerly at node-construction time. Rebuilding the same
// graph with the same inputs reproduces bit-identical values.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace affr::ad {

#ifdef AFFR_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Raised on malformed graph construction or misuse; carries the id the
// offending node would have received.
class AdError : public std::runtime_error {
 public:
  AdError(const std::string& op, int node_id, const std::string& what)
      : std::runtime_error("[" + op + " @node " + std::to_string(node_id) + "] " + what),
        op_(op),
        node_id_(node_id) {}
  const std::string& op() const { return op_; }
  int node_id() const { return node_id_; }

 private:
  std::string op_;
  int node_id_;
};

class Tape;

// Cheap handle into a Tape. Valid for the lifetime of its tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const;
  const std::vector<real>& value() const;
  const std::vector<real>& grad() const;  // empty until backward touches it
  int rows() const;
  int cols() const;
  int64_t size() const;
  real scalar() const;  // requires numel == 1
};

class Tape {
 public:
  struct Node {
    const char* op = "";
    std::array<int, 4> in{-1, -1, -1, -1};
    int n_in = 0;
    Shape shape;
    std::vector<real> value;
    std::vector<real> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::function<void(Tape&, int)> backward;  // null for leaves
  };

  // Leaves.
  Var input(const std::string& name, Shape shape, std::vector<real> value,
            bool requires_grad = true);
  Var constant(Shape shape, std::vector<real> value);
  Var scalar_constant(real v);

  // Elementwise (operands must agree in shape exactly; no implicit broadcast).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var min_elem(Var a, Var b);  // ties propagate gradient to a
  Var max_elem(Var a, Var b);  // ties propagate gradient to a
  Var neg(Var a);
  Var scale(Var a, real c);
  Var add_scalar(Var a, real c);

  // Unary maps.
  Var exp_(Var a);
  Var log_(Var a);
  Var sqrt_(Var a);       // d/dx at 0 defined as 0 (subgradient choice)
  Var abs_(Var a);        // d/dx at 0 defined as 0
  Var pow_const(Var a, real p);  // requires a >= 0 elementwise
  Var sigmoid(Var a);
  Var log_sigmoid(Var a);  // stable -softplus(-x)
  Var tanh_(Var a);
  Var relu(Var a);
  Var gelu(Var a);  // exact erf form

  // Linear algebra (2-D).
  Var matmul(Var a, Var b);
  Var transpose(Var a);

  // Structure.
  Var reshape(Var a, Shape s);
  Var concat_rows(const std::vector<Var>& xs);
  Var concat_cols(const std::vector<Var>& xs);
  Var slice_rows(Var a, int r0, int r1);
  Var slice_cols(Var a, int c0, int c1);
  Var gather_rows(Var a, std::vector<int> idx);
  Var broadcast_rows(Var row, int n);  // {1,C} or {C} -> {n,C}
  Var expand_scalar(Var s, Shape shape);  // {1} -> any shape

  // Reductions.
  Var sum(Var a);           // -> {1}
  Var mean(Var a);          // -> {1}
  Var sum_axis1(Var a);     // {R,C} -> {R,1}
  Var sum_axis0(Var a);     // {R,C} -> {1,C}

  // Row-wise normalizations (last axis of a 2-D array).
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var layer_norm_rows(Var a, real eps = real(1e-5));  // no affine

  // Runs the reverse sweep from a scalar output. Inputs created with
  // requires_grad=false keep an empty gradient buffer.
  void backward(Var out);

  Var named(const std::string& name) const;  // lookup of a named input
  bool has_named(const std::string& name) const;
  const std::map<std::string, int>& named_inputs() const { return named_; }

  size_t node_count() const { return nodes_.size(); }
  Node& node(int id) { return nodes_[size_t(id)]; }
  const Node& node(int id) const { return nodes_[size_t(id)]; }

  // Accumulation buffer for node `id`, allocated zero-filled on first use.
  std::vector<real>& grad_buf(int id);

 private:
  friend struct Var;
  Var emit(Node n);
  void check_same_shape(const char* op, Var a, Var b) const;
  void check_2d(const char* op, Var a) const;
  int next_id() const { return int(nodes_.size()); }

  std::vector<Node> nodes_;
  std::map<std::string, int> named_;
};

// Sugar for readable loss code.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator-(Var a) { return a.tape->neg(a); }

struct GradCheckResult {
  double max_rel_err = 0.0;
  int worst_coord = -1;
};

// Central finite differences against backward() for a scalar-valued builder.
// Error per coordinate is |analytic - central| / max(1, |analytic|); the
// builder is re-run from scratch for every probe so it must be deterministic.
// Throws AdError if any probe evaluates to a non-finite value.
GradCheckResult finite_difference_check(const std::function<Var(Tape&, Var)>& f,
                                        const Shape& shape,
                                        const std::vector<real>& x,
                                        real eps = real(1e-5));

}  // namespace affr::ad
