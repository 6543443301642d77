#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "posefield/check.hpp"

namespace posefield::ad {

using Real = double;

// A flat block of trainable parameters with a same-shape gradient
// accumulator. Blocks are identified by a process-unique id.
class ParamBlock {
 public:
  ParamBlock() : id_(next_id()) {}
  ParamBlock(std::string name, std::size_t n, Real fill = 0)
      : values(n, fill), grad(n, 0.0), name_(std::move(name)), id_(next_id()) {}
  // copies are distinct parameters and get a fresh id; moves keep theirs
  ParamBlock(const ParamBlock& o) : values(o.values), grad(o.grad), name_(o.name_), id_(next_id()) {}
  ParamBlock& operator=(const ParamBlock& o) {
    name_ = o.name_;
    values = o.values;
    grad = o.grad;
    return *this;
  }
  ParamBlock(ParamBlock&&) = default;
  ParamBlock& operator=(ParamBlock&&) = default;

  std::vector<Real> values;
  std::vector<Real> grad;

  int id() const { return id_; }
  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }
  std::size_t size() const { return values.size(); }
  void resize(std::size_t n) {
    values.assign(n, 0.0);
    grad.assign(n, 0.0);
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

 private:
  static int next_id();
  std::string name_;
  int id_;
};

struct NodeRef {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

class Tape;

// Payload + backward hook for composite ops defined outside this module
// (hash encoding, rotation application, ...). `data` typically caches
// whatever the forward pass needs again during backprop.
struct CustomOp {
  const void* obj = nullptr;
  Real scalar0 = 0.0;
  int i0 = 0;
  std::vector<Real> data;
  void (*backward)(Tape&, const CustomOp&, int node_idx) = nullptr;
};

// Reverse-mode tape over vector-valued nodes. Forward values are computed
// eagerly as nodes are created, so the graph is always topologically
// ordered and `value()` is available immediately. backward() sweeps the
// tape in reverse and accumulates parameter gradients additively.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- node creation (forward is evaluated on the spot) ----
  NodeRef constant(std::span<const Real> v);
  NodeRef constant(Real v);
  NodeRef constant3(Real x, Real y, Real z);
  NodeRef param(ParamBlock& block);  // copies the current values

  // y = W x + b with W row-major (m x n) and optional b (m).
  NodeRef affine(ParamBlock& w, ParamBlock* b, NodeRef x);
  // y = W^T u for the same row-major W (m x n), u of length m.
  NodeRef affine_t(ParamBlock& w, NodeRef u);
  // y = A^T v with A a node holding a row-major (rows x cols) matrix.
  NodeRef mat_t_vec(NodeRef a, int rows, int cols, NodeRef v);

  // Batched variants treat a node as a row-major (rows x cols) matrix with
  // one row per sample.
  // Y = X W^T + b applied per row: X (rows x k) -> Y (rows x m).
  NodeRef affine_batch(ParamBlock& w, ParamBlock* b, NodeRef x, int rows);
  // [A | B] per row; when b has length q it is broadcast to every row.
  NodeRef row_concat(NodeRef a, NodeRef b, int rows, int p, int q);
  // columns [from, from+count) of an (rows x q) node.
  NodeRef cols_slice(NodeRef a, int rows, int q, int from, int count);
  // per-row squared norm of an (rows x q) node.
  NodeRef row_sum_sq(NodeRef a, int rows, int q);

  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);  // elementwise; b may be scalar
  NodeRef div(NodeRef a, NodeRef b);  // elementwise; b may be scalar
  NodeRef scale(NodeRef a, Real c);
  NodeRef add_scaled(NodeRef a, NodeRef b, Real c);  // a + c*b
  NodeRef add_const(NodeRef a, Real c);
  NodeRef const_minus(Real c, NodeRef a);  // c - a
  NodeRef neg(NodeRef a);

  NodeRef relu(NodeRef a);
  NodeRef step_mask(NodeRef a);  // 1[a > 0], zero derivative
  NodeRef sigmoid(NodeRef a);
  NodeRef exp(NodeRef a);
  NodeRef log(NodeRef a);
  NodeRef sqrt(NodeRef a);
  NodeRef sin(NodeRef a);
  NodeRef cos(NodeRef a);
  NodeRef clamp(NodeRef a, Real lo, Real hi);

  NodeRef dot(NodeRef a, NodeRef b);
  NodeRef sum(NodeRef a);
  NodeRef mean(NodeRef a);
  NodeRef concat(std::span<const NodeRef> parts);
  NodeRef slice(NodeRef a, int offset, int len);
  NodeRef cross(NodeRef a, NodeRef b);  // 3-vectors

  // Smooth rotation-exponential coefficients as functions of u = theta^2:
  // a(u) = sin(t)/t, b(u) = (1-cos(t))/t^2, c(u) = (t-sin(t))/t^3 with
  // t = sqrt(u); series expansion below u = 1e-8 so they are total and
  // smooth through zero.
  NodeRef rot_coef_a(NodeRef u);
  NodeRef rot_coef_b(NodeRef u);
  NodeRef rot_coef_c(NodeRef u);

  NodeRef custom(std::span<const Real> value, NodeRef a, NodeRef b, CustomOp op);

  // ---- access ----
  std::span<const Real> values(NodeRef n) const;
  Real value(NodeRef n) const;  // scalar nodes
  int length(NodeRef n) const;
  std::size_t num_nodes() const { return nodes_.size(); }

  // Adjoint of a node after backward() (e.g. d(loss)/d(x) for a constant
  // input x).
  std::span<const Real> adjoint(NodeRef n) const;

  // ---- reverse sweep ----
  // Accumulates d(seed . root)/d(params) into each ParamBlock's grad.
  // With flush=false gradients stay in tape-local buffers until
  // flush_grads() is called (used to merge per-chunk results in a fixed
  // order when evaluating chunks in parallel).
  void backward(NodeRef root, Real seed = 1.0, bool flush = true);
  void backward(NodeRef root, std::span<const Real> seed, bool flush = true);
  void flush_grads();

  // Gradient accumulation buffer for a block (custom backward hooks
  // scatter into this).
  std::span<Real> grad_buffer(ParamBlock& block);

  // Drop all nodes but keep allocated capacity; parameters stay registered.
  void reset();

  // Internal accessors used by custom-op backward implementations.
  std::span<const Real> node_values(int idx) const;
  std::span<Real> node_adjoint(int idx);
  struct NodeIo {
    int a = -1, b = -1;
  };
  NodeIo node_inputs(int idx) const;

 private:
  friend struct TapeTest;
  enum class Op : uint8_t {
    kConst, kParam, kAffine, kAffineT, kMatTVec,
    kAffineB, kRowConcat, kColsSlice, kRowSumSq,
    kAdd, kSub, kMul, kDiv, kScale, kAddScaled, kAddConst, kConstMinus, kNeg,
    kRelu, kStepMask, kSigmoid, kExp, kLog, kSqrt, kSin, kCos, kClamp,
    kDot, kSum, kMean, kConcat, kSlice, kCross,
    kRotCoefA, kRotCoefB, kRotCoefC,
    kCustom,
  };
  struct Node {
    Op op;
    int32_t a = -1, b = -1;
    int32_t val = 0;
    int32_t len = 0;
    int32_t aux = -1;
  };

  NodeRef push(Op op, int len, int a = -1, int b = -1, int aux = -1);
  std::span<Real> val_span(const Node& n) { return {vals_.data() + n.val, size_t(n.len)}; }
  std::span<const Real> val_span(const Node& n) const {
    return {vals_.data() + n.val, size_t(n.len)};
  }
  std::span<Real> adj_span(const Node& n) { return {adj_.data() + n.val, size_t(n.len)}; }
  int register_param(ParamBlock& block);
  void backward_sweep();
  const Node& checked(NodeRef n) const;

  std::vector<Node> nodes_;
  std::vector<Real> vals_;
  std::vector<Real> adj_;
  std::vector<Real> aux_real_;
  std::vector<int32_t> aux_int_;
  std::vector<CustomOp> customs_;

  std::vector<ParamBlock*> params_;
  std::vector<std::vector<Real>> pgrads_;
  std::unordered_map<int, int> param_slot_;
};

// Max over coordinates of |analytic - central difference| /
// max(1, |central difference|), where the analytic gradient is read from
// block.grad and fn() re-evaluates the scalar function at the block's
// current values. The block is restored on exit.
Real finite_difference_check(const std::function<Real()>& fn, ParamBlock& block, Real step);

// ---- small scalar-expression sugar used by graph builders ----
struct Scalar {
  Tape* t = nullptr;
  NodeRef n;
  Real value() const { return t->value(n); }
};
inline Scalar operator+(Scalar a, Scalar b) { return {a.t, a.t->add(a.n, b.n)}; }
inline Scalar operator-(Scalar a, Scalar b) { return {a.t, a.t->sub(a.n, b.n)}; }
inline Scalar operator*(Scalar a, Scalar b) { return {a.t, a.t->mul(a.n, b.n)}; }
inline Scalar operator/(Scalar a, Scalar b) { return {a.t, a.t->div(a.n, b.n)}; }
inline Scalar operator*(Scalar a, Real c) { return {a.t, a.t->scale(a.n, c)}; }
inline Scalar operator*(Real c, Scalar a) { return a * c; }
inline Scalar operator+(Scalar a, Real c) { return {a.t, a.t->add_const(a.n, c)}; }
inline Scalar operator+(Real c, Scalar a) { return a + c; }
inline Scalar operator-(Scalar a, Real c) { return a + (-c); }
inline Scalar operator-(Real c, Scalar a) { return {a.t, a.t->const_minus(c, a.n)}; }
inline Scalar operator-(Scalar a) { return {a.t, a.t->neg(a.n)}; }

}  // namespace posefield::ad
