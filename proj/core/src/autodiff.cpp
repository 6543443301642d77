#include "posefield/autodiff.hpp"

#include <atomic>
#include <cmath>

#include "posefield/check.hpp"

namespace posefield::ad {

int ParamBlock::next_id() {
  static std::atomic<int> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

namespace {

// Series fallbacks for the rotation coefficients near u = theta^2 = 0.
constexpr Real kSeriesCutoff = 1e-8;

Real coef_a(Real u) {
  if (u < kSeriesCutoff) return 1.0 - u / 6.0 + u * u / 120.0;
  const Real t = std::sqrt(u);
  return std::sin(t) / t;
}
Real coef_a_du(Real u) {
  if (u < kSeriesCutoff) return -1.0 / 6.0 + u / 60.0;
  const Real t = std::sqrt(u);
  return (t * std::cos(t) - std::sin(t)) / (2.0 * t * t * t);
}
Real coef_b(Real u) {
  if (u < kSeriesCutoff) return 0.5 - u / 24.0 + u * u / 720.0;
  return (1.0 - std::cos(std::sqrt(u))) / u;
}
Real coef_b_du(Real u) {
  if (u < kSeriesCutoff) return -1.0 / 24.0 + u / 360.0;
  const Real t = std::sqrt(u);
  return (t * std::sin(t) - 2.0 * (1.0 - std::cos(t))) / (2.0 * u * u);
}
Real coef_c(Real u) {
  if (u < kSeriesCutoff) return 1.0 / 6.0 - u / 120.0 + u * u / 5040.0;
  const Real t = std::sqrt(u);
  return (t - std::sin(t)) / (t * u);
}
Real coef_c_du(Real u) {
  if (u < kSeriesCutoff) return -1.0 / 120.0 + u / 2520.0;
  const Real t = std::sqrt(u);
  return ((1.0 - std::cos(t)) * t - 3.0 * (t - std::sin(t))) / (2.0 * u * u * t);
}

Real sigmoid_fn(Real x) {
  if (x >= 0) {
    const Real e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Tape::Node& Tape::checked(NodeRef n) const {
  PF_CHECK_MSG(n.idx >= 0 && n.idx < int(nodes_.size()), "node " << n.idx << " not on tape");
  return nodes_[n.idx];
}

NodeRef Tape::push(Op op, int len, int a, int b, int aux) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.len = len;
  n.val = int32_t(vals_.size());
  n.aux = aux;
  vals_.resize(vals_.size() + size_t(len));
  nodes_.push_back(n);
  return {int32_t(nodes_.size()) - 1};
}

int Tape::register_param(ParamBlock& block) {
  auto it = param_slot_.find(block.id());
  if (it != param_slot_.end()) return it->second;
  const int slot = int(params_.size());
  params_.push_back(&block);
  pgrads_.emplace_back(block.size(), 0.0);
  param_slot_.emplace(block.id(), slot);
  return slot;
}

std::span<Real> Tape::grad_buffer(ParamBlock& block) {
  const int slot = register_param(block);
  return {pgrads_[slot].data(), pgrads_[slot].size()};
}

NodeRef Tape::constant(std::span<const Real> v) {
  NodeRef r = push(Op::kConst, int(v.size()));
  std::copy(v.begin(), v.end(), val_span(nodes_[r.idx]).begin());
  return r;
}

NodeRef Tape::constant(Real v) { return constant(std::span<const Real>(&v, 1)); }

NodeRef Tape::constant3(Real x, Real y, Real z) {
  const Real v[3] = {x, y, z};
  return constant(std::span<const Real>(v, 3));
}

NodeRef Tape::param(ParamBlock& block) {
  const int slot = register_param(block);
  NodeRef r = push(Op::kParam, int(block.size()), -1, -1, slot);
  auto out = val_span(nodes_[r.idx]);
  std::copy(block.values.begin(), block.values.end(), out.begin());
  return r;
}

NodeRef Tape::affine(ParamBlock& w, ParamBlock* b, NodeRef x) {
  const int n = checked(x).len;
  PF_CHECK_MSG(w.size() % size_t(n) == 0, "affine: weight shape does not divide input length");
  const int m = int(w.size() / size_t(n));
  if (b) PF_CHECK_MSG(int(b->size()) == m, "affine: bias length mismatch");
  const int wslot = register_param(w);
  const int bslot = b ? register_param(*b) : -1;
  const int aux = int(aux_int_.size());
  aux_int_.insert(aux_int_.end(), {wslot, bslot, m, n});
  NodeRef r = push(Op::kAffine, m, x.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto xin = val_span(nodes_[x.idx]);
  const Real* wp = w.values.data();
  for (int i = 0; i < m; ++i) {
    Real acc = b ? b->values[size_t(i)] : 0.0;
    const Real* row = wp + size_t(i) * n;
    for (int j = 0; j < n; ++j) acc += row[j] * xin[size_t(j)];
    out[size_t(i)] = acc;
  }
  return r;
}

NodeRef Tape::affine_t(ParamBlock& w, NodeRef u) {
  const int m = checked(u).len;
  PF_CHECK_MSG(w.size() % size_t(m) == 0, "affine_t: weight shape does not divide input length");
  const int n = int(w.size() / size_t(m));
  const int wslot = register_param(w);
  const int aux = int(aux_int_.size());
  aux_int_.insert(aux_int_.end(), {wslot, -1, m, n});
  NodeRef r = push(Op::kAffineT, n, u.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto uin = val_span(nodes_[u.idx]);
  const Real* wp = w.values.data();
  for (int j = 0; j < n; ++j) out[size_t(j)] = 0.0;
  for (int i = 0; i < m; ++i) {
    const Real* row = wp + size_t(i) * n;
    const Real ui = uin[size_t(i)];
    for (int j = 0; j < n; ++j) out[size_t(j)] += row[j] * ui;
  }
  return r;
}

NodeRef Tape::mat_t_vec(NodeRef a, int rows, int cols, NodeRef v) {
  const Node& an = checked(a);
  const Node& vn = checked(v);
  PF_CHECK_MSG(an.len == rows * cols, "mat_t_vec: matrix node length mismatch");
  PF_CHECK_MSG(vn.len == rows, "mat_t_vec: vector length mismatch");
  const int aux = int(aux_int_.size());
  aux_int_.insert(aux_int_.end(), {rows, cols});
  NodeRef r = push(Op::kMatTVec, cols, a.idx, v.idx, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]);
  auto vv = val_span(nodes_[v.idx]);
  for (int j = 0; j < cols; ++j) out[size_t(j)] = 0.0;
  for (int i = 0; i < rows; ++i) {
    const Real vi = vv[size_t(i)];
    for (int j = 0; j < cols; ++j) out[size_t(j)] += av[size_t(i) * cols + j] * vi;
  }
  return r;
}

namespace {
void check_binary(int la, int lb) {
  PF_CHECK_MSG(la == lb || lb == 1, "binary op: length mismatch " << la << " vs " << lb);
}
}  // namespace

NodeRef Tape::add(NodeRef a, NodeRef b) {
  const int len = checked(a).len, blen = checked(b).len;
  check_binary(len, blen);
  NodeRef r = push(Op::kAdd, len, a.idx, b.idx);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]), bv = val_span(nodes_[b.idx]);
  for (int i = 0; i < len; ++i) out[size_t(i)] = av[size_t(i)] + bv[blen == 1 ? 0 : size_t(i)];
  return r;
}

NodeRef Tape::sub(NodeRef a, NodeRef b) {
  const int len = checked(a).len, blen = checked(b).len;
  check_binary(len, blen);
  NodeRef r = push(Op::kSub, len, a.idx, b.idx);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]), bv = val_span(nodes_[b.idx]);
  for (int i = 0; i < len; ++i) out[size_t(i)] = av[size_t(i)] - bv[blen == 1 ? 0 : size_t(i)];
  return r;
}

NodeRef Tape::mul(NodeRef a, NodeRef b) {
  const int len = checked(a).len, blen = checked(b).len;
  check_binary(len, blen);
  NodeRef r = push(Op::kMul, len, a.idx, b.idx);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]), bv = val_span(nodes_[b.idx]);
  for (int i = 0; i < len; ++i) out[size_t(i)] = av[size_t(i)] * bv[blen == 1 ? 0 : size_t(i)];
  return r;
}

NodeRef Tape::div(NodeRef a, NodeRef b) {
  const int len = checked(a).len, blen = checked(b).len;
  check_binary(len, blen);
  NodeRef r = push(Op::kDiv, len, a.idx, b.idx);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]), bv = val_span(nodes_[b.idx]);
  for (int i = 0; i < len; ++i) out[size_t(i)] = av[size_t(i)] / bv[blen == 1 ? 0 : size_t(i)];
  return r;
}

NodeRef Tape::scale(NodeRef a, Real c) {
  const int len = checked(a).len;
  const int aux = int(aux_real_.size());
  aux_real_.push_back(c);
  NodeRef r = push(Op::kScale, len, a.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]);
  for (int i = 0; i < len; ++i) out[size_t(i)] = av[size_t(i)] * c;
  return r;
}

NodeRef Tape::add_scaled(NodeRef a, NodeRef b, Real c) {
  const int len = checked(a).len, blen = checked(b).len;
  check_binary(len, blen);
  const int aux = int(aux_real_.size());
  aux_real_.push_back(c);
  NodeRef r = push(Op::kAddScaled, len, a.idx, b.idx, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]), bv = val_span(nodes_[b.idx]);
  for (int i = 0; i < len; ++i)
    out[size_t(i)] = av[size_t(i)] + c * bv[blen == 1 ? 0 : size_t(i)];
  return r;
}

NodeRef Tape::add_const(NodeRef a, Real c) {
  const int len = checked(a).len;
  const int aux = int(aux_real_.size());
  aux_real_.push_back(c);
  NodeRef r = push(Op::kAddConst, len, a.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]);
  for (int i = 0; i < len; ++i) out[size_t(i)] = av[size_t(i)] + c;
  return r;
}

NodeRef Tape::const_minus(Real c, NodeRef a) {
  const int len = checked(a).len;
  const int aux = int(aux_real_.size());
  aux_real_.push_back(c);
  NodeRef r = push(Op::kConstMinus, len, a.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]);
  for (int i = 0; i < len; ++i) out[size_t(i)] = c - av[size_t(i)];
  return r;
}

NodeRef Tape::neg(NodeRef a) { return scale(a, -1.0); }

#define PF_UNARY_IMPL(name, opname, fwd)                       \
  NodeRef Tape::name(NodeRef a) {                              \
    const int len = checked(a).len;                            \
    NodeRef r = push(Op::opname, len, a.idx);                  \
    auto out = val_span(nodes_[r.idx]);                        \
    auto av = val_span(nodes_[a.idx]);                         \
    for (int i = 0; i < len; ++i) {                            \
      const Real x = av[size_t(i)];                            \
      out[size_t(i)] = (fwd);                                  \
    }                                                          \
    return r;                                                  \
  }

PF_UNARY_IMPL(relu, kRelu, x > 0 ? x : 0.0)
PF_UNARY_IMPL(step_mask, kStepMask, x > 0 ? 1.0 : 0.0)
PF_UNARY_IMPL(sigmoid, kSigmoid, sigmoid_fn(x))
PF_UNARY_IMPL(exp, kExp, std::exp(x))
PF_UNARY_IMPL(log, kLog, std::log(x))
PF_UNARY_IMPL(sqrt, kSqrt, std::sqrt(x))
PF_UNARY_IMPL(sin, kSin, std::sin(x))
PF_UNARY_IMPL(cos, kCos, std::cos(x))
PF_UNARY_IMPL(rot_coef_a, kRotCoefA, coef_a(x))
PF_UNARY_IMPL(rot_coef_b, kRotCoefB, coef_b(x))
PF_UNARY_IMPL(rot_coef_c, kRotCoefC, coef_c(x))
#undef PF_UNARY_IMPL

NodeRef Tape::clamp(NodeRef a, Real lo, Real hi) {
  const int len = checked(a).len;
  const int aux = int(aux_real_.size());
  aux_real_.push_back(lo);
  aux_real_.push_back(hi);
  NodeRef r = push(Op::kClamp, len, a.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]);
  for (int i = 0; i < len; ++i) out[size_t(i)] = std::min(hi, std::max(lo, av[size_t(i)]));
  return r;
}

NodeRef Tape::dot(NodeRef a, NodeRef b) {
  const int len = checked(a).len;
  PF_CHECK_MSG(len == checked(b).len, "dot: length mismatch");
  NodeRef r = push(Op::kDot, 1, a.idx, b.idx);
  auto av = val_span(nodes_[a.idx]), bv = val_span(nodes_[b.idx]);
  Real acc = 0;
  for (int i = 0; i < len; ++i) acc += av[size_t(i)] * bv[size_t(i)];
  vals_[size_t(nodes_[r.idx].val)] = acc;
  return r;
}

NodeRef Tape::sum(NodeRef a) {
  const int len = checked(a).len;
  NodeRef r = push(Op::kSum, 1, a.idx);
  auto av = val_span(nodes_[a.idx]);
  Real acc = 0;
  for (int i = 0; i < len; ++i) acc += av[size_t(i)];
  vals_[size_t(nodes_[r.idx].val)] = acc;
  return r;
}

NodeRef Tape::mean(NodeRef a) {
  const int len = checked(a).len;
  PF_CHECK_MSG(len > 0, "mean of empty node");
  NodeRef r = push(Op::kMean, 1, a.idx);
  auto av = val_span(nodes_[a.idx]);
  Real acc = 0;
  for (int i = 0; i < len; ++i) acc += av[size_t(i)];
  vals_[size_t(nodes_[r.idx].val)] = acc / len;
  return r;
}

NodeRef Tape::concat(std::span<const NodeRef> parts) {
  PF_CHECK_MSG(!parts.empty(), "concat of nothing");
  int total = 0;
  for (NodeRef p : parts) total += checked(p).len;
  const int aux = int(aux_int_.size());
  aux_int_.push_back(int(parts.size()));
  for (NodeRef p : parts) aux_int_.push_back(p.idx);
  NodeRef r = push(Op::kConcat, total, -1, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  int at = 0;
  for (NodeRef p : parts) {
    auto pv = val_span(nodes_[p.idx]);
    std::copy(pv.begin(), pv.end(), out.begin() + at);
    at += int(pv.size());
  }
  return r;
}

NodeRef Tape::slice(NodeRef a, int offset, int len) {
  const Node& an = checked(a);
  PF_CHECK_MSG(offset >= 0 && len >= 0 && offset + len <= an.len, "slice out of range");
  const int aux = int(aux_int_.size());
  aux_int_.push_back(offset);
  NodeRef r = push(Op::kSlice, len, a.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]);
  std::copy(av.begin() + offset, av.begin() + offset + len, out.begin());
  return r;
}

NodeRef Tape::cross(NodeRef a, NodeRef b) {
  const Node &an = checked(a), &bn = checked(b);
  PF_CHECK_MSG(an.len == 3 && bn.len == 3, "cross: 3-vectors required");
  NodeRef r = push(Op::kCross, 3, a.idx, b.idx);
  auto out = val_span(nodes_[r.idx]);
  auto u = val_span(nodes_[a.idx]), v = val_span(nodes_[b.idx]);
  out[0] = u[1] * v[2] - u[2] * v[1];
  out[1] = u[2] * v[0] - u[0] * v[2];
  out[2] = u[0] * v[1] - u[1] * v[0];
  return r;
}

NodeRef Tape::custom(std::span<const Real> value, NodeRef a, NodeRef b, CustomOp op) {
  const int aux = int(customs_.size());
  customs_.push_back(std::move(op));
  NodeRef r = push(Op::kCustom, int(value.size()), a.idx, b.idx, aux);
  auto out = val_span(nodes_[r.idx]);
  std::copy(value.begin(), value.end(), out.begin());
  return r;
}

std::span<const Real> Tape::values(NodeRef n) const { return val_span(checked(n)); }

Real Tape::value(NodeRef n) const {
  const Node& node = checked(n);
  PF_CHECK_MSG(node.len == 1, "value() on non-scalar node");
  return vals_[size_t(node.val)];
}

int Tape::length(NodeRef n) const { return checked(n).len; }

std::span<const Real> Tape::adjoint(NodeRef n) const {
  const Node& node = checked(n);
  PF_CHECK_MSG(adj_.size() == vals_.size(), "adjoint requested before backward");
  return {adj_.data() + node.val, size_t(node.len)};
}

std::span<const Real> Tape::node_values(int idx) const { return val_span(nodes_[size_t(idx)]); }
std::span<Real> Tape::node_adjoint(int idx) {
  const Node& n = nodes_[size_t(idx)];
  return {adj_.data() + n.val, size_t(n.len)};
}
Tape::NodeIo Tape::node_inputs(int idx) const {
  const Node& n = nodes_[size_t(idx)];
  return {n.a, n.b};
}

void Tape::backward(NodeRef root, Real seed, bool flush) {
  backward(root, std::span<const Real>(&seed, 1), flush);
}

void Tape::backward(NodeRef root, std::span<const Real> seed, bool flush) {
  const Node& rn = checked(root);
  PF_CHECK_MSG(int(seed.size()) == rn.len, "backward: seed length mismatch");
  adj_.assign(vals_.size(), 0.0);
  std::copy(seed.begin(), seed.end(), adj_.begin() + rn.val);
  backward_sweep();
  if (flush) flush_grads();
}

void Tape::flush_grads() {
  for (size_t s = 0; s < params_.size(); ++s) {
    auto& buf = pgrads_[s];
    auto& g = params_[s]->grad;
    for (size_t i = 0; i < buf.size(); ++i) {
      g[i] += buf[i];
      buf[i] = 0.0;
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  vals_.clear();
  adj_.clear();
  aux_real_.clear();
  aux_int_.clear();
  customs_.clear();
}

void Tape::backward_sweep() {
  for (int idx = int(nodes_.size()) - 1; idx >= 0; --idx) {
    Node& n = nodes_[size_t(idx)];
    const Real* g = adj_.data() + n.val;
    bool any = false;
    for (int i = 0; i < n.len; ++i)
      if (g[i] != 0.0) {
        any = true;
        break;
      }
    if (!any) continue;
    const Real* v = vals_.data() + n.val;
    switch (n.op) {
      case Op::kConst:
      case Op::kStepMask:
        break;
      case Op::kParam: {
        auto& pg = pgrads_[size_t(n.aux)];
        for (int i = 0; i < n.len; ++i) pg[size_t(i)] += g[i];
        break;
      }
      case Op::kAffine: {
        const int wslot = aux_int_[size_t(n.aux)];
        const int bslot = aux_int_[size_t(n.aux) + 1];
        const int m = aux_int_[size_t(n.aux) + 2];
        const int nn = aux_int_[size_t(n.aux) + 3];
        const Node& xn = nodes_[size_t(n.a)];
        const Real* x = vals_.data() + xn.val;
        Real* gx = adj_.data() + xn.val;
        const Real* w = params_[size_t(wslot)]->values.data();
        Real* gw = pgrads_[size_t(wslot)].data();
        Real* gb = bslot >= 0 ? pgrads_[size_t(bslot)].data() : nullptr;
        for (int i = 0; i < m; ++i) {
          const Real gi = g[i];
          if (gi == 0.0) continue;
          if (gb) gb[i] += gi;
          const Real* row = w + size_t(i) * nn;
          Real* grow = gw + size_t(i) * nn;
          for (int j = 0; j < nn; ++j) {
            grow[j] += gi * x[j];
            gx[j] += gi * row[j];
          }
        }
        break;
      }
      case Op::kAffineT: {
        const int wslot = aux_int_[size_t(n.aux)];
        const int m = aux_int_[size_t(n.aux) + 2];
        const int nn = aux_int_[size_t(n.aux) + 3];
        const Node& un = nodes_[size_t(n.a)];
        const Real* u = vals_.data() + un.val;
        Real* gu = adj_.data() + un.val;
        const Real* w = params_[size_t(wslot)]->values.data();
        Real* gw = pgrads_[size_t(wslot)].data();
        // y_j = sum_i W_ij u_i
        for (int i = 0; i < m; ++i) {
          const Real* row = w + size_t(i) * nn;
          Real* grow = gw + size_t(i) * nn;
          const Real ui = u[i];
          Real acc = 0;
          for (int j = 0; j < nn; ++j) {
            acc += row[j] * g[j];
            grow[j] += ui * g[j];
          }
          gu[i] += acc;
        }
        break;
      }
      case Op::kAffineB: {
        const int wslot = aux_int_[size_t(n.aux)];
        const int bslot = aux_int_[size_t(n.aux) + 1];
        const int m = aux_int_[size_t(n.aux) + 2];
        const int k = aux_int_[size_t(n.aux) + 3];
        const int rows = aux_int_[size_t(n.aux) + 4];
        const Node& xn = nodes_[size_t(n.a)];
        const Real* x = vals_.data() + xn.val;
        Real* gx = adj_.data() + xn.val;
        const Real* w = params_[size_t(wslot)]->values.data();
        Real* gw = pgrads_[size_t(wslot)].data();
        Real* gb = bslot >= 0 ? pgrads_[size_t(bslot)].data() : nullptr;
        for (int r = 0; r < rows; ++r) {
          const Real* xr = x + size_t(r) * k;
          Real* gxr = gx + size_t(r) * k;
          const Real* gr = g + size_t(r) * m;
          for (int i = 0; i < m; ++i) {
            const Real gi = gr[i];
            if (gi == 0.0) continue;
            if (gb) gb[i] += gi;
            const Real* wrow = w + size_t(i) * k;
            Real* gwrow = gw + size_t(i) * k;
            for (int j = 0; j < k; ++j) {
              gwrow[j] += gi * xr[j];
              gxr[j] += gi * wrow[j];
            }
          }
        }
        break;
      }
      case Op::kRowConcat: {
        const int rows = aux_int_[size_t(n.aux)];
        const int p = aux_int_[size_t(n.aux) + 1];
        const int q = aux_int_[size_t(n.aux) + 2];
        const bool broadcast = aux_int_[size_t(n.aux) + 3] != 0;
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        Real* gb = adj_.data() + nodes_[size_t(n.b)].val;
        for (int r = 0; r < rows; ++r) {
          const Real* gr = g + size_t(r) * (p + q);
          Real* gar = ga + size_t(r) * p;
          for (int j = 0; j < p; ++j) gar[j] += gr[j];
          Real* gbr = broadcast ? gb : gb + size_t(r) * q;
          for (int j = 0; j < q; ++j) gbr[j] += gr[p + j];
        }
        break;
      }
      case Op::kColsSlice: {
        const int rows = aux_int_[size_t(n.aux)];
        const int q = aux_int_[size_t(n.aux) + 1];
        const int from = aux_int_[size_t(n.aux) + 2];
        const int count = aux_int_[size_t(n.aux) + 3];
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < count; ++j)
            ga[size_t(r) * q + size_t(from + j)] += g[size_t(r) * count + size_t(j)];
        break;
      }
      case Op::kRowSumSq: {
        const int rows = aux_int_[size_t(n.aux)];
        const int q = aux_int_[size_t(n.aux) + 1];
        const Real* x = vals_.data() + nodes_[size_t(n.a)].val;
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < q; ++j)
            ga[size_t(r) * q + size_t(j)] += 2.0 * g[size_t(r)] * x[size_t(r) * q + size_t(j)];
        break;
      }
      case Op::kMatTVec: {
        const int rows = aux_int_[size_t(n.aux)];
        const int cols = aux_int_[size_t(n.aux) + 1];
        const Node& an = nodes_[size_t(n.a)];
        const Node& vn = nodes_[size_t(n.b)];
        const Real* a = vals_.data() + an.val;
        Real* ga = adj_.data() + an.val;
        const Real* vv = vals_.data() + vn.val;
        Real* gv = adj_.data() + vn.val;
        for (int i = 0; i < rows; ++i) {
          const Real vi = vv[i];
          Real acc = 0;
          for (int j = 0; j < cols; ++j) {
            ga[size_t(i) * cols + j] += vi * g[j];
            acc += a[size_t(i) * cols + j] * g[j];
          }
          gv[i] += acc;
        }
        break;
      }
      case Op::kAdd: {
        const Node& an = nodes_[size_t(n.a)];
        const Node& bn = nodes_[size_t(n.b)];
        Real* ga = adj_.data() + an.val;
        Real* gb = adj_.data() + bn.val;
        for (int i = 0; i < n.len; ++i) {
          ga[i] += g[i];
          gb[bn.len == 1 ? 0 : i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        const Node& an = nodes_[size_t(n.a)];
        const Node& bn = nodes_[size_t(n.b)];
        Real* ga = adj_.data() + an.val;
        Real* gb = adj_.data() + bn.val;
        for (int i = 0; i < n.len; ++i) {
          ga[i] += g[i];
          gb[bn.len == 1 ? 0 : i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        const Node& an = nodes_[size_t(n.a)];
        const Node& bn = nodes_[size_t(n.b)];
        const Real* a = vals_.data() + an.val;
        const Real* b = vals_.data() + bn.val;
        Real* ga = adj_.data() + an.val;
        Real* gb = adj_.data() + bn.val;
        for (int i = 0; i < n.len; ++i) {
          const int bi = bn.len == 1 ? 0 : i;
          ga[i] += g[i] * b[bi];
          gb[bi] += g[i] * a[i];
        }
        break;
      }
      case Op::kDiv: {
        const Node& an = nodes_[size_t(n.a)];
        const Node& bn = nodes_[size_t(n.b)];
        const Real* b = vals_.data() + bn.val;
        Real* ga = adj_.data() + an.val;
        Real* gb = adj_.data() + bn.val;
        for (int i = 0; i < n.len; ++i) {
          const int bi = bn.len == 1 ? 0 : i;
          const Real inv = 1.0 / b[bi];
          ga[i] += g[i] * inv;
          gb[bi] -= g[i] * v[i] * inv;  // v = a/b so a/b^2 = v/b
        }
        break;
      }
      case Op::kScale: {
        const Real c = aux_real_[size_t(n.aux)];
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[i] += c * g[i];
        break;
      }
      case Op::kAddScaled: {
        const Real c = aux_real_[size_t(n.aux)];
        const Node& bn = nodes_[size_t(n.b)];
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        Real* gb = adj_.data() + bn.val;
        for (int i = 0; i < n.len; ++i) {
          ga[i] += g[i];
          gb[bn.len == 1 ? 0 : i] += c * g[i];
        }
        break;
      }
      case Op::kAddConst: {
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[i] += g[i];
        break;
      }
      case Op::kConstMinus: {
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[i] -= g[i];
        break;
      }
      case Op::kRelu: {
        const Real* x = vals_.data() + nodes_[size_t(n.a)].val;
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[i] += x[i] > 0 ? g[i] : 0.0;
        break;
      }
      case Op::kSigmoid: {
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[i] += g[i] * v[i] * (1.0 - v[i]);
        break;
      }
      case Op::kExp: {
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[i] += g[i] * v[i];
        break;
      }
      case Op::kLog: {
        const Real* x = vals_.data() + nodes_[size_t(n.a)].val;
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[i] += g[i] / x[i];
        break;
      }
      case Op::kSqrt: {
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        // guarded at the origin: sqrt'(0) is +inf, use a large finite slope
        for (int i = 0; i < n.len; ++i) ga[i] += g[i] * 0.5 / std::max(v[i], Real(1e-12));
        break;
      }
      case Op::kSin: {
        const Real* x = vals_.data() + nodes_[size_t(n.a)].val;
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[i] += g[i] * std::cos(x[i]);
        break;
      }
      case Op::kCos: {
        const Real* x = vals_.data() + nodes_[size_t(n.a)].val;
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[i] -= g[i] * std::sin(x[i]);
        break;
      }
      case Op::kClamp: {
        const Real lo = aux_real_[size_t(n.aux)];
        const Real hi = aux_real_[size_t(n.aux) + 1];
        const Real* x = vals_.data() + nodes_[size_t(n.a)].val;
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i)
          if (x[i] > lo && x[i] < hi) ga[i] += g[i];
        break;
      }
      case Op::kDot: {
        const Node& an = nodes_[size_t(n.a)];
        const Node& bn = nodes_[size_t(n.b)];
        const Real* a = vals_.data() + an.val;
        const Real* b = vals_.data() + bn.val;
        Real* ga = adj_.data() + an.val;
        Real* gb = adj_.data() + bn.val;
        const Real g0 = g[0];
        for (int i = 0; i < an.len; ++i) {
          ga[i] += g0 * b[i];
          gb[i] += g0 * a[i];
        }
        break;
      }
      case Op::kSum: {
        const Node& an = nodes_[size_t(n.a)];
        Real* ga = adj_.data() + an.val;
        for (int i = 0; i < an.len; ++i) ga[i] += g[0];
        break;
      }
      case Op::kMean: {
        const Node& an = nodes_[size_t(n.a)];
        Real* ga = adj_.data() + an.val;
        const Real gi = g[0] / an.len;
        for (int i = 0; i < an.len; ++i) ga[i] += gi;
        break;
      }
      case Op::kConcat: {
        const int count = aux_int_[size_t(n.aux)];
        int at = 0;
        for (int p = 0; p < count; ++p) {
          const Node& pn = nodes_[size_t(aux_int_[size_t(n.aux) + 1 + p])];
          Real* gp = adj_.data() + pn.val;
          for (int i = 0; i < pn.len; ++i) gp[i] += g[at + i];
          at += pn.len;
        }
        break;
      }
      case Op::kSlice: {
        const int offset = aux_int_[size_t(n.aux)];
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) ga[offset + i] += g[i];
        break;
      }
      case Op::kCross: {
        const Node& an = nodes_[size_t(n.a)];
        const Node& bn = nodes_[size_t(n.b)];
        const Real* u = vals_.data() + an.val;
        const Real* w = vals_.data() + bn.val;
        Real* gu = adj_.data() + an.val;
        Real* gw = adj_.data() + bn.val;
        // d(u x w)/du^T g = w x g ; d(u x w)/dw^T g = g x u
        gu[0] += w[1] * g[2] - w[2] * g[1];
        gu[1] += w[2] * g[0] - w[0] * g[2];
        gu[2] += w[0] * g[1] - w[1] * g[0];
        gw[0] += g[1] * u[2] - g[2] * u[1];
        gw[1] += g[2] * u[0] - g[0] * u[2];
        gw[2] += g[0] * u[1] - g[1] * u[0];
        break;
      }
      case Op::kRotCoefA:
      case Op::kRotCoefB:
      case Op::kRotCoefC: {
        const Real* x = vals_.data() + nodes_[size_t(n.a)].val;
        Real* ga = adj_.data() + nodes_[size_t(n.a)].val;
        for (int i = 0; i < n.len; ++i) {
          Real d = 0;
          if (n.op == Op::kRotCoefA) d = coef_a_du(x[i]);
          else if (n.op == Op::kRotCoefB) d = coef_b_du(x[i]);
          else d = coef_c_du(x[i]);
          ga[i] += g[i] * d;
        }
        break;
      }
      case Op::kCustom: {
        const CustomOp& op = customs_[size_t(n.aux)];
        if (op.backward) op.backward(*this, op, idx);
        break;
      }
    }
  }
}

Real finite_difference_check(const std::function<Real()>& fn, ParamBlock& block, Real step) {
  PF_CHECK_MSG(step > 0, "finite_difference_check: step must be positive");
  Real max_err = 0;
  for (size_t i = 0; i < block.size(); ++i) {
    const Real saved = block.values[i];
    block.values[i] = saved + step;
    const Real fp = fn();
    block.values[i] = saved - step;
    const Real fm = fn();
    block.values[i] = saved;
    PF_CHECK_FINITE(std::isfinite(fp) && std::isfinite(fm));
    const Real numeric = (fp - fm) / (2 * step);
    const Real err = std::abs(block.grad[i] - numeric) / std::max(Real(1), std::abs(numeric));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace posefield::ad

namespace posefield::ad {

// ---- batched (rows x cols) ops ----

NodeRef Tape::affine_batch(ParamBlock& w, ParamBlock* b, NodeRef x, int rows) {
  const int xlen = checked(x).len;
  PF_CHECK_MSG(rows > 0 && xlen % rows == 0, "affine_batch: rows do not divide input length");
  const int k = xlen / rows;
  PF_CHECK_MSG(w.size() % size_t(k) == 0, "affine_batch: weight shape mismatch");
  const int m = int(w.size() / size_t(k));
  if (b) PF_CHECK_MSG(int(b->size()) == m, "affine_batch: bias length mismatch");
  const int wslot = register_param(w);
  const int bslot = b ? register_param(*b) : -1;
  const int aux = int(aux_int_.size());
  aux_int_.insert(aux_int_.end(), {wslot, bslot, m, k, rows});
  NodeRef r = push(Op::kAffineB, m * rows, x.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto xin = val_span(nodes_[x.idx]);
  const Real* wp = w.values.data();
  for (int n = 0; n < rows; ++n) {
    const Real* xr = xin.data() + size_t(n) * k;
    Real* yr = out.data() + size_t(n) * m;
    for (int i = 0; i < m; ++i) {
      Real acc = b ? b->values[size_t(i)] : 0.0;
      const Real* row = wp + size_t(i) * k;
      for (int j = 0; j < k; ++j) acc += row[j] * xr[j];
      yr[i] = acc;
    }
  }
  return r;
}

NodeRef Tape::row_concat(NodeRef a, NodeRef b, int rows, int p, int q) {
  const int alen = checked(a).len, blen = checked(b).len;
  PF_CHECK_MSG(alen == rows * p, "row_concat: lhs shape mismatch");
  const bool broadcast = blen == q && rows > 1;
  PF_CHECK_MSG(broadcast || blen == rows * q, "row_concat: rhs shape mismatch");
  const int aux = int(aux_int_.size());
  aux_int_.insert(aux_int_.end(), {rows, p, q, broadcast ? 1 : 0});
  NodeRef r = push(Op::kRowConcat, rows * (p + q), a.idx, b.idx, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]);
  auto bv = val_span(nodes_[b.idx]);
  for (int n = 0; n < rows; ++n) {
    Real* dst = out.data() + size_t(n) * (p + q);
    std::copy(av.begin() + size_t(n) * p, av.begin() + size_t(n + 1) * p, dst);
    const Real* src = broadcast ? bv.data() : bv.data() + size_t(n) * q;
    std::copy(src, src + q, dst + p);
  }
  return r;
}

NodeRef Tape::cols_slice(NodeRef a, int rows, int q, int from, int count) {
  PF_CHECK_MSG(checked(a).len == rows * q, "cols_slice: shape mismatch");
  PF_CHECK_MSG(from >= 0 && count > 0 && from + count <= q, "cols_slice: column range");
  const int aux = int(aux_int_.size());
  aux_int_.insert(aux_int_.end(), {rows, q, from, count});
  NodeRef r = push(Op::kColsSlice, rows * count, a.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]);
  for (int n = 0; n < rows; ++n)
    std::copy(av.begin() + size_t(n) * q + from, av.begin() + size_t(n) * q + from + count,
              out.begin() + size_t(n) * count);
  return r;
}

NodeRef Tape::row_sum_sq(NodeRef a, int rows, int q) {
  PF_CHECK_MSG(checked(a).len == rows * q, "row_sum_sq: shape mismatch");
  const int aux = int(aux_int_.size());
  aux_int_.insert(aux_int_.end(), {rows, q});
  NodeRef r = push(Op::kRowSumSq, rows, a.idx, -1, aux);
  auto out = val_span(nodes_[r.idx]);
  auto av = val_span(nodes_[a.idx]);
  for (int n = 0; n < rows; ++n) {
    Real acc = 0;
    for (int j = 0; j < q; ++j) {
      const Real v = av[size_t(n) * q + size_t(j)];
      acc += v * v;
    }
    out[size_t(n)] = acc;
  }
  return r;
}

}  // namespace posefield::ad
