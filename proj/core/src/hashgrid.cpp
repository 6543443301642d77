#include "posefield/hashgrid.hpp"

#include <cmath>

#include "posefield/check.hpp"

namespace posefield {

namespace {
constexpr uint32_t kPrime1 = 1u;
constexpr uint32_t kPrime2 = 2654435761u;
constexpr uint32_t kPrime3 = 805459861u;

void validate(const GridConfig& cfg) {
  PF_CHECK_MSG(cfg.levels >= 2, "grid needs at least 2 levels");
  PF_CHECK_MSG(cfg.n_min >= 1, "n_min must be >= 1");
  PF_CHECK_MSG(cfg.n_max >= cfg.n_min, "n_max must be >= n_min");
  PF_CHECK_MSG(cfg.table_size > 0 && (cfg.table_size & (cfg.table_size - 1)) == 0,
               "table_size must be a power of two");
  PF_CHECK_MSG(cfg.features >= 1, "features must be >= 1");
}
}  // namespace

double cosine_window(int level, double alpha) {
  const double d = alpha - level;
  if (d <= 0) return 0.0;
  if (d >= 1) return 1.0;
  return (1.0 - std::cos(d * M_PI)) / 2.0;
}

double progress_to_alpha(int64_t step, int64_t total_steps, double c2f_start, double c2f_end,
                         int levels) {
  PF_CHECK_MSG(c2f_start >= 0 && c2f_start < c2f_end && c2f_end <= 1, "bad c2f interval");
  PF_CHECK_MSG(total_steps > 0, "total_steps must be positive");
  const double progress = double(step) / double(total_steps);
  const double t = std::clamp((progress - c2f_start) / (c2f_end - c2f_start), 0.0, 1.0);
  return levels * t;
}

std::vector<int> HashGridEncoder::level_resolutions(const GridConfig& cfg) {
  validate(cfg);
  // b from Eq. of the geometric schedule; degenerate n_min == n_max uses
  // b = 1 so the expression stays total.
  const double b = cfg.n_max == cfg.n_min
                       ? 1.0
                       : std::exp((std::log(double(cfg.n_max)) - std::log(double(cfg.n_min))) /
                                  double(cfg.levels - 1));
  std::vector<int> res(static_cast<size_t>(cfg.levels));
  double scale = 1.0;
  for (int l = 0; l < cfg.levels; ++l) {
    res[size_t(l)] = int(std::floor(double(cfg.n_min) * scale));
    scale *= b;
  }
  return res;
}

uint32_t HashGridEncoder::hash_index(uint32_t x, uint32_t y, uint32_t z, uint32_t table_size) {
  // 32-bit wrapping multiplies, XOR, then mod table_size (a power of two).
  const uint32_t h = (x * kPrime1) ^ (y * kPrime2) ^ (z * kPrime3);
  return h & (table_size - 1);
}

HashGridEncoder::HashGridEncoder(std::string name, const GridConfig& cfg, Rng rng) : cfg_(cfg) {
  res_ = level_resolutions(cfg);
  rows_.resize(size_t(cfg.levels));
  hashed_.resize(size_t(cfg.levels));
  tables_.reserve(size_t(cfg.levels));
  for (int l = 0; l < cfg.levels; ++l) {
    const uint64_t verts = uint64_t(res_[size_t(l)] + 1) * uint64_t(res_[size_t(l)] + 1) *
                           uint64_t(res_[size_t(l)] + 1);
    hashed_[size_t(l)] = verts > cfg.table_size;
    rows_[size_t(l)] = hashed_[size_t(l)] ? cfg.table_size : uint32_t(verts);
    tables_.emplace_back(name + ".level" + std::to_string(l),
                         size_t(rows_[size_t(l)]) * size_t(cfg.features));
    for (auto& v : tables_.back().values) v = rng.uniform(-cfg.init_scale, cfg.init_scale);
  }
}

std::vector<ad::ParamBlock*> HashGridEncoder::parameters() {
  std::vector<ad::ParamBlock*> out;
  out.reserve(tables_.size());
  for (auto& t : tables_) out.push_back(&t);
  return out;
}

void HashGridEncoder::gather(const Vec3& x, int level, Corners& c) const {
  const int n = res_[size_t(level)];
  int base[3];
  double frac[3], dscale[3];
  for (int d = 0; d < 3; ++d) {
    const double raw = x[d];
    const double xc = std::clamp(raw, 0.0, 1.0);
    const double pos = xc * n;
    int i0 = int(pos);
    if (i0 > n - 1) i0 = n - 1;
    base[d] = i0;
    frac[d] = pos - i0;
    dscale[d] = (raw < 0.0 || raw > 1.0) ? 0.0 : double(n);
  }
  const bool hashed = hashed_[size_t(level)];
  const uint32_t stride = uint32_t(n + 1);
  for (int corner = 0; corner < 8; ++corner) {
    const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
    const uint32_t ix = uint32_t(base[0] + bx);
    const uint32_t iy = uint32_t(base[1] + by);
    const uint32_t iz = uint32_t(base[2] + bz);
    c.row[corner] = hashed ? hash_index(ix, iy, iz, cfg_.table_size)
                           : (iz * stride + iy) * stride + ix;
    const double wx = bx ? frac[0] : 1.0 - frac[0];
    const double wy = by ? frac[1] : 1.0 - frac[1];
    const double wz = bz ? frac[2] : 1.0 - frac[2];
    c.w[corner] = wx * wy * wz;
    c.dw[corner][0] = (bx ? 1.0 : -1.0) * dscale[0] * wy * wz;
    c.dw[corner][1] = (by ? 1.0 : -1.0) * dscale[1] * wx * wz;
    c.dw[corner][2] = (bz ? 1.0 : -1.0) * dscale[2] * wx * wy;
  }
}

void HashGridEncoder::encode(const Vec3& x, double alpha, std::span<double> out) const {
  PF_CHECK_MSG(int(out.size()) == feature_dim(), "encode: output span size mismatch");
  PF_CHECK_FINITE(x.allFinite());
  const int f = cfg_.features;
  Corners c;
  for (int l = 0; l < cfg_.levels; ++l) {
    double* dst = out.data() + size_t(l) * f;
    const double win = cosine_window(l, alpha);
    if (win == 0.0) {
      for (int k = 0; k < f; ++k) dst[k] = 0.0;
      continue;
    }
    gather(x, l, c);
    const double* tab = tables_[size_t(l)].values.data();
    for (int k = 0; k < f; ++k) {
      double acc = 0;
      for (int corner = 0; corner < 8; ++corner)
        acc += c.w[corner] * tab[size_t(c.row[corner]) * f + k];
      dst[k] = win * acc;
    }
  }
}

void HashGridEncoder::encode_jacobian(const Vec3& x, double alpha, std::span<double> jac) const {
  PF_CHECK_MSG(int(jac.size()) == feature_dim() * 3, "encode_jacobian: span size mismatch");
  const int f = cfg_.features;
  Corners c;
  for (int l = 0; l < cfg_.levels; ++l) {
    double* dst = jac.data() + size_t(l) * f * 3;
    const double win = cosine_window(l, alpha);
    if (win == 0.0) {
      for (int k = 0; k < f * 3; ++k) dst[k] = 0.0;
      continue;
    }
    gather(x, l, c);
    const double* tab = tables_[size_t(l)].values.data();
    for (int k = 0; k < f; ++k) {
      double acc[3] = {0, 0, 0};
      for (int corner = 0; corner < 8; ++corner) {
        const double tv = tab[size_t(c.row[corner]) * f + k];
        acc[0] += c.dw[corner][0] * tv;
        acc[1] += c.dw[corner][1] * tv;
        acc[2] += c.dw[corner][2] * tv;
      }
      for (int d = 0; d < 3; ++d) dst[size_t(k) * 3 + d] = win * acc[d];
    }
  }
}

void HashGridEncoder::encode_backward(ad::Tape& tape, const ad::CustomOp& op, int node_idx) {
  auto* enc = static_cast<HashGridEncoder*>(const_cast<void*>(op.obj));
  const double alpha = op.scalar0;
  const auto io = tape.node_inputs(node_idx);
  const auto xs = tape.node_values(io.a);
  const Vec3 x(xs[0], xs[1], xs[2]);
  const auto g = tape.node_adjoint(node_idx);
  auto gx = tape.node_adjoint(io.a);
  const int f = enc->cfg_.features;
  Corners c;
  for (int l = 0; l < enc->cfg_.levels; ++l) {
    const double win = cosine_window(l, alpha);
    if (win == 0.0) continue;
    enc->gather(x, l, c);
    const double* tab = enc->tables_[size_t(l)].values.data();
    auto gtab = tape.grad_buffer(enc->tables_[size_t(l)]);
    for (int k = 0; k < f; ++k) {
      const double gk = win * g[size_t(l) * f + k];
      if (gk == 0.0) continue;
      for (int corner = 0; corner < 8; ++corner) {
        gtab[size_t(c.row[corner]) * f + k] += gk * c.w[corner];
        const double tv = tab[size_t(c.row[corner]) * f + k];
        gx[0] += gk * c.dw[corner][0] * tv;
        gx[1] += gk * c.dw[corner][1] * tv;
        gx[2] += gk * c.dw[corner][2] * tv;
      }
    }
  }
}

ad::NodeRef HashGridEncoder::encode_node(ad::Tape& tape, ad::NodeRef x, double alpha) {
  PF_CHECK_MSG(tape.length(x) == 3, "encode_node: x must be a 3-vector node");
  // Register the tables up front so the backward hook never grows the
  // tape's parameter registry mid-sweep.
  for (auto& t : tables_) tape.grad_buffer(t);
  const auto xs = tape.values(x);
  std::vector<double> value(static_cast<size_t>(feature_dim()));
  encode(Vec3(xs[0], xs[1], xs[2]), alpha, value);
  ad::CustomOp op;
  op.obj = this;
  op.scalar0 = alpha;
  op.backward = &encode_backward;
  return tape.custom(value, x, {}, std::move(op));
}

void HashGridEncoder::jacobian_backward(ad::Tape& tape, const ad::CustomOp& op, int node_idx) {
  auto* enc = static_cast<HashGridEncoder*>(const_cast<void*>(op.obj));
  const double alpha = op.scalar0;
  const Vec3 x(op.data[0], op.data[1], op.data[2]);
  const auto g = tape.node_adjoint(node_idx);
  const int f = enc->cfg_.features;
  Corners c;
  for (int l = 0; l < enc->cfg_.levels; ++l) {
    const double win = cosine_window(l, alpha);
    if (win == 0.0) continue;
    enc->gather(x, l, c);
    auto gtab = tape.grad_buffer(enc->tables_[size_t(l)]);
    for (int k = 0; k < f; ++k) {
      for (int d = 0; d < 3; ++d) {
        const double gk = win * g[(size_t(l) * f + k) * 3 + d];
        if (gk == 0.0) continue;
        for (int corner = 0; corner < 8; ++corner)
          gtab[size_t(c.row[corner]) * f + k] += gk * c.dw[corner][d];
      }
    }
  }
}

void HashGridEncoder::encode_batch_backward(ad::Tape& tape, const ad::CustomOp& op,
                                             int node_idx) {
  auto* enc = static_cast<HashGridEncoder*>(const_cast<void*>(op.obj));
  const double alpha = op.scalar0;
  const int rows = op.i0;
  const auto io = tape.node_inputs(node_idx);
  const auto xs = tape.node_values(io.a);
  const auto g = tape.node_adjoint(node_idx);
  auto gx = tape.node_adjoint(io.a);
  const int f = enc->cfg_.features;
  const int fd = enc->feature_dim();
  Corners c;
  for (int l = 0; l < enc->cfg_.levels; ++l) {
    const double win = cosine_window(l, alpha);
    if (win == 0.0) continue;
    const double* tab = enc->tables_[size_t(l)].values.data();
    auto gtab = tape.grad_buffer(enc->tables_[size_t(l)]);
    for (int r = 0; r < rows; ++r) {
      const Vec3 x(xs[size_t(r) * 3], xs[size_t(r) * 3 + 1], xs[size_t(r) * 3 + 2]);
      enc->gather(x, l, c);
      for (int k = 0; k < f; ++k) {
        const double gk = win * g[size_t(r) * fd + size_t(l) * f + k];
        if (gk == 0.0) continue;
        for (int corner = 0; corner < 8; ++corner) {
          gtab[size_t(c.row[corner]) * f + k] += gk * c.w[corner];
          const double tv = tab[size_t(c.row[corner]) * f + k];
          gx[size_t(r) * 3 + 0] += gk * c.dw[corner][0] * tv;
          gx[size_t(r) * 3 + 1] += gk * c.dw[corner][1] * tv;
          gx[size_t(r) * 3 + 2] += gk * c.dw[corner][2] * tv;
        }
      }
    }
  }
}

ad::NodeRef HashGridEncoder::encode_batch_node(ad::Tape& tape, ad::NodeRef positions, int rows,
                                               double alpha) {
  PF_CHECK_MSG(tape.length(positions) == rows * 3, "encode_batch_node: positions shape mismatch");
  for (auto& t : tables_) tape.grad_buffer(t);
  const auto xs = tape.values(positions);
  const int fd = feature_dim();
  std::vector<double> value(static_cast<size_t>(rows) * size_t(fd));
  for (int r = 0; r < rows; ++r) {
    const Vec3 x(xs[size_t(r) * 3], xs[size_t(r) * 3 + 1], xs[size_t(r) * 3 + 2]);
    encode(x, alpha, std::span<double>(value).subspan(size_t(r) * size_t(fd), size_t(fd)));
  }
  ad::CustomOp op;
  op.obj = this;
  op.scalar0 = alpha;
  op.i0 = rows;
  op.backward = &encode_batch_backward;
  return tape.custom(value, positions, {}, std::move(op));
}

ad::NodeRef HashGridEncoder::encode_jacobian_node(ad::Tape& tape, const Vec3& x, double alpha) {
  for (auto& t : tables_) tape.grad_buffer(t);
  std::vector<double> value(static_cast<size_t>(feature_dim()) * 3);
  encode_jacobian(x, alpha, value);
  ad::CustomOp op;
  op.obj = this;
  op.scalar0 = alpha;
  op.data = {x.x(), x.y(), x.z()};
  op.backward = &jacobian_backward;
  return tape.custom(value, {}, {}, std::move(op));
}

}  // namespace posefield
