#include "posefield/field.hpp"

#include <cmath>

#include "posefield/check.hpp"

namespace posefield {

namespace {

double sigmoid_fn(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

thread_local std::vector<double> tl_buf_a, tl_buf_b;

}  // namespace

Mlp::Mlp(std::string name, std::vector<int> dims, Rng& rng, double head_bias)
    : dims_(std::move(dims)) {
  PF_CHECK_MSG(dims_.size() >= 2, "mlp needs at least input and output dims");
  const int layers = int(dims_.size()) - 1;
  weights_.reserve(size_t(layers));
  biases_.reserve(size_t(layers));
  for (int l = 0; l < layers; ++l) {
    const int in = dims_[size_t(l)], out = dims_[size_t(l) + 1];
    weights_.emplace_back(name + ".w" + std::to_string(l), size_t(out) * size_t(in));
    biases_.emplace_back(name + ".b" + std::to_string(l), size_t(out));
    const bool head = l == layers - 1;
    const double scale = head ? std::sqrt(1.0 / in) : std::sqrt(2.0 / in);
    for (auto& v : weights_.back().values) v = rng.normal(0.0, scale);
    if (head)
      for (auto& v : biases_.back().values) v = head_bias;
  }
}

std::vector<ad::ParamBlock*> Mlp::parameters() {
  std::vector<ad::ParamBlock*> out;
  for (size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

void Mlp::forward(std::span<const double> in, std::span<double> out) const {
  PF_CHECK_MSG(int(in.size()) == dims_.front() && int(out.size()) == dims_.back(),
               "mlp forward: shape mismatch");
  auto& a = tl_buf_a;
  auto& b = tl_buf_b;
  a.assign(in.begin(), in.end());
  const int layers = int(weights_.size());
  for (int l = 0; l < layers; ++l) {
    const int m = dims_[size_t(l) + 1], n = dims_[size_t(l)];
    b.assign(size_t(m), 0.0);
    const double* w = weights_[size_t(l)].values.data();
    const double* bias = biases_[size_t(l)].values.data();
    for (int i = 0; i < m; ++i) {
      double acc = bias[i];
      const double* row = w + size_t(i) * n;
      for (int j = 0; j < n; ++j) acc += row[j] * a[size_t(j)];
      b[size_t(i)] = (l + 1 < layers && acc < 0) ? 0.0 : acc;  // relu on hidden layers
    }
    std::swap(a, b);
  }
  std::copy(a.begin(), a.end(), out.begin());
}

ad::NodeRef Mlp::node(ad::Tape& tape, ad::NodeRef in) {
  ad::NodeRef h = in;
  const int layers = int(weights_.size());
  for (int l = 0; l < layers; ++l) {
    h = tape.affine(weights_[size_t(l)], &biases_[size_t(l)], h);
    if (l + 1 < layers) h = tape.relu(h);
  }
  return h;
}

ad::NodeRef Mlp::batch_node(ad::Tape& tape, ad::NodeRef in, int rows) {
  ad::NodeRef h = in;
  const int layers = int(weights_.size());
  for (int l = 0; l < layers; ++l) {
    h = tape.affine_batch(weights_[size_t(l)], &biases_[size_t(l)], h, rows);
    if (l + 1 < layers) h = tape.relu(h);
  }
  return h;
}

void Mlp::input_gradient(std::span<const double> in, std::span<double> din) const {
  PF_CHECK_MSG(dims_.back() == 1, "input_gradient needs a scalar-output mlp");
  const int layers = int(weights_.size());
  // forward, keeping activations per layer
  std::vector<std::vector<double>> acts(static_cast<size_t>(layers));
  auto& a = tl_buf_a;
  a.assign(in.begin(), in.end());
  for (int l = 0; l < layers; ++l) {
    const int m = dims_[size_t(l) + 1], n = dims_[size_t(l)];
    acts[size_t(l)].assign(size_t(m), 0.0);
    const double* w = weights_[size_t(l)].values.data();
    const double* bias = biases_[size_t(l)].values.data();
    for (int i = 0; i < m; ++i) {
      double acc = bias[i];
      const double* row = w + size_t(i) * n;
      for (int j = 0; j < n; ++j) acc += row[j] * a[size_t(j)];
      acts[size_t(l)][size_t(i)] = acc;
    }
    a.assign(acts[size_t(l)].begin(), acts[size_t(l)].end());
    if (l + 1 < layers)
      for (auto& v : a)
        if (v < 0) v = 0;
  }
  // reverse: u = W^T (mask * u)
  auto& u = tl_buf_b;
  u.assign(1, 1.0);
  for (int l = layers - 1; l >= 0; --l) {
    const int m = dims_[size_t(l) + 1], n = dims_[size_t(l)];
    if (l + 1 < layers)
      for (int i = 0; i < m; ++i)
        if (acts[size_t(l)][size_t(i)] <= 0) u[size_t(i)] = 0.0;
    std::vector<double> next(static_cast<size_t>(n), 0.0);
    const double* w = weights_[size_t(l)].values.data();
    for (int i = 0; i < m; ++i) {
      const double ui = u[size_t(i)];
      if (ui == 0.0) continue;
      const double* row = w + size_t(i) * n;
      for (int j = 0; j < n; ++j) next[size_t(j)] += row[j] * ui;
    }
    u = std::move(next);
  }
  PF_CHECK_MSG(int(din.size()) == dims_.front(), "input_gradient: output span mismatch");
  std::copy(u.begin(), u.end(), din.begin());
}

Mlp::ValueGrad Mlp::value_and_input_grad_node(ad::Tape& tape, ad::NodeRef in) {
  PF_CHECK_MSG(dims_.back() == 1, "value_and_input_grad_node needs a scalar-output mlp");
  const int layers = int(weights_.size());
  std::vector<ad::NodeRef> masks;
  ad::NodeRef h = in;
  for (int l = 0; l < layers; ++l) {
    h = tape.affine(weights_[size_t(l)], &biases_[size_t(l)], h);
    if (l + 1 < layers) {
      masks.push_back(tape.step_mask(h));
      h = tape.relu(h);
    }
  }
  ad::NodeRef value = h;
  ad::NodeRef u = tape.constant(1.0);
  for (int l = layers - 1; l >= 0; --l) {
    if (l + 1 < layers) u = tape.mul(masks[size_t(l)], u);
    u = tape.affine_t(weights_[size_t(l)], u);
  }
  return {value, u};
}

double sdf_to_alpha(double sdf_prev, double sdf_next, double sharpness, double eps) {
  PF_CHECK_MSG(sharpness > 0 && eps > 0, "sdf_to_alpha: sharpness and eps must be positive");
  const double sp = sigmoid_fn(sharpness * sdf_prev);
  const double sn = sigmoid_fn(sharpness * sdf_next);
  const double raw = (sp - sn) / (sp + eps);
  return std::clamp(raw, 0.0, 1.0);
}

ad::NodeRef sdf_to_alpha_node(ad::Tape& tape, ad::NodeRef prev, ad::NodeRef next,
                              ad::NodeRef sharpness, double eps) {
  ad::NodeRef sp = tape.sigmoid(tape.mul(prev, sharpness));
  ad::NodeRef sn = tape.sigmoid(tape.mul(next, sharpness));
  ad::NodeRef raw = tape.div(tape.sub(sp, sn), tape.add_const(sp, eps));
  return tape.clamp(raw, 0.0, 1.0);
}

namespace {

// Near-uniform unit directions (Fibonacci sphere), used to shape the
// initial SDF into a sphere: sum_k relu(u_k . y) ~= count * |y| / 4.
Vec3 fibonacci_dir(int i, int count) {
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  const double z = 1.0 - (2.0 * i + 1.0) / count;
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const double phi = 2.0 * M_PI * i / golden;
  return {r * std::cos(phi), r * std::sin(phi), z};
}

}  // namespace

FieldModel::FieldModel(const FieldConfig& cfg, uint64_t seed)
    : cfg_(cfg),
      init_rng_(seed),
      geo_encoder_("geo_grid", cfg.geo_grid, init_rng_.split(1)),
      app_encoder_("app_grid", cfg.app_grid, init_rng_.split(2)),
      beta_("beta", 1, cfg.beta_init) {
  Rng mlp_rng = init_rng_.split(3);
  const int geo_in = 3 + cfg.geo_grid.levels * cfg.geo_grid.features;
  geo_mlp_ = Mlp("geo_mlp", {geo_in, cfg.geo_hidden, cfg.geo_hidden, 1}, mlp_rng);

  const int app_in = cfg.app_grid.levels * cfg.app_grid.features;
  Rng app_rng = init_rng_.split(4);
  diffuse_mlp_ =
      Mlp("diffuse_mlp", {app_in, cfg.app_hidden, cfg.app_hidden, 3 + cfg.specular_features},
          app_rng);
  Rng spec_rng = init_rng_.split(5);
  specular_mlp_ = Mlp("specular_mlp",
                      {cfg.specular_features + 3, cfg.spec_hidden, cfg.spec_hidden, 3}, spec_rng,
                      /*head_bias=*/-3.0);

  // Geometric initialization: first layer projects the centered position
  // onto spread directions, second layer passes through, head averages so
  // f(x) ~= |x - 0.5| - radius. Grid-feature columns keep small noise so
  // the tables receive gradient from step one.
  Rng geo_rng = init_rng_.split(6);
  const int h = cfg.geo_hidden;
  auto& w0 = geo_mlp_.weight(0);
  for (int i = 0; i < h; ++i) {
    const Vec3 dir = fibonacci_dir(i, h);
    for (int d = 0; d < 3; ++d) w0.values[size_t(i) * geo_in + d] = dir[d];
    for (int j = 3; j < geo_in; ++j) w0.values[size_t(i) * geo_in + j] = geo_rng.normal(0.0, 0.1);
  }
  std::fill(geo_mlp_.bias(0).values.begin(), geo_mlp_.bias(0).values.end(), 0.0);
  auto& w1 = geo_mlp_.weight(1);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < h; ++j)
      w1.values[size_t(i) * h + j] = (i == j ? 1.0 : 0.0) + geo_rng.normal(0.0, 0.005);
  std::fill(geo_mlp_.bias(1).values.begin(), geo_mlp_.bias(1).values.end(), 0.0);
  auto& w2 = geo_mlp_.weight(2);
  for (int j = 0; j < h; ++j) w2.values[size_t(j)] = 4.0 / h;
  geo_mlp_.bias(2).values[0] = -cfg.sphere_init_radius;
}

std::vector<ad::ParamBlock*> FieldModel::parameters() {
  std::vector<ad::ParamBlock*> out;
  for (auto* p : geo_encoder_.parameters()) out.push_back(p);
  for (auto* p : geo_mlp_.parameters()) out.push_back(p);
  for (auto* p : app_encoder_.parameters()) out.push_back(p);
  for (auto* p : diffuse_mlp_.parameters()) out.push_back(p);
  for (auto* p : specular_mlp_.parameters()) out.push_back(p);
  out.push_back(&beta_);
  return out;
}

double FieldModel::sdf(const Vec3& x, double alpha) const {
  const int fd = geo_encoder_.feature_dim();
  std::vector<double> in(static_cast<size_t>(3 + fd));
  in[0] = x.x() - 0.5;
  in[1] = x.y() - 0.5;
  in[2] = x.z() - 0.5;
  geo_encoder_.encode(x, alpha, std::span<double>(in).subspan(3));
  double out = 0;
  geo_mlp_.forward(in, std::span<double>(&out, 1));
  PF_CHECK_FINITE(std::isfinite(out));
  return out;
}

Vec3 FieldModel::sdf_gradient(const Vec3& x, double alpha) const {
  const int fd = geo_encoder_.feature_dim();
  std::vector<double> in(static_cast<size_t>(3 + fd));
  in[0] = x.x() - 0.5;
  in[1] = x.y() - 0.5;
  in[2] = x.z() - 0.5;
  geo_encoder_.encode(x, alpha, std::span<double>(in).subspan(3));
  std::vector<double> din(in.size());
  geo_mlp_.input_gradient(in, din);
  std::vector<double> jac(static_cast<size_t>(fd) * 3);
  geo_encoder_.encode_jacobian(x, alpha, jac);
  Vec3 g(din[0], din[1], din[2]);
  for (int k = 0; k < fd; ++k)
    for (int d = 0; d < 3; ++d) g[d] += din[size_t(3 + k)] * jac[size_t(k) * 3 + d];
  return g;
}

AppearanceSample FieldModel::appearance(const Vec3& x, const Vec3& view_dir, double alpha) const {
  PF_CHECK_MSG(std::abs(view_dir.norm() - 1.0) < 1e-6, "appearance: view_dir must be unit length");
  const int fd = app_encoder_.feature_dim();
  const int k = cfg_.specular_features;
  std::vector<double> feat(static_cast<size_t>(fd));
  app_encoder_.encode(x, alpha, feat);
  std::vector<double> draw(static_cast<size_t>(3 + k));
  diffuse_mlp_.forward(feat, draw);
  AppearanceSample s;
  for (int i = 0; i < 3; ++i) s.diffuse[i] = sigmoid_fn(draw[size_t(i)]);
  s.specular_feature.assign(draw.begin() + 3, draw.end());
  std::vector<double> spec_in(static_cast<size_t>(k + 3));
  std::copy(s.specular_feature.begin(), s.specular_feature.end(), spec_in.begin());
  for (int i = 0; i < 3; ++i) spec_in[size_t(k + i)] = view_dir[i];
  std::vector<double> sraw(3);
  specular_mlp_.forward(spec_in, sraw);
  for (int i = 0; i < 3; ++i) s.specular[i] = sigmoid_fn(sraw[size_t(i)]);
  s.color = s.diffuse + s.specular;
  return s;
}

ad::NodeRef FieldModel::sdf_node(ad::Tape& tape, ad::NodeRef x, double alpha) {
  ad::NodeRef centered = tape.add_const(x, -0.5);
  ad::NodeRef feat = geo_encoder_.encode_node(tape, x, alpha);
  const ad::NodeRef parts[] = {centered, feat};
  return geo_mlp_.node(tape, tape.concat(parts));
}

ad::NodeRef FieldModel::sdf_gradient_node(ad::Tape& tape, const Vec3& x, double alpha) {
  const int fd = geo_encoder_.feature_dim();
  const double centered[3] = {x.x() - 0.5, x.y() - 0.5, x.z() - 0.5};
  ad::NodeRef cen = tape.constant(std::span<const double>(centered, 3));
  ad::NodeRef feat = geo_encoder_.encode_node(tape, tape.constant3(x.x(), x.y(), x.z()), alpha);
  const ad::NodeRef parts[] = {cen, feat};
  auto vg = geo_mlp_.value_and_input_grad_node(tape, tape.concat(parts));
  ad::NodeRef jac = geo_encoder_.encode_jacobian_node(tape, x, alpha);
  ad::NodeRef gfeat = tape.mat_t_vec(jac, fd, 3, tape.slice(vg.input_grad, 3, fd));
  return tape.add(tape.slice(vg.input_grad, 0, 3), gfeat);
}

AppearanceNodes FieldModel::appearance_node(ad::Tape& tape, ad::NodeRef x, ad::NodeRef view_dir,
                                            double alpha) {
  const int k = cfg_.specular_features;
  ad::NodeRef feat = app_encoder_.encode_node(tape, x, alpha);
  ad::NodeRef draw = diffuse_mlp_.node(tape, feat);
  ad::NodeRef cd = tape.sigmoid(tape.slice(draw, 0, 3));
  ad::NodeRef fs = tape.slice(draw, 3, k);
  const ad::NodeRef parts[] = {fs, view_dir};
  ad::NodeRef cs = tape.sigmoid(specular_mlp_.node(tape, tape.concat(parts)));
  return {cd, cs, tape.add(cd, cs)};
}

AppearanceNodes FieldModel::appearance_node(ad::Tape& tape, ad::NodeRef x, const Vec3& view_dir,
                                            double alpha) {
  return appearance_node(tape, x, tape.constant3(view_dir.x(), view_dir.y(), view_dir.z()), alpha);
}

ad::NodeRef FieldModel::sharpness_node(ad::Tape& tape) { return tape.exp(tape.param(beta_)); }

}  // namespace posefield
