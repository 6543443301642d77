#include "posefield/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "posefield/check.hpp"
#include "posefield/checkpoint.hpp"

namespace posefield {

namespace {
constexpr uint64_t kNoiseStream = 101;
constexpr uint64_t kBatchStream = 102;
constexpr uint64_t kEikStream = 103;
constexpr uint64_t kJitterStream = 104;

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

using nlohmann::json;

namespace {
json grid_to_json(const GridConfig& g) {
  return json{{"levels", g.levels},         {"n_min", g.n_min},
              {"n_max", g.n_max},           {"table_size", g.table_size},
              {"features", g.features},     {"init_scale", g.init_scale}};
}
GridConfig grid_from_json(const json& j) {
  GridConfig g;
  g.levels = j.at("levels").get<int>();
  g.n_min = j.at("n_min").get<int>();
  g.n_max = j.at("n_max").get<int>();
  g.table_size = j.at("table_size").get<uint32_t>();
  g.features = j.at("features").get<int>();
  g.init_scale = j.at("init_scale").get<double>();
  return g;
}
}  // namespace

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["iterations"] = c.iterations;
  j["lr_nerf"] = {c.lr_nerf_start, c.lr_nerf_end};
  j["lr_pose"] = {c.lr_pose_start, c.lr_pose_end};
  j["lambda_photo"] = c.loss_weights.photometric;
  j["lambda_eik"] = c.loss_weights.eikonal;
  j["lambda_spec"] = c.loss_weights.specular;
  j["lambda_entropy"] = c.loss_weights.entropy;
  j["c2f_interval"] = {c.c2f_start, c.c2f_end};
  j["c2f_enabled"] = c.c2f_enabled;
  j["rays_per_batch"] = c.rays_per_batch;
  j["eikonal_samples"] = c.eikonal_samples;
  j["seed"] = c.seed;
  j["noise_sigma"] = c.noise_sigma;
  j["n_samples"] = c.n_samples;
  j["grid_resolution"] = c.grid_resolution;
  j["tau_occ"] = c.tau_occ;
  j["background"] = {c.background.x(), c.background.y(), c.background.z()};
  j["occupancy_interval"] = c.occupancy_interval;
  j["occupancy_warmup"] = c.occupancy_warmup;
  j["threads"] = c.threads;
  j["chunk_rays"] = c.chunk_rays;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["weight_decay"] = c.weight_decay;
  j["field"] = {{"geo_grid", grid_to_json(c.field.geo_grid)},
                {"app_grid", grid_to_json(c.field.app_grid)},
                {"geo_hidden", c.field.geo_hidden},
                {"app_hidden", c.field.app_hidden},
                {"spec_hidden", c.field.spec_hidden},
                {"specular_features", c.field.specular_features},
                {"sphere_init_radius", c.field.sphere_init_radius},
                {"beta_init", c.field.beta_init},
                {"alpha_eps", c.field.alpha_eps}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw StructuralError(std::string("config parse error: ") + e.what());
  }
  static const std::set<std::string> known = {
      "iterations", "lr_nerf", "lr_pose", "lambda_photo", "lambda_eik", "lambda_spec",
      "lambda_entropy", "c2f_interval", "c2f_enabled", "rays_per_batch", "eikonal_samples",
      "seed", "noise_sigma", "n_samples", "grid_resolution", "tau_occ", "background",
      "occupancy_interval", "occupancy_warmup", "threads", "chunk_rays", "checkpoint_every", "log_every",
      "weight_decay", "field"};
  for (auto it = j.begin(); it != j.end(); ++it)
    PF_CHECK_MSG(known.count(it.key()) > 0, "unknown config key: " << it.key());

  TrainConfig c;
  auto get = [&](const char* key, auto& target) {
    if (j.contains(key)) target = j.at(key).get<std::decay_t<decltype(target)>>();
  };
  get("iterations", c.iterations);
  if (j.contains("lr_nerf")) {
    c.lr_nerf_start = j["lr_nerf"].at(0).get<double>();
    c.lr_nerf_end = j["lr_nerf"].at(1).get<double>();
  }
  if (j.contains("lr_pose")) {
    c.lr_pose_start = j["lr_pose"].at(0).get<double>();
    c.lr_pose_end = j["lr_pose"].at(1).get<double>();
  }
  get("lambda_photo", c.loss_weights.photometric);
  get("lambda_eik", c.loss_weights.eikonal);
  get("lambda_spec", c.loss_weights.specular);
  get("lambda_entropy", c.loss_weights.entropy);
  if (j.contains("c2f_interval")) {
    c.c2f_start = j["c2f_interval"].at(0).get<double>();
    c.c2f_end = j["c2f_interval"].at(1).get<double>();
  }
  get("c2f_enabled", c.c2f_enabled);
  get("rays_per_batch", c.rays_per_batch);
  get("eikonal_samples", c.eikonal_samples);
  get("seed", c.seed);
  get("noise_sigma", c.noise_sigma);
  get("n_samples", c.n_samples);
  get("grid_resolution", c.grid_resolution);
  get("tau_occ", c.tau_occ);
  if (j.contains("background")) {
    for (int d = 0; d < 3; ++d) c.background[d] = j["background"].at(size_t(d)).get<double>();
  }
  get("occupancy_interval", c.occupancy_interval);
  get("occupancy_warmup", c.occupancy_warmup);
  get("threads", c.threads);
  get("chunk_rays", c.chunk_rays);
  get("checkpoint_every", c.checkpoint_every);
  get("log_every", c.log_every);
  get("weight_decay", c.weight_decay);
  if (j.contains("field")) {
    const json& f = j["field"];
    if (f.contains("geo_grid")) c.field.geo_grid = grid_from_json(f["geo_grid"]);
    if (f.contains("app_grid")) c.field.app_grid = grid_from_json(f["app_grid"]);
    if (f.contains("geo_hidden")) c.field.geo_hidden = f["geo_hidden"].get<int>();
    if (f.contains("app_hidden")) c.field.app_hidden = f["app_hidden"].get<int>();
    if (f.contains("spec_hidden")) c.field.spec_hidden = f["spec_hidden"].get<int>();
    if (f.contains("specular_features"))
      c.field.specular_features = f["specular_features"].get<int>();
    if (f.contains("sphere_init_radius"))
      c.field.sphere_init_radius = f["sphere_init_radius"].get<double>();
    if (f.contains("beta_init")) c.field.beta_init = f["beta_init"].get<double>();
    if (f.contains("alpha_eps")) c.field.alpha_eps = f["alpha_eps"].get<double>();
  }
  return c;
}

std::string train_log_header() {
  return "step,total,photo,eik,spec,entropy,lr_nerf,lr_pose,mean_rot_err_deg,mean_trans_err";
}

std::string train_log_row_csv(const TrainLogRow& r) {
  std::string out = std::to_string(r.step);
  for (double v : {r.total, r.photo, r.eik, r.spec, r.entropy, r.lr_nerf, r.lr_pose,
                   r.mean_rot_err_deg, r.mean_trans_err})
    out += "," + fmt_g17(v);
  return out;
}

void perturb_poses(std::vector<Camera>& cameras, double sigma, Rng& rng) {
  PF_CHECK_MSG(sigma >= 0, "perturb_poses: sigma must be >= 0");
  for (Camera& cam : cameras) {
    if (sigma > 0) {
      Vec6 xi;
      for (int k = 0; k < 6; ++k) xi[k] = rng.normal(0.0, sigma);
      const Mat4 noisy = se3_exp(xi) * cam.pose.matrix();
      cam.pose.rotation = noisy.topLeftCorner<3, 3>();
      cam.pose.translation = noisy.topRightCorner<3, 1>();
    }
    std::fill(cam.pose.correction.xi.values.begin(), cam.pose.correction.xi.values.end(), 0.0);
    cam.pose.correction.xi.zero_grad();
  }
}

TrainState::TrainState(const Scene& scene, const TrainConfig& cfg)
    : config(cfg),
      model(cfg.field, cfg.seed),
      cameras(scene.cameras),
      grid(cfg.grid_resolution, cfg.tau_occ),
      batch_rng(Rng(cfg.seed).split(kBatchStream)),
      eik_rng(Rng(cfg.seed).split(kEikStream)),
      scene_dir(scene.dir) {
  PF_CHECK_MSG(cfg.field.geo_grid.levels == cfg.field.app_grid.levels,
               "geo and app grids must share the level count (shared window schedule)");
  Rng noise = Rng(cfg.seed).split(kNoiseStream);
  perturb_poses(cameras, cfg.noise_sigma, noise);
  for (size_t i = 0; i < cameras.size(); ++i)
    cameras[i].pose.correction.xi.set_name("pose_correction_" + std::to_string(i));

  opt_field = AdamW(model.parameters(), {.weight_decay = cfg.weight_decay});
  std::vector<ad::ParamBlock*> pose_params;
  for (size_t i = 0; i < cameras.size(); ++i)
    if (scene.is_train[i]) pose_params.push_back(&cameras[i].pose.correction.xi);
  // corrections carry no weight decay: shrinking a pose toward its noisy
  // base is not a meaningful prior
  opt_pose = AdamW(pose_params, {});
}

std::unique_ptr<TrainState> make_train_state(const Scene& scene, const TrainConfig& cfg) {
  PF_CHECK_MSG(scene.train_indices().size() >= 2, "training needs at least 2 train views");
  return std::make_unique<TrainState>(scene, cfg);
}

double TrainState::window_alpha() const {
  const int levels = config.field.geo_grid.levels;
  if (!config.c2f_enabled) return levels;
  return progress_to_alpha(step, config.iterations, config.c2f_start, config.c2f_end, levels);
}

std::vector<Mat4> TrainState::refined_train_poses(const Scene& scene) const {
  std::vector<Mat4> out;
  for (int i : scene.train_indices()) out.push_back(refined_pose(cameras[size_t(i)].pose));
  return out;
}

TrainLogRow TrainState::pose_errors(const Scene& scene, TrainLogRow row) const {
  const auto train = scene.train_indices();
  if (train.size() < 3) return row;
  std::vector<Mat4> gt;
  for (int i : train) gt.push_back(scene.gt_poses[size_t(i)]);
  const AlignmentReport rep = align_trajectories(refined_train_poses(scene), gt);
  row.mean_rot_err_deg = rep.mean_rotation_deg;
  row.mean_trans_err = rep.mean_translation;
  return row;
}

FrozenBatch draw_batch(TrainState& state, const Scene& scene) {
  FrozenBatch batch;
  batch.alpha = state.window_alpha();
  const auto train = scene.train_indices();
  PF_CHECK_MSG(!train.empty(), "draw_batch: no train views");

  batch.rays.reserve(size_t(state.config.rays_per_batch));
  for (int r = 0; r < state.config.rays_per_batch; ++r) {
    FrozenBatch::FrozenRay ray;
    const int view = train[size_t(state.batch_rng.below(train.size()))];
    const Camera& cam = state.cameras[size_t(view)];
    const Image& img = scene.images[size_t(view)];
    const int pix = int(state.batch_rng.below(uint64_t(cam.width) * uint64_t(cam.height)));
    const int px = pix % cam.width, py = pix / cam.width;
    ray.camera = view;
    ray.dir_cam = pixel_dir_cam(cam, px, py);
    ray.target = Vec3(img.at(px, py, 0), img.at(px, py, 1), img.at(px, py, 2));

    const Ray world_ray = pixel_ray(cam, px, py);
    Rng jitter = item_rng(state.config.seed ^ kJitterStream, uint64_t(state.step), uint64_t(r));
    const OccupancyGrid* grid =
        state.step >= state.config.occupancy_warmup ? &state.grid : nullptr;
    const RaySamples samples = sample_ray(world_ray, scene.near, scene.far,
                                          state.config.n_samples, grid, true, jitter);
    ray.t = samples.t;
    ray.t_close = samples.t_close;
    batch.rays.push_back(std::move(ray));
  }

  // eikonal points: half uniform, half jittered around current ray samples
  const int m = state.config.eikonal_samples;
  std::vector<std::pair<int, int>> with_samples;
  for (size_t i = 0; i < batch.rays.size(); ++i)
    if (!batch.rays[i].t.empty()) with_samples.emplace_back(int(i), int(batch.rays[i].t.size()));
  for (int k = 0; k < m; ++k) {
    Vec3 p;
    if (k % 2 == 0 || with_samples.empty()) {
      p = Vec3(state.eik_rng.uniform(), state.eik_rng.uniform(), state.eik_rng.uniform());
    } else {
      const auto [ri, nt] = with_samples[size_t(state.eik_rng.below(with_samples.size()))];
      const auto& fr = batch.rays[size_t(ri)];
      const Camera& cam = state.cameras[size_t(fr.camera)];
      const Mat4 t = refined_pose(cam.pose);
      const Vec3 x = t.topRightCorner<3, 1>() +
                     fr.t[size_t(state.eik_rng.below(uint64_t(nt)))] *
                         (t.topLeftCorner<3, 3>() * fr.dir_cam);
      p = x + Vec3(state.eik_rng.normal(0, 0.02), state.eik_rng.normal(0, 0.02),
                   state.eik_rng.normal(0, 0.02));
      for (int d = 0; d < 3; ++d) p[d] = std::clamp(p[d], 0.0, 1.0);
    }
    batch.eikonal_points.push_back(p);
  }
  return batch;
}

namespace {

struct ChunkCtx {
  ad::Tape* tape = nullptr;
  double photo_sum = 0;
  double entropy_sum = 0;
  double spec_sum = 0;
  int samples = 0;
  std::vector<BatchResult::Observation> obs;
  ad::NodeRef root;
  bool has_root = false;
};

// out[r] = origin + t_r * dir for the payload depths (rows x 3).
void ray_positions_backward(ad::Tape& tape, const ad::CustomOp& op, int node_idx) {
  const auto g = tape.node_adjoint(node_idx);
  const auto io = tape.node_inputs(node_idx);
  auto go = tape.node_adjoint(io.a);
  auto gd = tape.node_adjoint(io.b);
  const int rows = op.i0;
  for (int r = 0; r < rows; ++r)
    for (int d = 0; d < 3; ++d) {
      go[size_t(d)] += g[size_t(r) * 3 + size_t(d)];
      gd[size_t(d)] += op.data[size_t(r)] * g[size_t(r) * 3 + size_t(d)];
    }
}

ad::NodeRef ray_positions_node(ad::Tape& tape, const RayNodes& ray, std::vector<double> depths) {
  const int rows = int(depths.size());
  const auto o = tape.values(ray.origin);
  const auto d = tape.values(ray.direction);
  std::vector<double> value(static_cast<size_t>(rows) * 3);
  for (int r = 0; r < rows; ++r)
    for (int k = 0; k < 3; ++k)
      value[size_t(r) * 3 + size_t(k)] = o[size_t(k)] + depths[size_t(r)] * d[size_t(k)];
  ad::CustomOp op;
  op.i0 = rows;
  op.data = std::move(depths);
  op.backward = &ray_positions_backward;
  return tape.custom(value, ray.origin, ray.direction, std::move(op));
}

// Front-to-back compositing of a whole ray in one node. Inputs: alphas
// (n), colors (n x 3). Output: [color(3), acc(1), weights(n)].
void composite_backward(ad::Tape& tape, const ad::CustomOp& op, int node_idx) {
  const int n = op.i0;
  const auto g = tape.node_adjoint(node_idx);
  const auto out = tape.node_values(node_idx);
  const auto io = tape.node_inputs(node_idx);
  const auto alphas = tape.node_values(io.a);
  const auto colors = tape.node_values(io.b);
  auto ga = tape.node_adjoint(io.a);
  auto gc = tape.node_adjoint(io.b);

  // s_m: total sensitivity to weight w_m through the packed outputs
  std::vector<double> sens(static_cast<size_t>(n));
  for (int m = 0; m < n; ++m) {
    double sm = g[size_t(4 + m)] + g[3];
    for (int c = 0; c < 3; ++c) sm += g[size_t(c)] * colors[size_t(m) * 3 + size_t(c)];
    sens[size_t(m)] = sm;
    const double w = out[size_t(4 + m)];
    for (int c = 0; c < 3; ++c) gc[size_t(m) * 3 + size_t(c)] += g[size_t(c)] * w;
  }
  // dw_m/da_k = T_k for m == k, -w_m / (1 - a_k) for m > k
  double suffix = 0.0;  // sum_{m > k} w_m s_m, built backward
  std::vector<double> trans(static_cast<size_t>(n));
  double t = 1.0;
  for (int k = 0; k < n; ++k) {
    trans[size_t(k)] = t;
    t *= (1.0 - alphas[size_t(k)]);
  }
  for (int k = n - 1; k >= 0; --k) {
    const double one_minus = std::max(1.0 - alphas[size_t(k)], 1e-300);
    ga[size_t(k)] += trans[size_t(k)] * sens[size_t(k)] - suffix / one_minus;
    suffix += out[size_t(4 + k)] * sens[size_t(k)];
  }
}

ad::NodeRef composite_node(ad::Tape& tape, ad::NodeRef alphas, ad::NodeRef colors, int n) {
  const auto a = tape.values(alphas);
  const auto c = tape.values(colors);
  std::vector<double> value(static_cast<size_t>(n) + 4, 0.0);
  double trans = 1.0;
  for (int k = 0; k < n; ++k) {
    const double w = trans * a[size_t(k)];
    value[size_t(4 + k)] = w;
    for (int d = 0; d < 3; ++d) value[size_t(d)] += w * c[size_t(k) * 3 + size_t(d)];
    value[3] += w;
    trans *= (1.0 - a[size_t(k)]);
  }
  ad::CustomOp op;
  op.i0 = n;
  op.backward = &composite_backward;
  return tape.custom(value, alphas, colors, std::move(op));
}

ChunkCtx build_chunk(ad::Tape& tape, TrainState& state, const FrozenBatch& batch, size_t begin,
                     size_t end, int n_rays, int total_samples) {
  ChunkCtx ctx;
  ctx.tape = &tape;
  tape.reset();
  FieldModel& model = state.model;
  const double eps = model.config().alpha_eps;
  const Vec3 bg = state.config.background;
  const double alpha = batch.alpha;
  const int fd_geo = model.geo_encoder().feature_dim();
  const int fd_app = model.app_encoder().feature_dim();
  const int spec_k = model.config().specular_features;

  ad::NodeRef sharp = model.sharpness_node(tape);
  ad::NodeRef bg_node = tape.constant3(bg.x(), bg.y(), bg.z());
  std::unordered_map<int, ad::NodeRef> transforms;
  std::vector<ad::NodeRef> ray_sq;
  std::vector<ad::NodeRef> weight_nodes;
  std::vector<ad::NodeRef> spec_sq;

  for (size_t ri = begin; ri < end; ++ri) {
    const auto& fr = batch.rays[ri];
    const int n = int(fr.t.size());
    if (n == 0) {
      const Vec3 err = bg - fr.target;
      ray_sq.push_back(tape.constant(err.squaredNorm()));
      continue;
    }
    auto it = transforms.find(fr.camera);
    if (it == transforms.end()) {
      ad::NodeRef tnode = refined_transform_node(tape, state.cameras[size_t(fr.camera)].pose);
      it = transforms.emplace(fr.camera, tnode).first;
    }
    const RayNodes ray = transform_ray_node(tape, it->second, fr.dir_cam);

    std::vector<double> depths = fr.t;
    depths.push_back(fr.t_close);
    ad::NodeRef pos = ray_positions_node(tape, ray, std::move(depths));  // (n+1) x 3

    // geometry: sdf at every segment endpoint
    ad::NodeRef centered = tape.add_const(pos, -0.5);
    ad::NodeRef geo_feat = model.geo_encoder().encode_batch_node(tape, pos, n + 1, alpha);
    ad::NodeRef geo_in = tape.row_concat(centered, geo_feat, n + 1, 3, fd_geo);
    ad::NodeRef sdf = model.geo_mlp().batch_node(tape, geo_in, n + 1);  // (n+1) x 1
    ad::NodeRef alphas =
        sdf_to_alpha_node(tape, tape.slice(sdf, 0, n), tape.slice(sdf, 1, n), sharp, eps);

    // appearance at the segment starts
    ad::NodeRef app_pos = tape.slice(pos, 0, 3 * n);
    ad::NodeRef app_feat = model.app_encoder().encode_batch_node(tape, app_pos, n, alpha);
    ad::NodeRef draw = model.diffuse_mlp().batch_node(tape, app_feat, n);  // n x (3+K)
    ad::NodeRef cd = tape.sigmoid(tape.cols_slice(draw, n, 3 + spec_k, 0, 3));
    ad::NodeRef fs = tape.cols_slice(draw, n, 3 + spec_k, 3, spec_k);
    ad::NodeRef spec_in = tape.row_concat(fs, ray.direction, n, spec_k, 3);
    ad::NodeRef cs = tape.sigmoid(model.specular_mlp().batch_node(tape, spec_in, n));
    ad::NodeRef color = tape.add(cd, cs);  // n x 3

    ad::NodeRef comp = composite_node(tape, alphas, color, n);
    ad::NodeRef acc = tape.slice(comp, 3, 1);
    ad::NodeRef final_color =
        tape.add(tape.slice(comp, 0, 3), tape.mul(bg_node, tape.const_minus(1.0, acc)));
    ad::NodeRef err =
        tape.sub(final_color, tape.constant3(fr.target.x(), fr.target.y(), fr.target.z()));
    ray_sq.push_back(tape.dot(err, err));
    weight_nodes.push_back(tape.slice(comp, 4, n));
    spec_sq.push_back(tape.row_sum_sq(cs, n, 3));

    const auto pv = tape.values(pos);
    const auto av = tape.values(alphas);
    for (int k = 0; k < n; ++k) {
      const double delta = (k + 1 < n ? fr.t[size_t(k) + 1] : fr.t_close) - fr.t[size_t(k)];
      ctx.obs.push_back({Vec3(pv[size_t(k) * 3], pv[size_t(k) * 3 + 1], pv[size_t(k) * 3 + 2]),
                         av[size_t(k)], delta});
    }
    ctx.samples += n;
  }

  ad::NodeRef photo_sum = tape.sum(tape.concat(ray_sq));
  ctx.photo_sum = tape.value(photo_sum);

  const LossWeights& lw = state.config.loss_weights;
  ad::NodeRef root = tape.scale(photo_sum, lw.photometric / n_rays);
  if (!weight_nodes.empty() && total_samples > 0) {
    ad::NodeRef w = tape.clamp(tape.concat(weight_nodes), 1e-7, 1.0 - 1e-7);
    ad::NodeRef ent = tape.neg(tape.add(tape.sum(tape.mul(w, tape.log(w))),
                                        tape.sum(tape.mul(tape.const_minus(1.0, w),
                                                          tape.log(tape.const_minus(1.0, w))))));
    ctx.entropy_sum = tape.value(ent);
    ad::NodeRef spec = tape.sum(tape.concat(spec_sq));
    ctx.spec_sum = tape.value(spec);
    root = tape.add(root, tape.add(tape.scale(ent, lw.entropy / total_samples),
                                   tape.scale(spec, lw.specular / total_samples)));
  }
  ctx.root = root;
  ctx.has_root = true;
  return ctx;
}

}  // namespace

BatchResult stage1_loss(TrainState& state, const FrozenBatch& batch, bool backward) {
  BatchResult result;
  const int n_rays = int(batch.rays.size());
  PF_CHECK_MSG(n_rays > 0, "stage1_loss: empty batch");
  int total_samples = 0;
  for (const auto& r : batch.rays) total_samples += int(r.t.size());
  result.valid_samples = total_samples;

  const int chunk = std::max(1, state.config.chunk_rays);
  const size_t n_chunks = (size_t(n_rays) + size_t(chunk) - 1) / size_t(chunk);
  const int threads = std::max(1, state.config.threads);
  while (state.worker_tapes.size() < size_t(threads) + 1)
    state.worker_tapes.push_back(std::make_unique<ad::Tape>());

  double photo_sum = 0, entropy_sum = 0, spec_sum = 0;
  for (size_t base = 0; base < n_chunks; base += size_t(threads)) {
    const size_t wave = std::min(size_t(threads), n_chunks - base);
    std::vector<ChunkCtx> ctxs(wave);
    auto work = [&](size_t k) {
      const size_t ci = base + k;
      const size_t lo = ci * size_t(chunk);
      const size_t hi = std::min(size_t(n_rays), lo + size_t(chunk));
      ctxs[k] = build_chunk(*state.worker_tapes[k], state, batch, lo, hi, n_rays, total_samples);
      if (backward) ctxs[k].tape->backward(ctxs[k].root, 1.0, /*flush=*/false);
    };
    if (wave == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (size_t k = 0; k < wave; ++k) pool.emplace_back(work, k);
      for (auto& th : pool) th.join();
    }
    for (size_t k = 0; k < wave; ++k) {
      if (backward) ctxs[k].tape->flush_grads();
      photo_sum += ctxs[k].photo_sum;
      entropy_sum += ctxs[k].entropy_sum;
      spec_sum += ctxs[k].spec_sum;
      result.observations.insert(result.observations.end(), ctxs[k].obs.begin(),
                                 ctxs[k].obs.end());
    }
  }

  result.parts.photometric = photo_sum / n_rays;
  result.parts.entropy = total_samples > 0 ? entropy_sum / total_samples : 0.0;
  result.parts.specular = total_samples > 0 ? spec_sum / total_samples : 0.0;

  if (!batch.eikonal_points.empty()) {
    ad::Tape& tape = *state.worker_tapes.back();
    tape.reset();
    std::vector<ad::NodeRef> terms;
    for (const Vec3& p : batch.eikonal_points) {
      ad::NodeRef g = state.model.sdf_gradient_node(tape, p, batch.alpha);
      ad::NodeRef norm = tape.sqrt(tape.dot(g, g));
      ad::NodeRef e = tape.add_const(norm, -1.0);
      terms.push_back(tape.mul(e, e));
    }
    ad::NodeRef eik = tape.mean(tape.concat(terms));
    result.parts.eikonal = tape.value(eik);
    if (backward) tape.backward(tape.scale(eik, state.config.loss_weights.eikonal));
  }

  result.total = total_loss(result.parts, state.config.loss_weights);
  return result;
}

TrainLogRow train_step(TrainState& state, const Scene& scene) {
  FrozenBatch batch = draw_batch(state, scene);
  state.opt_field.zero_grads();
  state.opt_pose.zero_grads();
  const BatchResult res = stage1_loss(state, batch, /*backward=*/true);

  const double lr_n = lr_at(state.step, state.config.iterations, state.config.lr_nerf_start,
                            state.config.lr_nerf_end);
  const double lr_p = lr_at(state.step, state.config.iterations, state.config.lr_pose_start,
                            state.config.lr_pose_end);
  state.opt_field.step(lr_n);
  state.opt_pose.step(lr_p);

  for (const auto& o : res.observations) state.grid.observe(o.x, o.alpha_value, o.delta);
  if ((state.step + 1) % state.config.occupancy_interval == 0) state.grid.update_round();

  TrainLogRow row;
  row.step = state.step;
  row.total = res.total;
  row.photo = res.parts.photometric;
  row.eik = res.parts.eikonal;
  row.spec = res.parts.specular;
  row.entropy = res.parts.entropy;
  row.lr_nerf = lr_n;
  row.lr_pose = lr_p;
  state.step += 1;
  return row;
}

std::unique_ptr<TrainState> train_stage1(const Scene& scene, const TrainConfig& cfg,
                                         const std::string& out_dir) {
  namespace fs = std::filesystem;
  auto state = make_train_state(scene, cfg);

  std::ofstream log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream meta(out_dir + "/metadata.json");
    json m;
    m["config"] = json::parse(train_config_to_json(cfg));
    m["scene"] = scene.dir;
    m["noise_sigma"] = cfg.noise_sigma;
    m["seed"] = cfg.seed;
    meta << m.dump(2) << "\n";
    log.open(out_dir + "/log.csv");
    log << train_log_header() << "\n";
  }

  while (state->step < cfg.iterations) {
    TrainLogRow row;
    try {
      row = train_step(*state, scene);
    } catch (const NumericalError& e) {
      if (!out_dir.empty()) {
        std::ofstream err(out_dir + "/ABORTED.txt");
        err << "non-finite loss at step " << state->step << ": " << e.what() << "\n";
      }
      throw;
    }
    const bool log_step = (row.step % cfg.log_every == 0) || row.step + 1 == cfg.iterations;
    if (log_step) {
      row = state->pose_errors(scene, row);
      state->history.push_back(row);
      if (log.is_open()) log << train_log_row_csv(row) << "\n";
    }
    if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
        (state->step % cfg.checkpoint_every == 0 || state->step == cfg.iterations)) {
      save_checkpoint(out_dir + "/checkpoint.bin", *state);
    }
  }
  if (!out_dir.empty()) save_checkpoint(out_dir + "/checkpoint.bin", *state);
  return state;
}

}  // namespace posefield
