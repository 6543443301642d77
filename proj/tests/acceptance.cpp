// Acceptance suite: one pass/fail line per criterion. Build and run via
// ctest (test name "acceptance") or directly; exits nonzero if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <posefield/chamfer.hpp>
#include <posefield/checkpoint.hpp>
#include <posefield/cli.hpp>
#include <posefield/evaluate.hpp>
#include <posefield/mesh.hpp>
#include <posefield/mesh_io.hpp>
#include <posefield/optim.hpp>
#include <posefield/refine.hpp>
#include <posefield/rng.hpp>
#include <posefield/trainer.hpp>

#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace posefield;

namespace {

int g_failures = 0;
std::chrono::steady_clock::time_point g_t0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
  const double dt =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - g_t0).count();
  std::printf("[%s] criterion %2d: %s (%s) [%.1fs]\n", pass ? "PASS" : "FAIL", criterion,
              name.c_str(), detail.c_str(), dt);
  std::fflush(stdout);
  if (!pass) ++g_failures;
  g_t0 = std::chrono::steady_clock::now();
}

std::string tmp_dir(const std::string& tag) {
  const std::string dir = (fs::temp_directory_path() / ("pf_accept_" + tag)).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

int hw_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 2 : int(n);
}

// ---------------------------------------------------------------- 1
void criterion_gradient_integrity() {
  const std::string dir = tmp_dir("toy");
  SyntheticSpec spec;
  spec.n_views = 4;
  spec.n_test = 0;
  spec.image_size = 16;
  spec.albedo = SyntheticSpec::Albedo::kChecker;
  make_synthetic_scene(spec, dir);
  const Scene scene = load_scene(dir);

  TrainConfig cfg;
  cfg.iterations = 100;
  cfg.rays_per_batch = 4;
  cfg.n_samples = 8;
  cfg.eikonal_samples = 8;
  cfg.grid_resolution = 8;
  cfg.noise_sigma = 0.03;
  cfg.seed = 42;
  cfg.occupancy_warmup = 1000;  // keep sampling dense: every stratum stays active
  cfg.field.geo_grid.levels = 3;
  cfg.field.geo_grid.n_min = 4;
  cfg.field.geo_grid.n_max = 16;
  cfg.field.geo_grid.table_size = 1u << 8;
  cfg.field.app_grid = cfg.field.geo_grid;
  cfg.field.geo_hidden = 16;
  cfg.field.app_hidden = 16;
  cfg.field.spec_hidden = 8;
  cfg.field.specular_features = 4;
  auto state = make_train_state(scene, cfg);
  state->step = 60;  // mid-window so several encoding levels are active
  const FrozenBatch batch = draw_batch(*state, scene);

  int total_samples = 0;
  for (const auto& r : batch.rays) total_samples += int(r.t.size());

  auto fn = [&] { return stage1_loss(*state, batch, false).total; };
  auto grad = [&] {
    state->opt_field.zero_grads();
    state->opt_pose.zero_grads();
    (void)stage1_loss(*state, batch, true);
  };

  double worst = 0;
  std::string worst_name;
  auto check_block = [&](ad::ParamBlock& block) {
    grad();
    const double err = ad::finite_difference_check(fn, block, 1e-6);
    if (err > worst) {
      worst = err;
      worst_name = block.name();
    }
  };
  // (a) hash-table features
  check_block(state->model.geo_encoder().table(1));
  check_block(state->model.app_encoder().table(1));
  // (b) mlp weights
  check_block(state->model.geo_mlp().weight(0));
  check_block(state->model.geo_mlp().weight(2));
  check_block(state->model.diffuse_mlp().weight(1));
  check_block(state->model.specular_mlp().weight(0));
  // (c) sharpness
  check_block(state->model.beta());
  // (d) pose corrections of every camera that appears in the batch
  for (int cam : {batch.rays[0].camera, batch.rays[1].camera, batch.rays[2].camera,
                  batch.rays[3].camera})
    check_block(state->cameras[size_t(cam)].pose.correction.xi);

  report(1, "gradient integrity on a 4-ray toy scene", worst < 1e-3,
         "max rel err " + fmt(worst) + " in " + worst_name + ", " +
             std::to_string(total_samples) + " samples");
}

// ---------------------------------------------------------------- 2
void criterion_compositing_oracle() {
  Rng rng(1234);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + int(rng.below(16));
    std::vector<double> alphas, t;
    std::vector<Vec3> colors;
    double depth = 0.05;
    if (trial % 2 == 0) {
      // density form: alpha_i = 1 - exp(-sigma_i delta_i)
      std::vector<double> sigmas, deltas;
      for (int i = 0; i < n; ++i) {
        sigmas.push_back(rng.uniform(0, 40));
        deltas.push_back(rng.uniform(0.001, 0.1));
      }
      alphas = oracles::alphas_from_sigmas(sigmas, deltas);
    } else {
      // sdf form
      const double sharp = std::exp(rng.uniform(1, 5));
      double sdf_prev = rng.uniform(-0.3, 0.5);
      for (int i = 0; i < n; ++i) {
        const double sdf_next = sdf_prev + rng.uniform(-0.15, 0.1);
        alphas.push_back(sdf_to_alpha(sdf_prev, sdf_next, sharp, 1e-6));
        sdf_prev = sdf_next;
      }
    }
    for (int i = 0; i < n; ++i) {
      depth += rng.uniform(0.01, 0.1);
      t.push_back(depth);
      colors.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
    }
    const CompositeResult got = composite(alphas, colors, t);
    const auto want = oracles::composite_per_term(alphas, colors);
    worst = std::max(worst, (got.color - want.color).cwiseAbs().maxCoeff());
    worst = std::max(worst, std::abs(got.acc - want.acc));
    for (size_t i = 0; i < alphas.size(); ++i)
      worst = std::max(worst, std::abs(got.weights[i] - want.weights[i]));
  }
  report(2, "compositing matches the per-term oracle", worst < 1e-12,
         "max abs diff " + fmt(worst) + " over 1000 configurations");
}

// ---------------------------------------------------------------- 3
void criterion_window_schedule() {
  bool ok = true;
  std::string detail = "branch values ";
  for (int k : {0, 3, 9}) {
    ok = ok && cosine_window(k, double(k)) == 0.0;
    ok = ok && cosine_window(k, k + 0.5) == 0.5;
    ok = ok && cosine_window(k, k + 1.0) == 1.0;
  }
  detail += ok ? "exact" : "WRONG";

  // encode at alpha = L equals the un-windowed trilinear encoding bit-exactly
  GridConfig gc;
  gc.levels = 6;
  gc.n_min = 4;
  gc.n_max = 64;
  gc.table_size = 1u << 10;
  Rng rng(5);
  HashGridEncoder enc("win", gc, rng);
  Rng prng(6);
  bool bit_exact = true;
  std::vector<double> out(static_cast<size_t>(enc.feature_dim()));
  for (int trial = 0; trial < 200 && bit_exact; ++trial) {
    const Vec3 x(prng.uniform(), prng.uniform(), prng.uniform());
    enc.encode(x, double(gc.levels), out);
    for (int l = 0; l < gc.levels && bit_exact; ++l) {
      const int n = enc.resolutions()[size_t(l)];
      int base[3];
      double frac[3];
      for (int d = 0; d < 3; ++d) {
        const double pos = std::clamp(x[d], 0.0, 1.0) * n;
        base[d] = std::min(int(pos), n - 1);
        frac[d] = pos - base[d];
      }
      for (int f = 0; f < gc.features && bit_exact; ++f) {
        double acc = 0;
        for (int corner = 0; corner < 8; ++corner) {
          const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
          uint32_t row;
          if (enc.level_is_hashed(l))
            row = oracles::hash_bigint(uint64_t(base[0] + bx), uint64_t(base[1] + by),
                                       uint64_t(base[2] + bz), gc.table_size);
          else
            row = (uint32_t(base[2] + bz) * uint32_t(n + 1) + uint32_t(base[1] + by)) *
                      uint32_t(n + 1) +
                  uint32_t(base[0] + bx);
          const double w = (bx ? frac[0] : 1 - frac[0]) * (by ? frac[1] : 1 - frac[1]) *
                           (bz ? frac[2] : 1 - frac[2]);
          acc += w * enc.table(l).values[size_t(row) * size_t(gc.features) + size_t(f)];
        }
        if (out[size_t(l * gc.features + f)] != acc) bit_exact = false;
      }
    }
  }
  detail += std::string(", alpha=L encoding ") + (bit_exact ? "bit-exact" : "DIFFERS");
  report(3, "coarse-to-fine window schedule", ok && bit_exact, detail);
}

// ---------------------------------------------------------------- 4
void criterion_hash_determinism() {
  bool ok = true;
  ok = ok && HashGridEncoder::hash_index(0, 0, 0, 1u << 14) == 0;
  ok = ok && HashGridEncoder::hash_index(1, 0, 0, 1u << 14) == 1;
  ok = ok && HashGridEncoder::hash_index(1, 2, 3, 1u << 14) == 13788;
  ok = ok && HashGridEncoder::hash_index(7, 31, 255, 1u << 14) == 259;
  ok = ok && HashGridEncoder::hash_index(123, 456, 789, 1u << 19) == 470282;
  ok = ok && HashGridEncoder::hash_index(4069, 4069, 4069, 1u << 19) == 206585;
  Rng rng(9);
  int mismatches = 0;
  for (int i = 0; i < 5000; ++i) {
    const uint32_t x = uint32_t(rng.below(1u << 20));
    const uint32_t y = uint32_t(rng.below(1u << 20));
    const uint32_t z = uint32_t(rng.below(1u << 20));
    if (HashGridEncoder::hash_index(x, y, z, 1u << 19) !=
        oracles::hash_bigint(x, y, z, 1u << 19))
      ++mismatches;
  }
  report(4, "hash golden vectors and wide-integer oracle", ok && mismatches == 0,
         "goldens " + std::string(ok ? "ok" : "WRONG") + ", oracle mismatches " +
             std::to_string(mismatches));
}

// ---------------------------------------------------------- 5 and 6
struct RecoveryResult {
  double initial_rot = 0, final_rot = 0, psnr = 0;
  double minutes = 0;
};

TrainConfig desk_config(uint64_t seed, bool c2f) {
  TrainConfig cfg;
  cfg.iterations = 2500;
  cfg.rays_per_batch = 1024;
  cfg.chunk_rays = 128;
  cfg.eikonal_samples = 256;
  cfg.n_samples = 48;
  cfg.grid_resolution = 64;
  cfg.threads = std::min(8, hw_threads());
  cfg.noise_sigma = 0.05;
  cfg.seed = seed;
  cfg.c2f_enabled = c2f;
  cfg.log_every = 500;
  cfg.checkpoint_every = 0;
  cfg.lr_pose_start = 2e-3;
  cfg.lr_pose_end = 1e-5;
  cfg.field.geo_grid.levels = 8;
  cfg.field.geo_grid.n_min = 8;
  cfg.field.geo_grid.n_max = 96;
  cfg.field.geo_grid.table_size = 1u << 14;
  cfg.field.app_grid = cfg.field.geo_grid;
  cfg.field.geo_hidden = 32;
  cfg.field.app_hidden = 32;
  cfg.field.spec_hidden = 16;
  cfg.field.specular_features = 4;
  return cfg;
}

RecoveryResult desk_recovery_run(const Scene& scene, uint64_t seed, bool c2f) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig cfg = desk_config(seed, c2f);
  auto state = make_train_state(scene, cfg);
  RecoveryResult out;
  out.initial_rot = state->pose_errors(scene, {}).mean_rot_err_deg;
  while (state->step < cfg.iterations) (void)train_step(*state, scene);
  EvalOptions eo;
  eo.threads = cfg.threads;
  const EvalReport rep = evaluate(scene, *state, eo);
  out.final_rot = rep.mean_rotation_deg;
  out.psnr = rep.mean_psnr;
  out.minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  return out;
}

void criteria_pose_recovery_and_ablation() {
  const std::string dir = tmp_dir("desk");
  SyntheticSpec spec;
  spec.n_views = 20;
  spec.n_test = 5;
  spec.image_size = 64;
  spec.albedo = SyntheticSpec::Albedo::kChecker;
  make_synthetic_scene(spec, dir);
  const Scene scene = load_scene(dir);

  const uint64_t seeds[3] = {11, 22, 33};
  std::vector<RecoveryResult> with_window, without_window;
  bool pass5 = true;
  std::ostringstream detail5;
  for (uint64_t seed : seeds) {
    const RecoveryResult r = desk_recovery_run(scene, seed, true);
    with_window.push_back(r);
    const bool ok =
        r.final_rot < 1.0 && r.final_rot < 0.2 * r.initial_rot && r.psnr > 25.0 && r.minutes < 30;
    pass5 = pass5 && ok;
    detail5 << "seed " << seed << ": " << fmt(r.initial_rot) << "->" << fmt(r.final_rot)
            << " deg, psnr " << fmt(r.psnr) << ", " << fmt(r.minutes) << " min; ";
  }
  report(5, "desk-scale pose recovery (3 seeds)", pass5, detail5.str());

  std::ostringstream detail6;
  for (uint64_t seed : seeds) {
    const RecoveryResult r = desk_recovery_run(scene, seed, false);
    without_window.push_back(r);
    detail6 << "seed " << seed << ": " << fmt(r.final_rot) << " deg; ";
  }
  auto median_rot = [](std::vector<RecoveryResult> v) {
    std::sort(v.begin(), v.end(),
              [](const RecoveryResult& a, const RecoveryResult& b) {
                return a.final_rot < b.final_rot;
              });
    return v[v.size() / 2].final_rot;
  };
  const double med_on = median_rot(with_window);
  const double med_off = median_rot(without_window);
  report(6, "coarse-to-fine ablation (median rotation error)", med_on <= med_off,
         "with window " + fmt(med_on) + " deg <= without " + fmt(med_off) + " deg (" +
             detail6.str() + ")");
}

// ---------------------------------------------------------------- 7
void criterion_mesh_extraction() {
  const double radius = 0.3;
  ScalarGrid grid;
  grid.resolution = 64;
  grid.values.resize(64 * 64 * 64);
  for (int k = 0; k < 64; ++k)
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i)
        grid.values[(size_t(k) * 64 + size_t(j)) * 64 + size_t(i)] =
            (grid.point(i, j, k) - Vec3(0.5, 0.5, 0.5)).norm() - radius;
  const TriangleMesh mesh = marching_cubes(grid);

  ShapeSpec sphere;
  sphere.center = Vec3(0.5, 0.5, 0.5);
  sphere.radius = radius;
  const auto gt = sample_shape_surface(sphere, 100000, 3);
  const auto rec = sample_mesh_surface(mesh, 100000, 4);
  const double cd = chamfer_distance(rec, gt);
  const int boundary = count_boundary_edges(mesh);
  const double bound = (2.0 / 64) * (2.0 / 64);
  report(7, "marching cubes on the analytic sphere", cd < bound && boundary == 0,
         "chamfer " + fmt(cd) + " < " + fmt(bound) + ", boundary edges " +
             std::to_string(boundary) + ", faces " + std::to_string(mesh.face_count()));
}

// ---------------------------------------------------------------- 8
void criterion_stage2_refinement() {
  // exact loss-formula fixtures first
  TriangleMesh pair;
  pair.vertices = {Vec3(0, 0, 0), Vec3(0.7, 0, 0)};
  pair.reset_offsets();
  pair.adjacency = {{1}, {0}};
  const bool smooth_exact = smooth_loss(pair) == 0.49;
  pair.offsets.values[0] = 0.1;
  const bool offset_exact = offset_loss(pair) == 0.1 * 0.1;

  // scene + appearance fit: analytic Lambertian renders drive everything
  const std::string dir = tmp_dir("stage2");
  SyntheticSpec spec;
  spec.n_views = 12;
  spec.n_test = 0;
  spec.image_size = 48;
  spec.albedo = SyntheticSpec::Albedo::kSolid;
  make_synthetic_scene(spec, dir);
  const Scene scene = load_scene(dir);

  TrainConfig cfg = desk_config(7, true);
  cfg.field.geo_grid.levels = 6;
  cfg.field.geo_grid.n_max = 64;
  cfg.field.app_grid = cfg.field.geo_grid;
  auto state = make_train_state(scene, cfg);
  FieldModel& model = state->model;
  const double alpha = model.geo_encoder().levels();

  // regress the diffuse branch onto the analytic surface colors
  {
    std::vector<ad::ParamBlock*> params;
    for (auto* p : model.app_encoder().parameters()) params.push_back(p);
    for (auto* p : model.diffuse_mlp().parameters()) params.push_back(p);
    AdamW opt(params, {});
    Rng rng(81);
    const auto train = scene.train_indices();
    ad::Tape tape;
    for (int step = 0; step < 600; ++step) {
      tape.reset();
      std::vector<ad::NodeRef> errs;
      int got = 0;
      while (got < 128) {
        const int view = train[size_t(rng.below(train.size()))];
        const Camera& cam = scene.cameras[size_t(view)];
        const int px = int(rng.below(uint64_t(cam.width)));
        const int py = int(rng.below(uint64_t(cam.height)));
        const Ray ray = pixel_ray(cam, px, py);
        ShapeSpec unit = *scene.shape;
        unit.center = scene.box.to_unit(scene.shape->center);
        unit.radius = scene.shape->radius * scene.box.scale();
        const double t = unit.raycast(ray.origin, ray.dir);
        if (t < 0) continue;
        ++got;
        const Vec3 x = ray.origin + t * ray.dir;
        const Image& img = scene.images[size_t(view)];
        const Vec3 target(img.at(px, py, 0), img.at(px, py, 1), img.at(px, py, 2));
        auto nodes = model.appearance_node(tape, tape.constant3(x.x(), x.y(), x.z()), ray.dir,
                                           alpha);
        ad::NodeRef err = tape.sub(nodes.color,
                                   tape.constant3(target.x(), target.y(), target.z()));
        errs.push_back(tape.dot(err, err));
      }
      opt.zero_grads();
      tape.backward(tape.mean(tape.concat(errs)));
      opt.step(lr_at(step, 600, 5e-3, 5e-4));
    }
  }

  // noisy sphere mesh in unit coordinates
  ShapeSpec unit_sphere;
  unit_sphere.center = scene.box.to_unit(scene.shape->center);
  unit_sphere.radius = scene.shape->radius * scene.box.scale();
  ScalarGrid grid;
  grid.resolution = 48;
  grid.values.resize(48 * 48 * 48);
  for (int k = 0; k < 48; ++k)
    for (int j = 0; j < 48; ++j)
      for (int i = 0; i < 48; ++i)
        grid.values[(size_t(k) * 48 + size_t(j)) * 48 + size_t(i)] =
            unit_sphere.sdf(grid.point(i, j, k));
  TriangleMesh mesh = marching_cubes(grid);
  Rng noise(82);
  for (Vec3& v : mesh.vertices)
    v += Vec3(noise.normal(0, 0.01), noise.normal(0, 0.01), noise.normal(0, 0.01));
  mesh.reset_offsets();
  mesh.build_adjacency();

  const auto gt_pts = sample_shape_surface(unit_sphere, 60000, 83);
  const double chamfer_before = chamfer_distance(sample_mesh_surface(mesh, 60000, 84), gt_pts);

  RefineConfig rc;
  rc.rounds = 3;
  rc.iters_per_round = 150;
  rc.rays_per_iter = 768;
  rc.lr = 2e-3;
  rc.weights = {1.0, 0.01, 0.1};
  rc.seed = 85;
  const TriangleMesh refined = refine_mesh(std::move(mesh), scene, model, state->cameras, rc);
  const double chamfer_after =
      chamfer_distance(sample_mesh_surface(refined, 60000, 86), gt_pts);

  const bool pass = smooth_exact && offset_exact && chamfer_after * 2.0 <= chamfer_before &&
                    chamfer_after <= chamfer_before;
  report(8, "photometric mesh refinement on the noisy sphere", pass,
         "chamfer " + fmt(chamfer_before) + " -> " + fmt(chamfer_after) + " (need >= 2x), " +
             "formula fixtures " + (smooth_exact && offset_exact ? "exact" : "WRONG"));
}

// ---------------------------------------------------------------- 9
void criterion_loss_units() {
  bool ok = true;
  std::string detail;

  std::vector<Vec3> img(64, Vec3(0.3, 0.7, 0.2));
  ok = ok && photometric_loss(img, img) == 0.0;

  const std::vector<double> w(16, 0.5);
  ok = ok && std::abs(entropy_loss(w) - std::log(2.0)) < 1e-12;

  const std::vector<Vec3> cs{Vec3(1, 1, 1)};
  ok = ok && specular_loss(cs) == 3.0;

  // unit-gradient SDF fit: regress a plane with gradient supervision
  FieldConfig fc;
  fc.geo_grid.levels = 4;
  fc.geo_grid.n_min = 4;
  fc.geo_grid.n_max = 32;
  fc.geo_grid.table_size = 1u << 16;
  fc.app_grid = fc.geo_grid;
  fc.app_grid.table_size = 1u << 10;
  fc.geo_hidden = 32;
  fc.app_hidden = 8;
  fc.spec_hidden = 8;
  FieldModel model(fc, 91);
  AdamW opt(model.parameters(), {});
  Rng rng(92);
  const Vec3 normal(1, 0, 0);
  for (int s = 0; s < 2500; ++s) {
    ad::Tape tape;
    std::vector<ad::NodeRef> errs;
    for (int i = 0; i < 128; ++i) {
      const Vec3 x(rng.uniform(), rng.uniform(), rng.uniform());
      ad::NodeRef f = model.sdf_node(tape, tape.constant3(x.x(), x.y(), x.z()), 4.0);
      ad::NodeRef e = tape.add_const(f, -(x.x() - 0.45));
      errs.push_back(tape.mul(e, e));
      ad::NodeRef g = model.sdf_gradient_node(tape, x, 4.0);
      ad::NodeRef ge = tape.sub(g, tape.constant3(normal.x(), normal.y(), normal.z()));
      errs.push_back(tape.scale(tape.dot(ge, ge), 2.0));
    }
    opt.zero_grads();
    tape.backward(tape.mean(tape.concat(errs)));
    opt.step(lr_at(s, 2500, 5e-3, 1e-4));
  }
  std::vector<Vec3> pts;
  Rng prng(93);
  for (int i = 0; i < 256; ++i)
    pts.emplace_back(prng.uniform(0.1, 0.9), prng.uniform(0.1, 0.9), prng.uniform(0.1, 0.9));
  const double eik = eikonal_loss(model, pts, 4.0);
  ok = ok && eik < 1e-3;
  detail = "eikonal after unit-gradient fit " + fmt(eik);

  report(9, "loss unit suite", ok, detail);
}

// --------------------------------------------------------------- 10
void criterion_schedules_and_echoes() {
  bool ok = true;
  std::string detail;
  ok = ok && lr_at(0, 30000, 1e-3, 1e-5) == 1e-3;
  ok = ok && std::abs(lr_at(30000, 30000, 1e-3, 1e-5) - 1e-5) < 1e-20;
  ok = ok && lr_at(0, 30000, 1e-4, 1e-6) == 1e-4;
  ok = ok && std::abs(lr_at(30000, 30000, 1e-4, 1e-6) - 1e-6) < 1e-21;
  detail += std::string("lr endpoints ") + (ok ? "exact" : "WRONG");

  // tiny end-to-end CLI run with the paper-protocol flags
  const std::string dir = tmp_dir("cli");
  const std::string scene_dir = dir + "/scene";
  const std::string run_dir = dir + "/run";
  {
    const char* argv[] = {"posefield", "make-synthetic", "--out", scene_dir.c_str(),
                          "--views", "4", "--test-views", "1", "--size", "16"};
    ok = ok && cli_main(10, argv) == 0;
  }
  const std::string cfg_path = dir + "/config.json";
  {
    TrainConfig tiny;
    tiny.iterations = 8;
    tiny.rays_per_batch = 32;
    tiny.n_samples = 8;
    tiny.eikonal_samples = 8;
    tiny.grid_resolution = 8;
    tiny.log_every = 1;
    tiny.field.geo_grid.levels = 3;
    tiny.field.geo_grid.n_min = 4;
    tiny.field.geo_grid.n_max = 16;
    tiny.field.geo_grid.table_size = 1u << 8;
    tiny.field.app_grid = tiny.field.geo_grid;
    tiny.field.geo_hidden = 8;
    tiny.field.app_hidden = 8;
    tiny.field.spec_hidden = 8;
    tiny.field.specular_features = 2;
    std::ofstream os(cfg_path);
    os << train_config_to_json(tiny);
  }
  {
    const char* argv[] = {"posefield", "train",   "--scene",       scene_dir.c_str(),
                          "--config",  cfg_path.c_str(), "--noise-sigma", "0.15",
                          "--seed",    "7",       "--out",         run_dir.c_str()};
    ok = ok && cli_main(12, argv) == 0;
  }
  // the protocol value is echoed verbatim into the run metadata
  {
    std::ifstream is(run_dir + "/metadata.json");
    std::stringstream ss;
    ss << is.rdbuf();
    ok = ok && ss.str().find("\"noise_sigma\": 0.15") != std::string::npos;
    detail += ok ? ", --noise-sigma 0.15 echoed" : ", metadata echo MISSING";
  }
  // the paper-scale extraction settings are accepted and echoed
  const std::string mesh_path = dir + "/mesh.ply";
  {
    const std::string ckpt = run_dir + "/checkpoint.bin";
    const std::string threads = std::to_string(hw_threads());
    const char* argv[] = {"posefield",    "extract-mesh", "--checkpoint", ckpt.c_str(),
                          "--resolution", "512",          "--level",      "0.001",
                          "--threads",    threads.c_str(), "--out",       mesh_path.c_str()};
    ok = ok && cli_main(12, argv) == 0;
    std::ifstream is(mesh_path + ".meta.json");
    std::stringstream ss;
    ss << is.rdbuf();
    ok = ok && ss.str().find("\"resolution\": 512") != std::string::npos &&
         ss.str().find("\"level\": 0.001") != std::string::npos;
    detail += ok ? ", extract-mesh 512/0.001 echoed" : ", extract echo MISSING";
  }
  report(10, "schedule endpoints and protocol echoes", ok, detail);
}

// --------------------------------------------------------------- 11
void criterion_determinism() {
  const std::string dir = tmp_dir("det");
  const std::string scene_dir = dir + "/scene";
  SyntheticSpec spec;
  spec.n_views = 5;
  spec.n_test = 1;
  spec.image_size = 20;
  make_synthetic_scene(spec, scene_dir);
  const Scene scene = load_scene(scene_dir);

  TrainConfig cfg;
  cfg.iterations = 40;
  cfg.rays_per_batch = 64;
  cfg.chunk_rays = 16;
  cfg.n_samples = 16;
  cfg.eikonal_samples = 16;
  cfg.grid_resolution = 16;
  cfg.log_every = 1;
  cfg.checkpoint_every = 20;
  cfg.noise_sigma = 0.04;
  cfg.seed = 99;
  cfg.threads = 1;
  cfg.field.geo_grid.levels = 3;
  cfg.field.geo_grid.n_min = 4;
  cfg.field.geo_grid.n_max = 16;
  cfg.field.geo_grid.table_size = 1u << 9;
  cfg.field.app_grid = cfg.field.geo_grid;
  cfg.field.geo_hidden = 16;
  cfg.field.app_hidden = 16;
  cfg.field.spec_hidden = 8;
  cfg.field.specular_features = 2;

  (void)train_stage1(scene, cfg, dir + "/run_a");
  (void)train_stage1(scene, cfg, dir + "/run_b");
  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  };
  const bool logs_identical = slurp(dir + "/run_a/log.csv") == slurp(dir + "/run_b/log.csv") &&
                              !slurp(dir + "/run_a/log.csv").empty();

  // save/load mid-run continues identically
  auto state = make_train_state(scene, cfg);
  for (int s = 0; s < 15; ++s) (void)train_step(*state, scene);
  save_checkpoint(dir + "/mid.bin", *state);
  std::vector<double> direct;
  for (int s = 0; s < 10; ++s) direct.push_back(train_step(*state, scene).total);
  auto resumed_state = load_checkpoint(dir + "/mid.bin", scene);
  std::vector<double> resumed;
  for (int s = 0; s < 10; ++s) resumed.push_back(train_step(*resumed_state, scene).total);
  const bool resume_identical = direct == resumed;

  report(11, "bit-exact training determinism and resume", logs_identical && resume_identical,
         std::string("logs ") + (logs_identical ? "identical" : "DIFFER") + ", resume " +
             (resume_identical ? "identical" : "DIVERGES"));
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = false;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--skip-training") quick = true;

  g_t0 = std::chrono::steady_clock::now();
  criterion_gradient_integrity();
  criterion_compositing_oracle();
  criterion_window_schedule();
  criterion_hash_determinism();
  if (!quick) criteria_pose_recovery_and_ablation();
  criterion_mesh_extraction();
  if (!quick) criterion_stage2_refinement();
  criterion_loss_units();
  criterion_schedules_and_echoes();
  criterion_determinism();
  if (quick) std::printf("criteria 5, 6 and 8 skipped (--skip-training)\n");

  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d criteria FAILED\n", g_failures);
  return 1;
}
