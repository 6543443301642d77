#include "posefield/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "posefield/chamfer.hpp"
#include "posefield/check.hpp"
#include "posefield/checkpoint.hpp"
#include "posefield/evaluate.hpp"
#include "posefield/mesh_io.hpp"
#include "posefield/refine.hpp"
#include "posefield/trainer.hpp"

namespace posefield {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

Scene scene_for_checkpoint(const std::string& ckpt_path, const std::string& scene_override) {
  const std::string dir =
      scene_override.empty() ? checkpoint_scene_dir(ckpt_path) : scene_override;
  return load_scene(dir);
}

TriangleMesh mesh_to_unit(TriangleMesh mesh, const SceneBox& box) {
  for (Vec3& v : mesh.vertices) v = box.to_unit(v);
  mesh.reset_offsets();
  mesh.build_adjacency();
  return mesh;
}

TriangleMesh mesh_to_world(TriangleMesh mesh, const SceneBox& box) {
  mesh.fold_offsets();
  for (Vec3& v : mesh.vertices) v = box.to_world(v);
  return mesh;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"hash-grid SDF reconstruction from posed images with pose refinement"};
  app.require_subcommand(1);

  // ---- make-synthetic ----
  auto* mk = app.add_subcommand("make-synthetic", "generate an analytic test scene");
  std::string mk_out, mk_shape = "sphere", mk_albedo = "solid";
  SyntheticSpec spec;
  mk->add_option("--out", mk_out, "output scene directory")->required();
  mk->add_option("--shape", mk_shape, "sphere | cube | two-spheres");
  mk->add_option("--albedo", mk_albedo, "solid | two-tone | checker");
  mk->add_option("--views", spec.n_views, "train views");
  mk->add_option("--test-views", spec.n_test, "test views");
  mk->add_option("--size", spec.image_size, "image size in pixels");
  mk->add_option("--ring-radius", spec.ring_radius, "camera ring radius (world units)");
  mk->add_option("--shape-radius", spec.shape_radius, "shape radius (world units)");
  mk->add_option("--seed", spec.seed, "rng seed");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "stage-1 joint field and pose optimization");
  std::string tr_scene, tr_config, tr_out;
  double tr_noise = -1;
  int64_t tr_seed = -1, tr_iters = -1;
  int tr_threads = -1;
  tr->add_option("--scene", tr_scene, "scene directory")->required();
  tr->add_option("--config", tr_config, "JSON config file (TrainConfig keys)");
  tr->add_option("--noise-sigma", tr_noise, "pose perturbation sigma (se(3) units)");
  tr->add_option("--seed", tr_seed, "rng seed override");
  tr->add_option("--iterations", tr_iters, "iteration override");
  tr->add_option("--threads", tr_threads, "worker threads");
  tr->add_option("--out", tr_out, "output run directory")->required();

  // ---- render ----
  auto* rd = app.add_subcommand("render", "render a scene view from a checkpoint");
  std::string rd_ckpt, rd_out, rd_scene;
  int rd_view = 0;
  rd->add_option("--checkpoint", rd_ckpt)->required();
  rd->add_option("--view", rd_view, "view index into the scene");
  rd->add_option("--scene", rd_scene, "scene directory override");
  rd->add_option("--out", rd_out, "output prefix (writes _rgb.png, _depth.png, _depth.raw)")
      ->required();

  // ---- extract-mesh ----
  auto* ex = app.add_subcommand("extract-mesh", "marching cubes over the learned field");
  std::string ex_ckpt, ex_out, ex_scene;
  int ex_res = 512;
  double ex_level = 0.0;
  int ex_threads = 1;
  ex->add_option("--checkpoint", ex_ckpt)->required();
  ex->add_option("--resolution", ex_res, "lattice resolution per axis");
  ex->add_option("--level", ex_level, "iso level");
  ex->add_option("--scene", ex_scene, "scene directory override");
  ex->add_option("--threads", ex_threads);
  ex->add_option("--out", ex_out, "output mesh (.obj or .ply)")->required();

  // ---- refine-mesh ----
  auto* rf = app.add_subcommand("refine-mesh", "photometric mesh refinement");
  std::string rf_ckpt, rf_mesh, rf_out, rf_scene;
  RefineConfig rf_cfg;
  rf->add_option("--checkpoint", rf_ckpt)->required();
  rf->add_option("--mesh", rf_mesh, "input mesh (world units)")->required();
  rf->add_option("--out", rf_out, "output mesh path")->required();
  rf->add_option("--scene", rf_scene, "scene directory override");
  rf->add_option("--rounds", rf_cfg.rounds);
  rf->add_option("--iters", rf_cfg.iters_per_round);
  rf->add_option("--rays", rf_cfg.rays_per_iter);
  rf->add_option("--lr", rf_cfg.lr);
  rf->add_option("--threads", rf_cfg.threads);
  rf->add_flag("--offset-laplacian", rf_cfg.offset_laplacian,
               "smoothness on offset differences instead of edge lengths");

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "pose, view-synthesis and mesh metrics");
  std::string ev_ckpt, ev_scene, ev_gt_mesh, ev_mesh, ev_out;
  int ev_threads = 1;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--scene", ev_scene, "scene directory override");
  ev->add_option("--gt-mesh", ev_gt_mesh, "ground-truth mesh (world units)");
  ev->add_option("--mesh", ev_mesh, "reconstructed mesh (world units)");
  ev->add_option("--out", ev_out, "CSV output path");
  ev->add_option("--threads", ev_threads);

  // ---- pose-report ----
  auto* pr = app.add_subcommand("pose-report", "per-camera aligned pose errors");
  std::string pr_ckpt, pr_scene, pr_out;
  pr->add_option("--checkpoint", pr_ckpt)->required();
  pr->add_option("--scene", pr_scene, "scene directory override");
  pr->add_option("--out", pr_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  if (mk->parsed()) {
    if (mk_shape == "sphere") spec.shape = SyntheticSpec::Shape::kSphere;
    else if (mk_shape == "cube") spec.shape = SyntheticSpec::Shape::kCube;
    else if (mk_shape == "two-spheres") spec.shape = SyntheticSpec::Shape::kTwoSpheres;
    else throw StructuralError("unknown shape: " + mk_shape);
    if (mk_albedo == "solid") spec.albedo = SyntheticSpec::Albedo::kSolid;
    else if (mk_albedo == "two-tone") spec.albedo = SyntheticSpec::Albedo::kTwoTone;
    else if (mk_albedo == "checker") spec.albedo = SyntheticSpec::Albedo::kChecker;
    else throw StructuralError("unknown albedo: " + mk_albedo);
    make_synthetic_scene(spec, mk_out);
    std::cout << "wrote scene to " << mk_out << "\n";
    return 0;
  }

  if (tr->parsed()) {
    TrainConfig cfg;
    if (!tr_config.empty()) {
      std::ifstream is(tr_config);
      if (!is) throw StructuralError("cannot open config " + tr_config);
      std::stringstream ss;
      ss << is.rdbuf();
      cfg = train_config_from_json(ss.str());
    }
    if (tr_noise >= 0) cfg.noise_sigma = tr_noise;
    if (tr_seed >= 0) cfg.seed = uint64_t(tr_seed);
    if (tr_iters >= 0) cfg.iterations = tr_iters;
    if (tr_threads >= 0) cfg.threads = tr_threads;
    const Scene scene = load_scene(tr_scene);
    auto state = train_stage1(scene, cfg, tr_out);
    const TrainLogRow last = state->pose_errors(scene, {});
    std::cout << "finished " << state->step << " steps; mean rot err "
              << last.mean_rot_err_deg << " deg\n";
    return 0;
  }

  if (rd->parsed()) {
    Scene scene = scene_for_checkpoint(rd_ckpt, rd_scene);
    auto state = load_checkpoint(rd_ckpt, scene);
    PF_CHECK_MSG(rd_view >= 0 && rd_view < int(scene.cameras.size()),
                 "render: --view out of range");
    RenderOptions ro;
    ro.n_samples = state->config.n_samples;
    ro.near = scene.near;
    ro.far = scene.far;
    ro.background = state->config.background;
    ro.alpha = state->window_alpha();
    const RenderResult res = render_image(state->model, state->cameras[size_t(rd_view)], ro,
                                          &state->grid);
    write_png(rd_out + "_rgb.png", res.rgb);
    write_png(rd_out + "_depth.png", res.depth_preview);
    write_depth_raw(rd_out + "_depth.raw", res.rgb.width, res.rgb.height, res.depth);
    std::cout << "wrote " << rd_out << "_rgb.png\n";
    return 0;
  }

  if (ex->parsed()) {
    Scene scene = scene_for_checkpoint(ex_ckpt, ex_scene);
    auto state = load_checkpoint(ex_ckpt, scene);
    ScalarGrid grid = sample_field_grid(state->model, ex_res, state->window_alpha(), ex_threads);
    grid.level = ex_level;
    TriangleMesh mesh = marching_cubes(grid);
    bake_vertex_colors(mesh, state->model, state->window_alpha());
    mesh = mesh_to_world(std::move(mesh), scene.box);
    export_mesh(mesh, ex_out);
    json meta;
    meta["resolution"] = ex_res;
    meta["level"] = ex_level;
    meta["vertices"] = mesh.vertex_count();
    meta["faces"] = mesh.face_count();
    meta["checkpoint"] = ex_ckpt;
    std::ofstream os(ex_out + ".meta.json");
    os << meta.dump(2) << "\n";
    std::cout << "wrote " << ex_out << " (" << mesh.vertex_count() << " vertices, "
              << mesh.face_count() << " faces)\n";
    return 0;
  }

  if (rf->parsed()) {
    Scene scene = scene_for_checkpoint(rf_ckpt, rf_scene);
    auto state = load_checkpoint(rf_ckpt, scene);
    rf_cfg.background = state->config.background;
    TriangleMesh mesh = mesh_to_unit(import_mesh(rf_mesh), scene.box);
    RefineStats stats;
    TriangleMesh refined =
        refine_mesh(std::move(mesh), scene, state->model, state->cameras, rf_cfg, &stats);
    bake_vertex_colors(refined, state->model, state->window_alpha());
    refined = mesh_to_world(std::move(refined), scene.box);
    export_mesh(refined, rf_out);
    json meta;
    meta["rounds"] = rf_cfg.rounds;
    meta["iters_per_round"] = rf_cfg.iters_per_round;
    meta["subdivided"] = stats.subdivided;
    meta["decimated"] = stats.decimated;
    meta["reverted"] = stats.reverted;
    std::ofstream os(rf_out + ".meta.json");
    os << meta.dump(2) << "\n";
    std::cout << "wrote " << rf_out << "\n";
    return 0;
  }

  if (ev->parsed()) {
    Scene scene = scene_for_checkpoint(ev_ckpt, ev_scene);
    auto state = load_checkpoint(ev_ckpt, scene);
    EvalOptions opts;
    opts.threads = ev_threads;
    TriangleMesh mesh, gt_mesh;
    if (!ev_mesh.empty()) {
      mesh = mesh_to_unit(import_mesh(ev_mesh), scene.box);
      opts.mesh = &mesh;
    }
    if (!ev_gt_mesh.empty()) {
      gt_mesh = import_mesh(ev_gt_mesh);
      opts.gt_mesh = &gt_mesh;
    }
    const EvalReport report = evaluate(scene, *state, opts);
    if (!ev_out.empty()) {
      std::ofstream os(ev_out);
      os << report.to_csv();
      std::ofstream sos(ev_out + ".summary.csv");
      sos << report.summary_csv();
    }
    std::cout << report.summary();
    return 0;
  }

  if (pr->parsed()) {
    Scene scene = scene_for_checkpoint(pr_ckpt, pr_scene);
    auto state = load_checkpoint(pr_ckpt, scene);
    const std::string csv = pose_report_csv(scene, *state);
    if (!pr_out.empty()) {
      std::ofstream os(pr_out);
      os << csv;
    } else {
      std::cout << csv;
    }
    return 0;
  }
  return 1;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  try {
    return run(argc, argv);
  } catch (const StructuralError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace posefield
