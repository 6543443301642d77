#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <posefield/checkpoint.hpp>
#include <posefield/evaluate.hpp>
#include <posefield/trainer.hpp>

#include <json.hpp>

using namespace posefield;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  const std::string dir = (fs::temp_directory_path() / ("pf_trainer_" + tag)).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig micro_config() {
  TrainConfig cfg;
  cfg.iterations = 40;
  cfg.rays_per_batch = 64;
  cfg.chunk_rays = 16;
  cfg.eikonal_samples = 32;
  cfg.n_samples = 24;
  cfg.grid_resolution = 16;
  cfg.log_every = 1;
  cfg.checkpoint_every = 0;
  cfg.field.geo_grid.levels = 3;
  cfg.field.geo_grid.n_min = 4;
  cfg.field.geo_grid.n_max = 16;
  cfg.field.geo_grid.table_size = 1u << 10;
  cfg.field.app_grid = cfg.field.geo_grid;
  cfg.field.geo_hidden = 16;
  cfg.field.app_hidden = 16;
  cfg.field.spec_hidden = 8;
  cfg.field.specular_features = 4;
  return cfg;
}

const Scene& micro_scene() {
  static Scene scene = [] {
    const std::string dir = temp_dir("scene");
    SyntheticSpec spec;
    spec.n_views = 6;
    spec.n_test = 2;
    spec.image_size = 24;
    make_synthetic_scene(spec, dir);
    return load_scene(dir);
  }();
  return scene;
}

}  // namespace

TEST_CASE("config json round trip and unknown-key rejection") {
  TrainConfig cfg = micro_config();
  cfg.noise_sigma = 0.15;
  cfg.seed = 1234;
  cfg.loss_weights.specular = 3e-4;
  const std::string text = train_config_to_json(cfg);
  const TrainConfig back = train_config_from_json(text);
  CHECK(back.iterations == cfg.iterations);
  CHECK(back.noise_sigma == cfg.noise_sigma);
  CHECK(back.seed == cfg.seed);
  CHECK(back.loss_weights.specular == cfg.loss_weights.specular);
  CHECK(back.field.geo_grid.table_size == cfg.field.geo_grid.table_size);
  CHECK(back.c2f_start == cfg.c2f_start);

  CHECK_THROWS_AS((void)train_config_from_json(R"({"iterations": 5, "lr_nref": [1, 2]})"),
                  StructuralError);
  CHECK_THROWS_AS((void)train_config_from_json("not json"), StructuralError);
}

TEST_CASE("perturb_poses protocol") {
  std::vector<Camera> cams(3);
  for (int i = 0; i < 3; ++i) {
    cams[size_t(i)].pose.rotation = so3_exp(Vec3(0.1 * i, -0.2, 0.3));
    cams[size_t(i)].pose.translation = Vec3(i, 2, 3);
    cams[size_t(i)].pose.correction.xi.values[0] = 0.7;  // must be reset
  }

  SUBCASE("sigma zero leaves poses unchanged") {
    auto copy = cams;
    Rng rng(1);
    perturb_poses(copy, 0.0, rng);
    for (int i = 0; i < 3; ++i) {
      CHECK(copy[size_t(i)].pose.rotation == cams[size_t(i)].pose.rotation);
      CHECK(copy[size_t(i)].pose.translation == cams[size_t(i)].pose.translation);
      for (double v : copy[size_t(i)].pose.correction.xi.values) CHECK(v == 0.0);
    }
  }

  SUBCASE("fixed seed reproduces the noise bit-exactly") {
    auto a = cams, b = cams;
    Rng r1(9), r2(9);
    perturb_poses(a, 0.15, r1);
    perturb_poses(b, 0.15, r2);
    for (int i = 0; i < 3; ++i) {
      CHECK(a[size_t(i)].pose.rotation == b[size_t(i)].pose.rotation);
      CHECK(a[size_t(i)].pose.translation == b[size_t(i)].pose.translation);
    }
  }

  SUBCASE("mean rotation magnitude matches the Maxwell mean") {
    // E|omega| for omega ~ N(0, sigma^2 I3) is 2 sigma sqrt(2/pi)
    const double sigma = 0.15;
    const double expected_deg = 2.0 * sigma * std::sqrt(2.0 / M_PI) * 180.0 / M_PI;
    std::vector<Camera> batch(1);
    Rng rng(31);
    double acc = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      batch[0].pose.rotation = Mat3::Identity();
      batch[0].pose.translation = Vec3::Zero();
      perturb_poses(batch, sigma, rng);
      acc += rotation_error_deg(batch[0].pose.rotation, Mat3::Identity());
    }
    const double mean = acc / n;
    CHECK(mean == doctest::Approx(expected_deg).epsilon(0.02));
    CHECK(expected_deg == doctest::Approx(13.71).epsilon(0.01));
  }
}

TEST_CASE("loss formulas against naive oracles") {
  SUBCASE("photometric") {
    std::vector<Vec3> a, b;
    CHECK(photometric_loss(a, b) == 0.0);
    a = {Vec3(0.5, 0.5, 0.5)};
    b = a;
    CHECK(photometric_loss(a, b) == 0.0);
    b[0] += Vec3(0.1, 0, 0);
    CHECK(photometric_loss(a, b) == doctest::Approx(0.01).epsilon(1e-12));

    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
      a.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
      b.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
    }
    double naive = 0;
    for (size_t i = 0; i < a.size(); ++i)
      for (int c = 0; c < 3; ++c) naive += (a[i][c] - b[i][c]) * (a[i][c] - b[i][c]);
    naive /= double(a.size());
    CHECK(photometric_loss(a, b) == doctest::Approx(naive).epsilon(1e-12));
  }

  SUBCASE("specular") {
    CHECK(specular_loss({}) == 0.0);
    const std::vector<Vec3> ones{Vec3(1, 1, 1)};
    CHECK(specular_loss(ones) == doctest::Approx(3.0).epsilon(1e-15));
    const std::vector<Vec3> two{Vec3(1, 0, 0), Vec3(0, 1, 0)};
    CHECK(specular_loss(two) == doctest::Approx(1.0).epsilon(1e-15));
  }

  SUBCASE("entropy") {
    const std::vector<double> half(4, 0.5);
    CHECK(entropy_loss(half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const std::vector<double> ends{0.0, 1.0, 0.0};
    CHECK(entropy_loss(ends) == doctest::Approx(0.0).epsilon(1e-5));
    const std::vector<double> quarter{0.25};
    const double direct = -0.25 * std::log(0.25) - 0.75 * std::log(0.75);
    CHECK(entropy_loss(quarter) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(direct == doctest::Approx(0.5623).epsilon(1e-3));
  }

  SUBCASE("total") {
    const LossParts parts{0.01, 1.0, 3.0, 0.69};
    const LossWeights weights{1.0, 0.1, 1e-4, 1e-3};
    CHECK(total_loss(parts, weights) ==
          doctest::Approx(0.01 + 0.1 + 3e-4 + 6.9e-4).epsilon(1e-12));
    CHECK(total_loss(parts, {0, 0, 0, 0}) == 0.0);
    CHECK(total_loss({0.5, 0, 0, 0}, {1, 0, 0, 0}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(
        (void)total_loss({std::numeric_limits<double>::infinity(), 0, 0, 0}, weights),
        NumericalError);
  }
}

TEST_CASE("eikonal loss on constructed gradient fields") {
  TrainConfig cfg = micro_config();
  FieldModel model(cfg.field, 3);
  // zero everything: grad f = 0, loss = (0-1)^2 = 1
  for (auto* p : model.parameters())
    if (p->name() != "beta") std::fill(p->values.begin(), p->values.end(), 0.0);
  std::vector<Vec3> pts;
  Rng rng(4);
  for (int i = 0; i < 64; ++i) pts.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
  CHECK(eikonal_loss(model, pts, 3.0) == doctest::Approx(1.0).epsilon(1e-12));

  // f = relu(2 x0) - relu(-2 x0) = 2 x0 so |grad f| = 2 and the loss is 1
  const int in = model.geo_mlp().input_dim();
  auto& w0 = model.geo_mlp().weight(0);
  w0.values[0] = 2.0;
  w0.values[size_t(in)] = -2.0;
  auto& w1 = model.geo_mlp().weight(1);
  const int h = cfg.field.geo_hidden;
  for (int i = 0; i < h; ++i) w1.values[size_t(i) * h + i] = 1.0;
  auto& w2 = model.geo_mlp().weight(2);
  w2.values[0] = 1.0;
  w2.values[1] = -1.0;
  CHECK(eikonal_loss(model, pts, 3.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("stage-1 loss gradient matches finite differences on a toy scene") {
  const Scene& scene = micro_scene();
  TrainConfig cfg = micro_config();
  cfg.rays_per_batch = 2;
  cfg.n_samples = 8;
  cfg.eikonal_samples = 4;
  cfg.seed = 11;
  auto state = make_train_state(scene, cfg);
  state->step = 25;  // mid-schedule window
  FrozenBatch batch = draw_batch(*state, scene);
  REQUIRE(batch.rays.size() == 2);

  auto fn = [&] { return stage1_loss(*state, batch, false).total; };
  auto grad = [&] {
    state->opt_field.zero_grads();
    state->opt_pose.zero_grads();
    (void)stage1_loss(*state, batch, true);
  };

  // pose block of the first ray's camera
  ad::ParamBlock& xi = state->cameras[size_t(batch.rays[0].camera)].pose.correction.xi;
  grad();
  CHECK(ad::finite_difference_check(fn, xi, 1e-6) < 1e-3);

  // beta and one mlp block
  grad();
  CHECK(ad::finite_difference_check(fn, state->model.beta(), 1e-6) < 1e-3);
  grad();
  CHECK(ad::finite_difference_check(fn, state->model.geo_mlp().bias(2), 1e-6) < 1e-3);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const Scene& scene = micro_scene();
  TrainConfig cfg = micro_config();
  cfg.iterations = 12;
  cfg.seed = 21;
  cfg.noise_sigma = 0.03;

  auto run = [&] {
    auto state = make_train_state(scene, cfg);
    std::vector<TrainLogRow> rows;
    while (state->step < cfg.iterations) rows.push_back(train_step(*state, scene));
    return rows;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].total == b[i].total);
    CHECK(a[i].photo == b[i].photo);
    CHECK(a[i].eik == b[i].eik);
    CHECK(a[i].entropy == b[i].entropy);
  }
}

TEST_CASE("threaded training matches single-threaded bit-exactly") {
  const Scene& scene = micro_scene();
  TrainConfig cfg = micro_config();
  cfg.iterations = 6;
  cfg.seed = 33;
  auto run = [&](int threads) {
    TrainConfig c = cfg;
    c.threads = threads;
    auto state = make_train_state(scene, c);
    std::vector<TrainLogRow> rows;
    while (state->step < c.iterations) rows.push_back(train_step(*state, scene));
    return rows;
  };
  const auto a = run(1);
  const auto b = run(4);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].total == b[i].total);
}

TEST_CASE("checkpoint round trip resumes bit-exactly") {
  const Scene& scene = micro_scene();
  TrainConfig cfg = micro_config();
  cfg.iterations = 20;
  cfg.seed = 77;
  cfg.noise_sigma = 0.02;
  const std::string dir = temp_dir("ckpt");

  auto state = make_train_state(scene, cfg);
  for (int s = 0; s < 10; ++s) (void)train_step(*state, scene);
  save_checkpoint(dir + "/mid.bin", *state);

  // continue the original
  std::vector<TrainLogRow> cont;
  for (int s = 0; s < 5; ++s) cont.push_back(train_step(*state, scene));

  // reload and continue
  auto loaded = load_checkpoint(dir + "/mid.bin", scene);
  CHECK(loaded->step == 10);
  std::vector<TrainLogRow> resumed;
  for (int s = 0; s < 5; ++s) resumed.push_back(train_step(*loaded, scene));

  for (size_t i = 0; i < cont.size(); ++i) {
    CHECK(cont[i].total == resumed[i].total);
    CHECK(cont[i].photo == resumed[i].photo);
    CHECK(cont[i].eik == resumed[i].eik);
  }
  // checkpoint of the loaded state reproduces the file bit-for-bit
  save_checkpoint(dir + "/a.bin", *state);
  save_checkpoint(dir + "/b.bin", *loaded);
  std::ifstream fa(dir + "/a.bin", std::ios::binary), fb(dir + "/b.bin", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("poses stay exactly zero when only the eikonal loss is active") {
  const Scene& scene = micro_scene();
  TrainConfig cfg = micro_config();
  cfg.iterations = 8;
  cfg.loss_weights = {0.0, 0.1, 0.0, 0.0};  // eikonal only; its points are constants
  auto state = make_train_state(scene, cfg);
  while (state->step < cfg.iterations) (void)train_step(*state, scene);
  for (const Camera& cam : state->cameras)
    for (double v : cam.pose.correction.xi.values) CHECK(v == 0.0);
}

TEST_CASE("micro training run reduces the photometric loss") {
  const Scene& scene = micro_scene();
  TrainConfig cfg = micro_config();
  cfg.iterations = 150;
  cfg.rays_per_batch = 128;
  cfg.seed = 5;
  auto state = make_train_state(scene, cfg);
  std::vector<double> photo;
  while (state->step < cfg.iterations) photo.push_back(train_step(*state, scene).photo);
  const double early =
      std::accumulate(photo.begin(), photo.begin() + 20, 0.0) / 20.0;
  const double late = std::accumulate(photo.end() - 20, photo.end(), 0.0) / 20.0;
  CHECK(late < early);
}

TEST_CASE("train_stage1 writes logs, metadata and checkpoints") {
  const Scene& scene = micro_scene();
  TrainConfig cfg = micro_config();
  cfg.iterations = 10;
  cfg.checkpoint_every = 5;
  cfg.log_every = 2;
  cfg.noise_sigma = 0.01;
  const std::string dir = temp_dir("run");
  auto state = train_stage1(scene, cfg, dir);
  CHECK(state->step == 10);
  CHECK(fs::exists(dir + "/log.csv"));
  CHECK(fs::exists(dir + "/metadata.json"));
  CHECK(fs::exists(dir + "/checkpoint.bin"));

  std::ifstream is(dir + "/log.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == train_log_header());

  nlohmann::json meta;
  std::ifstream ms(dir + "/metadata.json");
  ms >> meta;
  CHECK(meta["noise_sigma"].get<double>() == 0.01);
  CHECK(meta["config"]["noise_sigma"].get<double>() == 0.01);
}

TEST_CASE("gauge sanity: rigid world translation leaves the step-0 loss unchanged") {
  // shift every world quantity (cameras, shape, light) by the same offset;
  // normalization maps both setups onto the same unit-box scene
  TrainConfig cfg = micro_config();
  cfg.seed = 3;
  const std::string dir_a = temp_dir("gauge_a");
  const std::string dir_b = temp_dir("gauge_b");
  SyntheticSpec spec;
  spec.n_views = 5;
  spec.n_test = 0;
  spec.image_size = 20;
  make_synthetic_scene(spec, dir_a);
  spec.world_offset = Vec3(7.0, -3.0, 2.0);
  make_synthetic_scene(spec, dir_b);
  const Scene a = load_scene(dir_a);
  const Scene b = load_scene(dir_b);

  auto loss_at_step0 = [&](const Scene& scene) {
    auto state = make_train_state(scene, cfg);
    FrozenBatch batch = draw_batch(*state, scene);
    return stage1_loss(*state, batch, false).total;
  };
  const double la = loss_at_step0(a);
  const double lb = loss_at_step0(b);
  CHECK(la == doctest::Approx(lb).epsilon(1e-9));

  // rotations additionally rotate the normalized rays rigidly
  SyntheticSpec spun = spec;
  spun.world_offset = Vec3::Zero();
  spun.world_rotation = so3_exp(Vec3(0.3, -0.5, 0.8));
  const std::string dir_c = temp_dir("gauge_c");
  make_synthetic_scene(spun, dir_c);
  const Scene c = load_scene(dir_c);
  for (size_t i = 0; i < c.cameras.size(); ++i) {
    const Ray ra = pixel_ray(a.cameras[i], 3, 7);
    const Ray rc = pixel_ray(c.cameras[i], 3, 7);
    CHECK((rc.dir - spun.world_rotation * ra.dir).norm() < 1e-9);
    const Vec3 oa = ra.origin - Vec3(0.5, 0.5, 0.5);
    const Vec3 oc = rc.origin - Vec3(0.5, 0.5, 0.5);
    CHECK((oc - spun.world_rotation * oa).norm() < 1e-9);
  }
}

TEST_CASE("evaluate on ground-truth poses reports zero pose error") {
  const Scene& scene = micro_scene();
  TrainConfig cfg = micro_config();
  cfg.noise_sigma = 0.0;
  auto state = make_train_state(scene, cfg);

  EvalOptions opts;
  const EvalReport report = evaluate(scene, *state, opts);
  CHECK(report.mean_rotation_deg < 1e-9);
  CHECK(report.mean_translation < 1e-9);
  CHECK(report.has_test);
  CHECK(report.views.size() == scene.test_indices().size());
  CHECK(EvalReport::csv_header() == "view,psnr_db,ssim");
  // untrained model: psnr computed, just a smoke value
  for (const auto& row : report.views) CHECK(std::isfinite(row.psnr_db));

  const std::string csv = report.to_csv();
  CHECK(csv.rfind("view,psnr_db,ssim\n", 0) == 0);

  const std::string pose_csv = pose_report_csv(scene, *state);
  CHECK(pose_csv.rfind("camera,rot_err_deg,trans_err\n", 0) == 0);
}
