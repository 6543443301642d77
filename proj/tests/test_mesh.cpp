#include <doctest.h>
#include <fstream>

#include <filesystem>
#include <posefield/chamfer.hpp>
#include <posefield/scene.hpp>
#include <posefield/mesh.hpp>
#include <posefield/mesh_io.hpp>
#include <posefield/raymesh.hpp>
#include <posefield/rng.hpp>

using namespace posefield;
namespace fs = std::filesystem;

namespace {

ScalarGrid analytic_sphere_grid(int r, double radius, double level = 0.0) {
  ScalarGrid grid;
  grid.resolution = r;
  grid.level = level;
  grid.values.resize(size_t(r) * size_t(r) * size_t(r));
  for (int k = 0; k < r; ++k)
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i)
        grid.values[(size_t(k) * size_t(r) + size_t(j)) * size_t(r) + size_t(i)] =
            (grid.point(i, j, k) - Vec3(0.5, 0.5, 0.5)).norm() - radius;
  return grid;
}

TriangleMesh unit_sphere_mesh(int r = 24, double radius = 0.3) {
  return marching_cubes(analytic_sphere_grid(r, radius));
}

}  // namespace

TEST_CASE("constant grid yields an empty mesh") {
  ScalarGrid grid;
  grid.resolution = 8;
  grid.values.assign(8 * 8 * 8, 1.0);
  const TriangleMesh mesh = marching_cubes(grid);
  CHECK(mesh.empty());
}

TEST_CASE("marching cubes on an analytic sphere") {
  const double radius = 0.3;
  const TriangleMesh mesh = marching_cubes(analytic_sphere_grid(64, radius));
  REQUIRE(!mesh.empty());

  SUBCASE("vertices sit near the sphere") {
    for (const Vec3& v : mesh.vertices) {
      const double r = (v - Vec3(0.5, 0.5, 0.5)).norm();
      CHECK(r > radius - 2.0 / 64);
      CHECK(r < radius + 2.0 / 64);
    }
  }

  SUBCASE("surface is closed and manifold") {
    CHECK(count_boundary_edges(mesh) == 0);
    CHECK(count_nonmanifold_edges(mesh) == 0);
  }

  SUBCASE("normals point outward (toward larger field values)") {
    int outward = 0;
    for (int f = 0; f < mesh.face_count(); ++f) {
      const auto& fc = mesh.faces[size_t(f)];
      const Vec3 c =
          (mesh.vertices[size_t(fc[0])] + mesh.vertices[size_t(fc[1])] + mesh.vertices[size_t(fc[2])]) / 3.0;
      if (mesh.face_normal(f).dot(c - Vec3(0.5, 0.5, 0.5)) > 0) ++outward;
    }
    CHECK(outward == mesh.face_count());
  }

  SUBCASE("chamfer against analytic surface samples is below the cell bound") {
    ShapeSpec sphere;
    sphere.center = Vec3(0.5, 0.5, 0.5);
    sphere.radius = radius;
    const auto gt = sample_shape_surface(sphere, 50000, 3);
    const auto rec = sample_mesh_surface(mesh, 50000, 4);
    CHECK(chamfer_distance(rec, gt) < (2.0 / 64) * (2.0 / 64));
  }
}

TEST_CASE("single interior negative lattice point produces a small closed surface") {
  ScalarGrid grid;
  grid.resolution = 5;
  grid.values.assign(5 * 5 * 5, 1.0);
  grid.values[(2 * 5 + 2) * 5 + 2] = -1.0;
  const TriangleMesh mesh = marching_cubes(grid);
  CHECK(mesh.face_count() == 8);
  CHECK(count_boundary_edges(mesh) == 0);
  CHECK(mesh.vertex_count() == 6);
}

TEST_CASE("level offset shifts the extracted surface") {
  const TriangleMesh mesh = marching_cubes(analytic_sphere_grid(32, 0.3, 0.05));
  for (const Vec3& v : mesh.vertices) {
    const double r = (v - Vec3(0.5, 0.5, 0.5)).norm();
    CHECK(r > 0.35 - 2.0 / 32);
    CHECK(r < 0.35 + 2.0 / 32);
  }
}

TEST_CASE("chamfer distance conventions") {
  const std::vector<Vec3> a{Vec3(0, 0, 0)};
  const std::vector<Vec3> b{Vec3(1, 0, 0)};
  CHECK(chamfer_distance(a, a) == 0.0);
  CHECK(chamfer_distance(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS((void)chamfer_distance({}, b), StructuralError);

  Rng rng(5);
  std::vector<Vec3> big;
  for (int i = 0; i < 2000; ++i)
    big.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
  // kd-tree agrees with brute force
  const KdTree tree(big);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 q(rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2));
    double best = 1e300;
    for (const Vec3& p : big) best = std::min(best, (p - q).squaredNorm());
    CHECK(tree.nearest_sq(q) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("smooth and offset losses") {
  TriangleMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(0.7, 0, 0)};
  mesh.reset_offsets();
  mesh.adjacency = {{1}, {0}};

  SUBCASE("two-vertex edge gives loss d^2") {
    CHECK(smooth_loss(mesh) == doctest::Approx(0.49).epsilon(1e-12));
  }

  SUBCASE("uniform offset translation leaves the loss unchanged") {
    const double before = smooth_loss(mesh);
    for (size_t i = 0; i < 2; ++i)
      for (size_t c = 0; c < 3; ++c) mesh.offsets.values[i * 3 + c] = (c == 1 ? 0.35 : -0.1);
    CHECK(smooth_loss(mesh) == doctest::Approx(before).epsilon(1e-12));
  }

  SUBCASE("halving positions quarters the loss") {
    const double before = smooth_loss(mesh);
    for (Vec3& v : mesh.vertices) v *= 0.5;
    CHECK(smooth_loss(mesh) == doctest::Approx(before / 4).epsilon(1e-12));
  }

  SUBCASE("offset loss sums squared norms") {
    CHECK(offset_loss(mesh) == 0.0);
    mesh.offsets.values[0] = 0.1;
    CHECK(offset_loss(mesh) == doctest::Approx(0.01).epsilon(1e-15));
    mesh.offsets.values = {1, 0, 0, 0, 1, 0};
    CHECK(offset_loss(mesh) == doctest::Approx(2.0).epsilon(1e-15));
  }

  SUBCASE("refine_total combines parts") {
    const RefineWeights w{1.0, 0.01, 0.1};
    CHECK(refine_total(0.02, 1.0, 0.05, w) == doctest::Approx(0.035).epsilon(1e-12));
    CHECK(refine_total(0.0, 0.0, 0.0, w) == 0.0);
    const RefineWeights photo_only{1.0, 0.0, 0.0};
    CHECK(refine_total(0.33, 5.0, 9.0, photo_only) == doctest::Approx(0.33).epsilon(1e-12));
  }
}

TEST_CASE("loss gradients match finite differences") {
  TriangleMesh mesh = unit_sphere_mesh(10);
  Rng rng(6);
  for (auto& v : mesh.offsets.values) v = rng.normal(0, 0.01);

  for (int variant = 0; variant < 3; ++variant) {
    auto loss = [&] {
      if (variant == 0) return smooth_loss(mesh);
      if (variant == 1) return smooth_loss_offset_laplacian(mesh);
      return offset_loss(mesh);
    };
    mesh.offsets.zero_grad();
    if (variant == 0) smooth_loss_grad(mesh, 1.0);
    if (variant == 1) smooth_loss_offset_laplacian_grad(mesh, 1.0);
    if (variant == 2) offset_loss_grad(mesh, 1.0);
    CHECK(ad::finite_difference_check(loss, mesh.offsets, 1e-6) < 1e-6);
  }
}

TEST_CASE("ray-triangle intersection") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);

  SUBCASE("hit at the centroid") {
    const Vec3 centroid = (a + b + c) / 3.0;
    const RayHit hit = intersect_triangle(centroid + Vec3(0, 0, 2), Vec3(0, 0, -1), a, b, c);
    REQUIRE(hit.hit());
    CHECK(hit.t == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(hit.b1 == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(hit.b2 == doctest::Approx(1.0 / 3).epsilon(1e-9));
  }

  SUBCASE("parallel ray misses") {
    const RayHit hit = intersect_triangle(Vec3(0.2, 0.2, 1), Vec3(1, 0, 0), a, b, c);
    CHECK(!hit.hit());
  }

  SUBCASE("behind the origin misses") {
    const RayHit hit = intersect_triangle(Vec3(0.2, 0.2, -1), Vec3(0, 0, -1), a, b, c);
    CHECK(!hit.hit());
  }
}

TEST_CASE("bvh agrees with brute force") {
  TriangleMesh mesh = unit_sphere_mesh(16);
  const Bvh bvh(mesh);
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    dir.normalize();
    const Vec3 origin = Vec3(0.5, 0.5, 0.5) - 1.2 * dir + 0.05 * Vec3(rng.normal(), rng.normal(), rng.normal());
    const RayHit fast = bvh.intersect(origin, dir);
    RayHit slow;
    double best = 1e300;
    for (int f = 0; f < mesh.face_count(); ++f) {
      const auto& fc = mesh.faces[size_t(f)];
      const RayHit h = intersect_triangle(origin, dir, mesh.position(fc[0]),
                                          mesh.position(fc[1]), mesh.position(fc[2]), f);
      if (h.hit() && h.t < best) {
        best = h.t;
        slow = h;
      }
    }
    CHECK(fast.hit() == slow.hit());
    if (fast.hit()) CHECK(fast.t == doctest::Approx(slow.t).epsilon(1e-10));
  }
}

TEST_CASE("differentiable hit depth matches finite differences") {
  TriangleMesh mesh;
  mesh.vertices = {Vec3(0.1, 0.1, 0.4), Vec3(0.9, 0.2, 0.5), Vec3(0.3, 0.8, 0.45)};
  mesh.faces = {{0, 1, 2}};
  mesh.reset_offsets();
  Rng rng(8);
  for (auto& v : mesh.offsets.values) v = rng.normal(0, 0.02);

  const Vec3 origin(0.4, 0.35, 2.0);
  const Vec3 dir = Vec3(0.02, -0.03, -1.0).normalized();

  auto build = [&](ad::Tape& t) {
    ad::NodeRef off = t.param(mesh.offsets);
    const HitNodes hn = ray_hit_nodes(t, off, mesh, 0, origin, dir);
    // scalar probe over t and the barycentrics
    return t.add(hn.t, t.add(t.scale(hn.b1, 0.37), t.scale(hn.b2, -0.21)));
  };
  ad::Tape t;
  mesh.offsets.zero_grad();
  t.backward(build(t));
  auto fn = [&] {
    ad::Tape tt;
    return tt.value(build(tt));
  };
  CHECK(ad::finite_difference_check(fn, mesh.offsets, 1e-6) < 1e-4);

  // value agrees with the plain intersector
  ad::Tape tv;
  const HitNodes hn = ray_hit_nodes(tv, tv.param(mesh.offsets), mesh, 0, origin, dir);
  const RayHit plain = intersect_triangle(origin, dir, mesh.position(0), mesh.position(1),
                                          mesh.position(2), 0);
  REQUIRE(plain.hit());
  CHECK(tv.value(hn.t) == doctest::Approx(plain.t).epsilon(1e-12));
  CHECK(tv.value(hn.b1) == doctest::Approx(plain.b1).epsilon(1e-12));
  CHECK(tv.value(hn.b2) == doctest::Approx(plain.b2).epsilon(1e-12));
}

TEST_CASE("subdivision and decimation keep the mesh structurally sound") {
  TriangleMesh mesh = unit_sphere_mesh(16);
  const int nonmanifold_before = count_nonmanifold_edges(mesh);
  const int faces_before = mesh.face_count();

  std::vector<int> top;
  for (int f = 0; f < faces_before / 10; ++f) top.push_back(f);
  const int added = subdivide_faces(mesh, top);
  CHECK(added > 0);
  mesh.validate();
  CHECK(count_nonmanifold_edges(mesh) <= nonmanifold_before);

  std::vector<int> bottom;
  for (int f = mesh.face_count() / 2; f < mesh.face_count(); ++f) bottom.push_back(f);
  const int removed = collapse_faces(mesh, bottom);
  CHECK(removed >= 0);
  mesh.validate();
  CHECK(count_nonmanifold_edges(mesh) <= nonmanifold_before);
}

TEST_CASE("mesh export and import round trips") {
  const std::string dir = (fs::temp_directory_path() / "pf_test_meshio").string();
  fs::remove_all(dir);
  fs::create_directories(dir);

  SUBCASE("single triangle obj layout") {
    TriangleMesh tri;
    tri.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    tri.faces = {{0, 1, 2}};
    tri.reset_offsets();
    export_obj(tri, dir + "/tri.obj");
    std::ifstream is(dir + "/tri.obj");
    std::string line;
    int v_lines = 0, f_lines = 0;
    std::string f_line;
    while (std::getline(is, line)) {
      if (line.rfind("v ", 0) == 0) ++v_lines;
      if (line.rfind("f ", 0) == 0) {
        ++f_lines;
        f_line = line;
      }
    }
    CHECK(v_lines == 3);
    CHECK(f_lines == 1);
    CHECK(f_line == "f 1 2 3");
  }

  SUBCASE("obj and ply round trips preserve geometry and connectivity") {
    TriangleMesh mesh = unit_sphere_mesh(12);
    mesh.colors.resize(mesh.vertices.size());
    Rng rng(9);
    for (auto& c : mesh.colors) c = Vec3(rng.uniform(), rng.uniform(), rng.uniform());

    for (const char* name : {"m.obj", "m.ply"}) {
      const std::string path = dir + "/" + name;
      export_mesh(mesh, path);
      const TriangleMesh back = import_mesh(path);
      REQUIRE(back.vertex_count() == mesh.vertex_count());
      REQUIRE(back.face_count() == mesh.face_count());
      for (int i = 0; i < mesh.vertex_count(); ++i)
        CHECK((back.vertices[size_t(i)] - mesh.vertices[size_t(i)]).norm() < 1e-6);
      for (int f = 0; f < mesh.face_count(); ++f)
        CHECK(back.faces[size_t(f)] == mesh.faces[size_t(f)]);
      REQUIRE(back.colors.size() == mesh.colors.size());
      for (size_t i = 0; i < mesh.colors.size(); ++i)
        CHECK((back.colors[i] - mesh.colors[i]).cwiseAbs().maxCoeff() < 1.0 / 255 + 1e-9);
    }
  }

  SUBCASE("exports are byte-deterministic") {
    TriangleMesh mesh = unit_sphere_mesh(10);
    export_mesh(mesh, dir + "/a.ply");
    export_mesh(mesh, dir + "/b.ply");
    std::ifstream a(dir + "/a.ply", std::ios::binary), b(dir + "/b.ply", std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }

  SUBCASE("ply header counts match the arrays") {
    TriangleMesh mesh = unit_sphere_mesh(8);
    export_ply(mesh, dir + "/h.ply");
    std::ifstream is(dir + "/h.ply", std::ios::binary);
    std::string line;
    int header_v = -1, header_f = -1;
    while (std::getline(is, line)) {
      if (line.rfind("element vertex ", 0) == 0) header_v = std::stoi(line.substr(15));
      if (line.rfind("element face ", 0) == 0) header_f = std::stoi(line.substr(13));
      if (line == "end_header") break;
    }
    CHECK(header_v == mesh.vertex_count());
    CHECK(header_f == mesh.face_count());
  }

  SUBCASE("unknown extension is a structural error") {
    TriangleMesh mesh = unit_sphere_mesh(8);
    CHECK_THROWS_AS(export_mesh(mesh, dir + "/m.stl"), StructuralError);
  }
}

TEST_CASE("scalar grid resampling keeps coarse signs") {
  FieldConfig cfg;
  cfg.geo_grid.levels = 4;
  cfg.geo_grid.n_min = 4;
  cfg.geo_grid.n_max = 32;
  cfg.geo_grid.table_size = 1u << 12;
  cfg.app_grid = cfg.geo_grid;
  cfg.geo_hidden = 16;
  cfg.app_hidden = 16;
  cfg.spec_hidden = 8;
  FieldModel model(cfg, 13);
  const ScalarGrid coarse = sample_field_grid(model, 9, 4.0);
  const ScalarGrid fine = sample_field_grid(model, 17, 4.0);
  for (int k = 0; k < 9; ++k)
    for (int j = 0; j < 9; ++j)
      for (int i = 0; i < 9; ++i) {
        const double a = coarse.value(i, j, k);
        const double b = fine.value(2 * i, 2 * j, 2 * k);
        CHECK(a == b);  // same lattice point, same function
      }

  // constant field: grid is exactly symmetric
  for (int l = 0; l < model.geo_encoder().levels(); ++l)
    std::fill(model.geo_encoder().table(l).values.begin(),
              model.geo_encoder().table(l).values.end(), 0.0);
  for (int i = 0; i < model.geo_mlp().layer_count(); ++i)
    std::fill(model.geo_mlp().weight(i).values.begin(), model.geo_mlp().weight(i).values.end(), 0.0);
  const ScalarGrid sym = sample_field_grid(model, 8, 4.0);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i) CHECK(sym.value(i, j, k) == sym.value(7 - i, j, k));
}

TEST_CASE("threaded field grid sampling matches single-threaded") {
  FieldConfig cfg;
  cfg.geo_grid.levels = 4;
  cfg.geo_grid.n_min = 4;
  cfg.geo_grid.n_max = 32;
  cfg.geo_grid.table_size = 1u << 12;
  cfg.app_grid = cfg.geo_grid;
  cfg.geo_hidden = 16;
  cfg.app_hidden = 16;
  cfg.spec_hidden = 8;
  FieldModel model(cfg, 14);
  const ScalarGrid a = sample_field_grid(model, 16, 4.0, 1);
  const ScalarGrid b = sample_field_grid(model, 16, 4.0, 4);
  for (size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);
}
