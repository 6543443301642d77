#include <benchmark/benchmark.h>

#include <posefield/chamfer.hpp>
#include <posefield/field.hpp>
#include <posefield/mesh.hpp>
#include <posefield/raymesh.hpp>
#include <posefield/renderer.hpp>
#include <posefield/rng.hpp>

namespace {

using namespace posefield;

FieldConfig bench_field() {
  FieldConfig cfg;
  cfg.geo_grid.levels = 8;
  cfg.geo_grid.n_min = 8;
  cfg.geo_grid.n_max = 96;
  cfg.geo_grid.table_size = 1u << 14;
  cfg.app_grid = cfg.geo_grid;
  cfg.geo_hidden = 32;
  cfg.app_hidden = 32;
  cfg.spec_hidden = 16;
  cfg.specular_features = 4;
  return cfg;
}

void BM_HashEncode(benchmark::State& state) {
  Rng rng(1);
  HashGridEncoder enc("bench", bench_field().geo_grid, rng);
  std::vector<double> out(static_cast<size_t>(enc.feature_dim()));
  Rng prng(2);
  Vec3 x(prng.uniform(), prng.uniform(), prng.uniform());
  for (auto _ : state) {
    enc.encode(x, 8.0, out);
    benchmark::DoNotOptimize(out.data());
    x.x() = x.x() < 0.9 ? x.x() + 1e-4 : 0.1;
  }
}
BENCHMARK(BM_HashEncode);

void BM_SdfForward(benchmark::State& state) {
  FieldModel model(bench_field(), 3);
  Vec3 x(0.4, 0.5, 0.6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.sdf(x, 8.0));
    x.x() = x.x() < 0.9 ? x.x() + 1e-4 : 0.1;
  }
}
BENCHMARK(BM_SdfForward);

void BM_SdfNodeBackward(benchmark::State& state) {
  FieldModel model(bench_field(), 3);
  ad::Tape tape;
  for (auto _ : state) {
    tape.reset();
    ad::NodeRef f = model.sdf_node(tape, tape.constant3(0.4, 0.5, 0.6), 8.0);
    tape.backward(f);
    benchmark::DoNotOptimize(f.idx);
  }
}
BENCHMARK(BM_SdfNodeBackward);

void BM_Composite(benchmark::State& state) {
  const int n = int(state.range(0));
  Rng rng(4);
  std::vector<double> alphas(static_cast<size_t>(n)), t(static_cast<size_t>(n));
  std::vector<Vec3> colors(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    alphas[size_t(i)] = rng.uniform();
    t[size_t(i)] = 0.1 + 0.01 * i;
    colors[size_t(i)] = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
  }
  for (auto _ : state) {
    const CompositeResult r = composite(alphas, colors, t);
    benchmark::DoNotOptimize(r.acc);
  }
}
BENCHMARK(BM_Composite)->Arg(16)->Arg(64)->Arg(256);

void BM_MarchingCubes(benchmark::State& state) {
  const int r = int(state.range(0));
  ScalarGrid grid;
  grid.resolution = r;
  grid.values.resize(size_t(r) * size_t(r) * size_t(r));
  for (int k = 0; k < r; ++k)
    for (int j = 0; j < r; ++j)
      for (int i = 0; i < r; ++i)
        grid.values[(size_t(k) * size_t(r) + size_t(j)) * size_t(r) + size_t(i)] =
            (grid.point(i, j, k) - Vec3(0.5, 0.5, 0.5)).norm() - 0.3;
  for (auto _ : state) {
    const TriangleMesh mesh = marching_cubes(grid);
    benchmark::DoNotOptimize(mesh.face_count());
  }
}
BENCHMARK(BM_MarchingCubes)->Arg(32)->Arg(64);

void BM_BvhIntersect(benchmark::State& state) {
  ScalarGrid grid;
  grid.resolution = 48;
  grid.values.resize(48 * 48 * 48);
  for (int k = 0; k < 48; ++k)
    for (int j = 0; j < 48; ++j)
      for (int i = 0; i < 48; ++i)
        grid.values[(size_t(k) * 48 + size_t(j)) * 48 + size_t(i)] =
            (grid.point(i, j, k) - Vec3(0.5, 0.5, 0.5)).norm() - 0.3;
  const TriangleMesh mesh = marching_cubes(grid);
  const Bvh bvh(mesh);
  Rng rng(5);
  for (auto _ : state) {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    d.normalize();
    const RayHit hit = bvh.intersect(Vec3(0.5, 0.5, 0.5) - 1.2 * d, d);
    benchmark::DoNotOptimize(hit.t);
  }
}
BENCHMARK(BM_BvhIntersect);

void BM_ChamferNearest(benchmark::State& state) {
  Rng rng(6);
  std::vector<Vec3> cloud;
  for (int i = 0; i < 100000; ++i)
    cloud.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
  const KdTree tree(std::move(cloud));
  for (auto _ : state) {
    const Vec3 q(rng.uniform(), rng.uniform(), rng.uniform());
    benchmark::DoNotOptimize(tree.nearest_sq(q));
  }
}
BENCHMARK(BM_ChamferNearest);

}  // namespace

BENCHMARK_MAIN();
