#include <doctest.h>

#include <posefield/hashgrid.hpp>
#include <posefield/rng.hpp>

#include "oracles.hpp"

using namespace posefield;

namespace {
GridConfig small_config() {
  GridConfig cfg;
  cfg.levels = 4;
  cfg.n_min = 4;
  cfg.n_max = 32;
  cfg.table_size = 1u << 10;
  cfg.features = 2;
  return cfg;
}
}  // namespace

TEST_CASE("level resolutions follow the geometric ladder") {
  GridConfig cfg;  // defaults: 16 levels, 14 .. 4069
  const auto res = HashGridEncoder::level_resolutions(cfg);
  REQUIRE(res.size() == 16);
  CHECK(res.front() == 14);
  // value pinned from a double-precision evaluation at build time; the
  // floor at the top level lands on 4068
  const std::vector<int> expected = {14,  20,  29,  43,   63,   92,   135,  197,
                                     288, 420, 614, 896, 1308, 1910, 2787, 4068};
  for (size_t i = 0; i < expected.size(); ++i) CHECK(res[i] == expected[i]);
}

TEST_CASE("degenerate n_min == n_max gives all-equal levels") {
  GridConfig cfg = small_config();
  cfg.n_min = cfg.n_max = 16;
  const auto res = HashGridEncoder::level_resolutions(cfg);
  for (int r : res) CHECK(r == 16);
}

TEST_CASE("hash_index golden vectors (bit-stable)") {
  CHECK(HashGridEncoder::hash_index(0, 0, 0, 1u << 14) == 0);
  CHECK(HashGridEncoder::hash_index(1, 0, 0, 1u << 14) == 1);
  // pinned via a wide-integer oracle evaluation
  CHECK(HashGridEncoder::hash_index(1, 2, 3, 1u << 14) == 13788);
  CHECK(HashGridEncoder::hash_index(7, 31, 255, 1u << 14) == 259);
  CHECK(HashGridEncoder::hash_index(123, 456, 789, 1u << 19) == 470282);
  CHECK(HashGridEncoder::hash_index(4069, 4069, 4069, 1u << 19) == 206585);

  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const uint32_t x = uint32_t(rng.below(1u << 16));
    const uint32_t y = uint32_t(rng.below(1u << 16));
    const uint32_t z = uint32_t(rng.below(1u << 16));
    CHECK(HashGridEncoder::hash_index(x, y, z, 1u << 14) == oracles::hash_bigint(x, y, z, 1u << 14));
  }
}

TEST_CASE("cosine window branches and monotonicity") {
  CHECK(cosine_window(3, 3.0) == 0.0);
  CHECK(cosine_window(3, 3.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(cosine_window(3, 4.0) == 1.0);
  CHECK(cosine_window(5, 2.0) == 0.0);
  CHECK(cosine_window(0, 9.0) == 1.0);

  for (int k = 0; k < 4; ++k) {
    double prev = -1;
    for (double a = 0; a <= 6.0; a += 0.01) {
      const double w = cosine_window(k, a);
      CHECK(w >= prev);
      CHECK(w >= 0.0);
      CHECK(w <= 1.0);
      prev = w;
    }
  }
  for (double a = 0; a <= 6.0; a += 0.13) {
    double prev = 2.0;
    for (int k = 0; k < 6; ++k) {
      const double w = cosine_window(k, a);
      CHECK(w <= prev);
      prev = w;
    }
  }
}

TEST_CASE("progress_to_alpha schedule") {
  const int levels = 16;
  CHECK(progress_to_alpha(0, 1000, 0.1, 0.5, levels) == 0.0);
  CHECK(progress_to_alpha(100, 1000, 0.1, 0.5, levels) == 0.0);
  CHECK(progress_to_alpha(500, 1000, 0.1, 0.5, levels) == doctest::Approx(levels));
  CHECK(progress_to_alpha(1000, 1000, 0.1, 0.5, levels) == doctest::Approx(levels));
  CHECK(progress_to_alpha(300, 1000, 0.1, 0.5, levels) == doctest::Approx(levels / 2.0));
}

TEST_CASE("encode at a lattice vertex reproduces the vertex feature row") {
  GridConfig cfg = small_config();
  Rng rng(2);
  HashGridEncoder enc("t", cfg, rng);
  const auto& res = enc.resolutions();
  const int f = cfg.features;

  for (int l = 0; l < cfg.levels; ++l) {
    const int n = res[size_t(l)];
    const int ix = n / 2, iy = n / 3, iz = 1;
    const Vec3 x(double(ix) / n, double(iy) / n, double(iz) / n);
    std::vector<double> out(static_cast<size_t>(enc.feature_dim()));
    enc.encode(x, double(cfg.levels), out);
    const uint32_t row = enc.level_is_hashed(l)
                             ? HashGridEncoder::hash_index(uint32_t(ix), uint32_t(iy), uint32_t(iz),
                                                           cfg.table_size)
                             : (uint32_t(iz) * uint32_t(n + 1) + uint32_t(iy)) * uint32_t(n + 1) +
                                   uint32_t(ix);
    for (int k = 0; k < f; ++k)
      CHECK(out[size_t(l * f + k)] ==
            doctest::Approx(enc.table(l).values[size_t(row) * f + k]).epsilon(1e-12));
  }
}

TEST_CASE("zero tables encode to zero features") {
  GridConfig cfg = small_config();
  Rng rng(3);
  HashGridEncoder enc("t", cfg, rng);
  for (int l = 0; l < cfg.levels; ++l)
    std::fill(enc.table(l).values.begin(), enc.table(l).values.end(), 0.0);
  Rng prng(5);
  std::vector<double> out(static_cast<size_t>(enc.feature_dim()));
  for (int i = 0; i < 20; ++i) {
    enc.encode(Vec3(prng.uniform(), prng.uniform(), prng.uniform()), 2.3, out);
    for (double v : out) CHECK(v == 0.0);
  }
}

TEST_CASE("trilinear weights form a partition of unity") {
  GridConfig cfg = small_config();
  Rng rng(4);
  HashGridEncoder enc("t", cfg, rng);
  // constant tables: interpolation of a constant is the constant iff the
  // eight weights sum to one
  for (int l = 0; l < cfg.levels; ++l)
    std::fill(enc.table(l).values.begin(), enc.table(l).values.end(), 3.25);
  Rng prng(6);
  std::vector<double> out(static_cast<size_t>(enc.feature_dim()));
  for (int i = 0; i < 200; ++i) {
    enc.encode(Vec3(prng.uniform(), prng.uniform(), prng.uniform()), double(cfg.levels), out);
    for (double v : out) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
  }
}

TEST_CASE("encode is deterministic") {
  GridConfig cfg = small_config();
  Rng rng(7);
  HashGridEncoder enc("t", cfg, rng);
  const Vec3 x(0.37, 0.21, 0.83);
  std::vector<double> a(static_cast<size_t>(enc.feature_dim())), b(static_cast<size_t>(enc.feature_dim()));
  enc.encode(x, 2.7, a);
  enc.encode(x, 2.7, b);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

namespace {
// keeps every level's fractional position away from cell faces so central
// differences never straddle a boundary
bool interior_everywhere(const HashGridEncoder& enc, const Vec3& x, double margin) {
  for (int l = 0; l < enc.levels(); ++l) {
    const int n = enc.resolutions()[size_t(l)];
    for (int d = 0; d < 3; ++d) {
      const double pos = x[d] * n;
      const double frac = pos - std::floor(pos);
      if (frac < margin || frac > 1.0 - margin) return false;
    }
  }
  return true;
}
}  // namespace

TEST_CASE("encode jacobian w.r.t. the query point matches central differences") {
  GridConfig cfg = small_config();
  Rng rng(8);
  HashGridEncoder enc("t", cfg, rng);
  const int fd = enc.feature_dim();
  Rng prng(9);
  int tested = 0;
  while (tested < 25) {
    const Vec3 x(prng.uniform(0.1, 0.9), prng.uniform(0.1, 0.9), prng.uniform(0.1, 0.9));
    if (!interior_everywhere(enc, x, 0.05)) continue;
    ++tested;
    std::vector<double> jac(static_cast<size_t>(fd) * 3);
    enc.encode_jacobian(x, 3.6, jac);
    const double h = 1e-6;
    for (int d = 0; d < 3; ++d) {
      Vec3 xp = x, xm = x;
      xp[d] += h;
      xm[d] -= h;
      std::vector<double> fp(static_cast<size_t>(fd)), fm(static_cast<size_t>(fd));
      enc.encode(xp, 3.6, fp);
      enc.encode(xm, 3.6, fm);
      for (int k = 0; k < fd; ++k) {
        const double num = (fp[size_t(k)] - fm[size_t(k)]) / (2 * h);
        CHECK(jac[size_t(k) * 3 + d] ==
              doctest::Approx(num).epsilon(1e-4).scale(std::max(1.0, std::abs(num))));
      }
    }
  }
}

TEST_CASE("encode tape node: gradients flow to tables and the query point") {
  GridConfig cfg = small_config();
  Rng rng(10);
  HashGridEncoder enc("t", cfg, rng);
  const Vec3 x(0.33, 0.57, 0.73);
  REQUIRE(interior_everywhere(enc, x, 0.01));
  const double alpha = 3.4;

  ad::Tape tape;
  ad::NodeRef xn = tape.constant3(x.x(), x.y(), x.z());
  ad::NodeRef feat = enc.encode_node(tape, xn, alpha);
  ad::NodeRef loss = tape.dot(feat, feat);

  for (int l = 0; l < cfg.levels; ++l) enc.table(l).zero_grad();
  tape.backward(loss);

  // table gradient: finite differences on one touched level
  auto fn = [&] {
    ad::Tape t;
    ad::NodeRef f = enc.encode_node(t, t.constant3(x.x(), x.y(), x.z()), alpha);
    return t.value(t.dot(f, f));
  };
  CHECK(ad::finite_difference_check(fn, enc.table(1), 1e-6) < 1e-6);

  // sparsity: at most 8 rows of each level receive gradient
  for (int l = 0; l < cfg.levels; ++l) {
    int touched = 0;
    const auto& g = enc.table(l).grad;
    for (size_t row = 0; row < g.size() / size_t(cfg.features); ++row) {
      for (int k = 0; k < cfg.features; ++k)
        if (g[row * size_t(cfg.features) + k] != 0.0) {
          ++touched;
          break;
        }
    }
    CHECK(touched <= 8);
  }

  // adjoint on x equals the analytic jacobian pullback
  std::vector<double> jac(static_cast<size_t>(enc.feature_dim()) * 3);
  enc.encode_jacobian(x, alpha, jac);
  auto fv = tape.values(feat);
  Vec3 expected = Vec3::Zero();
  for (int k = 0; k < enc.feature_dim(); ++k)
    for (int d = 0; d < 3; ++d) expected[d] += 2.0 * fv[size_t(k)] * jac[size_t(k) * 3 + d];
  auto gx = tape.adjoint(xn);
  for (int d = 0; d < 3; ++d) CHECK(gx[size_t(d)] == doctest::Approx(expected[d]).epsilon(1e-10));
}

TEST_CASE("window alpha = L reproduces the plain trilinear encoding bit-exactly") {
  GridConfig cfg = small_config();
  Rng rng(11);
  HashGridEncoder enc("t", cfg, rng);
  const int f = cfg.features;
  Rng prng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 x(prng.uniform(), prng.uniform(), prng.uniform());
    std::vector<double> out(static_cast<size_t>(enc.feature_dim()));
    enc.encode(x, double(cfg.levels), out);

    // independent un-windowed reference, same corner order
    for (int l = 0; l < cfg.levels; ++l) {
      const int n = enc.resolutions()[size_t(l)];
      int base[3];
      double frac[3];
      for (int d = 0; d < 3; ++d) {
        const double pos = std::clamp(x[d], 0.0, 1.0) * n;
        base[d] = std::min(int(pos), n - 1);
        frac[d] = pos - base[d];
      }
      for (int k = 0; k < f; ++k) {
        double acc = 0;
        for (int corner = 0; corner < 8; ++corner) {
          const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
          uint32_t row;
          if (enc.level_is_hashed(l)) {
            row = oracles::hash_bigint(uint64_t(base[0] + bx), uint64_t(base[1] + by),
                                       uint64_t(base[2] + bz), cfg.table_size);
          } else {
            row = (uint32_t(base[2] + bz) * uint32_t(n + 1) + uint32_t(base[1] + by)) *
                      uint32_t(n + 1) +
                  uint32_t(base[0] + bx);
          }
          const double w = (bx ? frac[0] : 1 - frac[0]) * (by ? frac[1] : 1 - frac[1]) *
                           (bz ? frac[2] : 1 - frac[2]);
          acc += w * enc.table(l).values[size_t(row) * f + k];
        }
        CHECK(out[size_t(l * f + k)] == acc);  // bit-exact
      }
    }
  }
}

TEST_CASE("points outside the box are clamped") {
  GridConfig cfg = small_config();
  Rng rng(13);
  HashGridEncoder enc("t", cfg, rng);
  std::vector<double> inside(static_cast<size_t>(enc.feature_dim())), outside(static_cast<size_t>(enc.feature_dim()));
  enc.encode(Vec3(1.0, 0.4, 0.0), 4.0, inside);
  enc.encode(Vec3(1.7, 0.4, -0.3), 4.0, outside);
  for (size_t i = 0; i < inside.size(); ++i) CHECK(inside[i] == outside[i]);
}
