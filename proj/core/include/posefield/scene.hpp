#pragma once

#include <optional>
#include <string>
#include <vector>

#include "posefield/image.hpp"
#include "posefield/renderer.hpp"

namespace posefield {

// Mapping between world coordinates and the unit encoding box: the scene's
// target sphere (center, radius) lands on the ball of radius 0.25 around
// (0.5, 0.5, 0.5), i.e. inside [0.25, 0.75]^3.
struct SceneBox {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;

  double scale() const { return 0.25 / radius; }
  Vec3 to_unit(const Vec3& world) const {
    return (world - center) * scale() + Vec3(0.5, 0.5, 0.5);
  }
  Vec3 to_world(const Vec3& unit) const {
    return (unit - Vec3(0.5, 0.5, 0.5)) / scale() + center;
  }
};

// Analytic ground-truth shape of a synthetic scene (world units); drives
// the chamfer and depth oracles.
struct ShapeSpec {
  std::string kind = "sphere";  // sphere | cube | two-spheres
  Vec3 center = Vec3::Zero();
  double radius = 1.0;  // sphere radius / cube half-extent
  Vec3 center2 = Vec3::Zero();
  double radius2 = 0.0;

  double sdf(const Vec3& world) const;
  Vec3 normal(const Vec3& world) const;
  // nearest surface hit along a ray, or a negative t on miss
  double raycast(const Vec3& origin, const Vec3& dir) const;
};

struct Scene {
  std::vector<Camera> cameras;  // poses in unit-box coordinates
  std::vector<Mat4> gt_poses;   // unit-box ground truth camera-to-world
  std::vector<Image> images;
  std::vector<uint8_t> is_train;
  std::vector<std::string> names;
  double near = 0.1, far = 2.0;  // unit-box units
  SceneBox box;
  std::optional<ShapeSpec> shape;
  std::string dir;

  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
};

// Reads transforms_train.json (and transforms_test.json when present) in
// the NeRF-synthetic layout, plus an optional meta.json carrying near/far,
// the target sphere and analytic shape parameters. Poses are normalized
// into the unit box on load.
Scene load_scene(const std::string& dir);

// Writes the scene back out in world units (denormalized), including
// meta.json; round-trips through load_scene.
void write_scene(const Scene& scene, const std::string& dir);

struct SyntheticSpec {
  enum class Shape { kSphere, kCube, kTwoSpheres };
  enum class Albedo { kSolid, kTwoTone, kChecker };
  Shape shape = Shape::kSphere;
  Albedo albedo = Albedo::kSolid;
  int n_views = 20;     // train views on the ring
  int n_test = 5;       // held-out views
  int image_size = 64;
  double ring_radius = 4.0;
  double shape_radius = 1.0;
  uint64_t seed = 0;
  // rigid placement of the whole setup (cameras, shape, light move
  // together); used by gauge-invariance checks
  Vec3 world_offset = Vec3::Zero();
  Mat3 world_rotation = Mat3::Identity();
};

// Exact Lambertian renders of the analytic shape from a camera ring,
// written to disk in the transforms layout above.
void make_synthetic_scene(const SyntheticSpec& spec, const std::string& out_dir);

// Uniform-ish surface samples of the analytic shape (world units).
std::vector<Vec3> sample_shape_surface(const ShapeSpec& shape, int count, uint64_t seed);

}  // namespace posefield
