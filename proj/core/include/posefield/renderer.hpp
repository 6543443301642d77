#pragma once

#include <optional>
#include <span>
#include <vector>

#include "posefield/field.hpp"
#include "posefield/image.hpp"
#include "posefield/lie.hpp"
#include "posefield/occupancy.hpp"
#include "posefield/rng.hpp"

namespace posefield {

// Pinhole camera; pose is camera-to-world, looking down -z with x right
// and y up (the transforms-JSON convention).
struct Camera {
  double focal = 100.0;
  double cx = 50.0, cy = 50.0;
  int width = 100, height = 100;
  CameraPose pose;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();
};

struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> dirs;  // unit length
  std::vector<int> pixel_ids;
  double near = 0.0, far = 1.0;
};

// Unit direction in the camera frame through pixel center (px+0.5, py+0.5).
Vec3 pixel_dir_cam(const Camera& cam, double px, double py);

// Ray through the refined pose (plain, non-differentiable path).
Ray pixel_ray(const Camera& cam, double px, double py);

RayBatch generate_rays(const Camera& cam, std::span<const int> pixel_ids, double near, double far);

// Stratified depths over [near, far]; strata whose sample point falls in an
// unoccupied cell are dropped. t_close closes the last segment.
struct RaySamples {
  std::vector<double> t;
  double t_close = 0.0;
  bool empty() const { return t.empty(); }
};
RaySamples sample_ray(const Ray& ray, double near, double far, int n_samples,
                      const OccupancyGrid* grid, bool jitter, Rng& rng);

// Front-to-back compositing with product transmittance.
struct CompositeResult {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double acc = 0.0;  // accumulated opacity
  std::vector<double> weights;
};
CompositeResult composite(std::span<const double> alphas, std::span<const Vec3> colors,
                          std::span<const double> t);

struct RenderOptions {
  int n_samples = 64;
  double near = 0.1, far = 2.0;
  Vec3 background = Vec3(1, 1, 1);
  double alpha = 1e9;  // window progress; defaults to fully open
  uint64_t seed = 0;
  bool jitter = false;
  int threads = 1;
};

struct RenderResult {
  Image rgb;
  Image depth_preview;       // normalized for quick viewing
  std::vector<float> depth;  // raw termination depths (0 where nothing hit)
  std::vector<float> acc;
};

// Full-frame render through the camera's refined pose.
RenderResult render_image(FieldModel& model, const Camera& cam, const RenderOptions& opts,
                          const OccupancyGrid* grid = nullptr);

// One ray through the SDF field: N+1 sdf evaluations at segment ends,
// appearance at segment starts. Shared by render_image and the trainer's
// plain-value paths.
struct RayShade {
  Vec3 color = Vec3::Zero();  // background not applied
  double depth = 0.0;
  double acc = 0.0;
};
RayShade shade_ray(FieldModel& model, const Ray& ray, const RaySamples& samples, double alpha);

}  // namespace posefield
