#include <cmath>

#include "posefield/check.hpp"
#include "posefield/scene.hpp"

namespace posefield {

namespace {

Mat3 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 zc = (eye - target).normalized();  // camera looks down -z
  Vec3 xc = up.cross(zc);
  if (xc.norm() < 1e-9) xc = Vec3(1, 0, 0);
  xc.normalize();
  const Vec3 yc = zc.cross(xc);
  Mat3 r;
  r.col(0) = xc;
  r.col(1) = yc;
  r.col(2) = zc;
  return r;
}

Vec3 shade(const SyntheticSpec& spec, const ShapeSpec& shape, const Mat3& world_rot_inv,
           const Vec3& p, const Vec3& n, const Vec3& light) {
  // albedo in the shape's own frame so rigid placements render identically
  const Vec3 s = world_rot_inv * (p - shape.center);
  Vec3 albedo(0.80, 0.32, 0.25);
  switch (spec.albedo) {
    case SyntheticSpec::Albedo::kSolid:
      break;
    case SyntheticSpec::Albedo::kTwoTone:
      albedo = s.z() > 0 ? Vec3(0.78, 0.30, 0.22) : Vec3(0.20, 0.38, 0.80);
      break;
    case SyntheticSpec::Albedo::kChecker: {
      const double k = 2.0 / std::max(spec.shape_radius, 1e-9);
      const int parity = (int(std::floor(s.x() * k + 100)) + int(std::floor(s.y() * k + 100)) +
                          int(std::floor(s.z() * k + 100))) % 2;
      albedo = parity == 0 ? Vec3(0.85, 0.82, 0.20) : Vec3(0.25, 0.25, 0.30);
      break;
    }
  }
  const double lambert = 0.25 + 0.75 * std::max(0.0, n.dot(light));
  return albedo * lambert;
}

}  // namespace

void make_synthetic_scene(const SyntheticSpec& spec, const std::string& out_dir) {
  PF_CHECK_MSG(spec.n_views >= 2, "make_synthetic_scene: need at least 2 views");
  PF_CHECK_MSG(spec.image_size >= 16, "make_synthetic_scene: image_size must be >= 16");

  ShapeSpec shape;
  double bound = spec.shape_radius;
  switch (spec.shape) {
    case SyntheticSpec::Shape::kSphere:
      shape.kind = "sphere";
      shape.radius = spec.shape_radius;
      break;
    case SyntheticSpec::Shape::kCube:
      shape.kind = "cube";
      shape.radius = spec.shape_radius;
      bound = spec.shape_radius * std::sqrt(3.0);
      PF_CHECK_MSG(spec.world_rotation.isApprox(Mat3::Identity(), 1e-12),
                   "make_synthetic_scene: cube does not support a rotated placement");
      break;
    case SyntheticSpec::Shape::kTwoSpheres:
      shape.kind = "two-spheres";
      shape.radius = 0.72 * spec.shape_radius;
      shape.radius2 = 0.52 * spec.shape_radius;
      shape.center = spec.world_rotation * Vec3(-0.45 * spec.shape_radius, 0, 0);
      shape.center2 = spec.world_rotation * Vec3(0.62 * spec.shape_radius, 0, 0);
      bound = 1.2 * spec.shape_radius;
      break;
  }
  shape.center += spec.world_offset;
  shape.center2 += spec.world_offset;

  const Vec3 light = (spec.world_rotation * Vec3(1, 1, 1)).normalized();
  const Mat3 world_rot_inv = spec.world_rotation.transpose();

  Scene scene;
  scene.shape = shape;
  scene.box.center = spec.world_offset;
  scene.box.radius = bound;
  scene.near = (spec.ring_radius - 1.6 * bound) * scene.box.scale();
  scene.far = (spec.ring_radius + 1.6 * bound) * scene.box.scale();

  const double fov = 2.0 * std::atan(1.35 * bound / spec.ring_radius);
  const double focal = 0.5 * spec.image_size / std::tan(fov / 2.0);

  auto add_view = [&](double azimuth, double elevation, bool is_train) {
    const Vec3 eye_local(spec.ring_radius * std::cos(elevation) * std::cos(azimuth),
                         spec.ring_radius * std::cos(elevation) * std::sin(azimuth),
                         spec.ring_radius * std::sin(elevation));
    const Vec3 eye = spec.world_rotation * eye_local + spec.world_offset;
    const Mat3 rot = spec.world_rotation *
                     look_at(eye_local, Vec3::Zero(), Vec3(0, 0, 1));

    Camera cam;
    cam.width = cam.height = spec.image_size;
    cam.focal = focal;
    cam.cx = cam.cy = spec.image_size / 2.0;
    cam.pose.rotation = rot;
    cam.pose.translation = scene.box.to_unit(eye);

    Image img(spec.image_size, spec.image_size, 3);
    for (int py = 0; py < spec.image_size; ++py) {
      for (int px = 0; px < spec.image_size; ++px) {
        const Vec3 dir = rot * pixel_dir_cam(cam, px, py);
        const double t = shape.raycast(eye, dir);
        Vec3 color(1, 1, 1);
        if (t > 0) {
          const Vec3 p = eye + t * dir;
          color = shade(spec, shape, world_rot_inv, p, shape.normal(p), light);
        }
        for (int c = 0; c < 3; ++c) img.at(px, py, c) = float(std::clamp(color[c], 0.0, 1.0));
      }
    }

    Mat4 gt = Mat4::Identity();
    gt.topLeftCorner<3, 3>() = cam.pose.rotation;
    gt.topRightCorner<3, 1>() = cam.pose.translation;
    scene.cameras.push_back(std::move(cam));
    scene.gt_poses.push_back(gt);
    scene.images.push_back(std::move(img));
    scene.is_train.push_back(is_train ? 1 : 0);
    scene.names.push_back("");
  };

  const double elevations[3] = {12.0 * M_PI / 180, 26.0 * M_PI / 180, 40.0 * M_PI / 180};
  for (int i = 0; i < spec.n_views; ++i)
    add_view(2.0 * M_PI * i / spec.n_views, elevations[i % 3], true);
  for (int i = 0; i < spec.n_test; ++i)
    add_view(2.0 * M_PI * (i + 0.5) / spec.n_test, 20.0 * M_PI / 180, false);

  write_scene(scene, out_dir);
}

}  // namespace posefield
