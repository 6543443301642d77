#include "posefield/scene.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "posefield/check.hpp"
#include "posefield/rng.hpp"

namespace posefield {

namespace fs = std::filesystem;
using nlohmann::json;

double ShapeSpec::sdf(const Vec3& p) const {
  if (kind == "sphere") return (p - center).norm() - radius;
  if (kind == "two-spheres")
    return std::min((p - center).norm() - radius, (p - center2).norm() - radius2);
  if (kind == "cube") {
    const Vec3 q = (p - center).cwiseAbs() - Vec3(radius, radius, radius);
    const Vec3 qp = q.cwiseMax(0.0);
    return qp.norm() + std::min(q.maxCoeff(), 0.0);
  }
  throw StructuralError("ShapeSpec: unknown kind " + kind);
}

Vec3 ShapeSpec::normal(const Vec3& p) const {
  if (kind == "sphere") return (p - center).normalized();
  if (kind == "two-spheres") {
    const double d1 = (p - center).norm() - radius;
    const double d2 = (p - center2).norm() - radius2;
    return d1 <= d2 ? (p - center).normalized() : (p - center2).normalized();
  }
  if (kind == "cube") {
    const Vec3 d = p - center;
    int axis = 0;
    d.cwiseAbs().maxCoeff(&axis);
    Vec3 n = Vec3::Zero();
    n[axis] = d[axis] >= 0 ? 1.0 : -1.0;
    return n;
  }
  throw StructuralError("ShapeSpec: unknown kind " + kind);
}

namespace {
double ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - r * r);
  if (disc < 0) return -1.0;
  const double s = std::sqrt(disc);
  const double t0 = -b - s;
  if (t0 > 1e-9) return t0;
  const double t1 = -b + s;
  return t1 > 1e-9 ? t1 : -1.0;
}

double ray_box(const Vec3& o, const Vec3& d, const Vec3& c, double half) {
  double tmin = -1e300, tmax = 1e300;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (std::abs(o[a] - c[a]) > half) return -1.0;
      continue;
    }
    double t0 = (c[a] - half - o[a]) / d[a];
    double t1 = (c[a] + half - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
  }
  if (tmax < tmin) return -1.0;
  if (tmin > 1e-9) return tmin;
  return tmax > 1e-9 ? tmax : -1.0;
}
}  // namespace

double ShapeSpec::raycast(const Vec3& o, const Vec3& d) const {
  if (kind == "sphere") return ray_sphere(o, d, center, radius);
  if (kind == "cube") return ray_box(o, d, center, radius);
  if (kind == "two-spheres") {
    const double t1 = ray_sphere(o, d, center, radius);
    const double t2 = ray_sphere(o, d, center2, radius2);
    if (t1 < 0) return t2;
    if (t2 < 0) return t1;
    return std::min(t1, t2);
  }
  throw StructuralError("ShapeSpec: unknown kind " + kind);
}

std::vector<int> Scene::train_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < is_train.size(); ++i)
    if (is_train[i]) out.push_back(int(i));
  return out;
}

std::vector<int> Scene::test_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < is_train.size(); ++i)
    if (!is_train[i]) out.push_back(int(i));
  return out;
}

namespace {

struct RawFrame {
  std::string file_path;
  Mat4 pose = Mat4::Identity();  // world units, camera-to-world
};

struct RawSplit {
  double camera_angle_x = 0;
  std::vector<RawFrame> frames;
};

RawSplit parse_transforms(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw StructuralError("load_scene: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw StructuralError("load_scene: invalid JSON in " + path + ": " + e.what());
  }
  RawSplit split;
  PF_CHECK_MSG(j.contains("camera_angle_x"), "load_scene: missing camera_angle_x in " << path);
  split.camera_angle_x = j["camera_angle_x"].get<double>();
  PF_CHECK_MSG(j.contains("frames") && j["frames"].is_array(),
               "load_scene: missing frames array in " << path);
  for (const auto& f : j["frames"]) {
    RawFrame frame;
    PF_CHECK_MSG(f.contains("file_path"), "load_scene: frame without file_path in " << path);
    frame.file_path = f["file_path"].get<std::string>();
    PF_CHECK_MSG(f.contains("transform_matrix"),
                 "load_scene: frame " << frame.file_path << " missing transform_matrix");
    const auto& m = f["transform_matrix"];
    PF_CHECK_MSG(m.is_array() && m.size() == 4,
                 "load_scene: frame " << frame.file_path << " transform_matrix must be 4x4");
    for (int r = 0; r < 4; ++r) {
      PF_CHECK_MSG(m[size_t(r)].is_array() && m[size_t(r)].size() == 4,
                   "load_scene: frame " << frame.file_path << " transform_matrix must be 4x4");
      for (int c = 0; c < 4; ++c) frame.pose(r, c) = m[size_t(r)][size_t(c)].get<double>();
    }
    split.frames.push_back(std::move(frame));
  }
  return split;
}

std::string image_path(const std::string& dir, const std::string& file_path) {
  std::string rel = file_path;
  if (rel.rfind("./", 0) == 0) rel = rel.substr(2);
  if (rel.size() < 4 || rel.substr(rel.size() - 4) != ".png") rel += ".png";
  return dir + "/" + rel;
}

}  // namespace

Scene load_scene(const std::string& dir) {
  Scene scene;
  scene.dir = dir;

  const std::string train_path = dir + "/transforms_train.json";
  PF_CHECK_MSG(fs::exists(train_path), "load_scene: " << train_path << " not found");
  const RawSplit train = parse_transforms(train_path);
  RawSplit test;
  const std::string test_path = dir + "/transforms_test.json";
  const bool has_test = fs::exists(test_path);
  if (has_test) test = parse_transforms(test_path);

  // optional meta.json: near/far, target sphere, analytic shape
  double near_w = -1, far_w = -1;
  bool have_sphere = false;
  Vec3 sphere_center = Vec3::Zero();
  double sphere_radius = -1;
  const std::string meta_path = dir + "/meta.json";
  if (fs::exists(meta_path)) {
    std::ifstream is(meta_path);
    json j;
    try {
      is >> j;
    } catch (const std::exception& e) {
      throw StructuralError("load_scene: invalid JSON in meta.json: " + std::string(e.what()));
    }
    if (j.contains("near")) near_w = j["near"].get<double>();
    if (j.contains("far")) far_w = j["far"].get<double>();
    if (j.contains("scene_sphere")) {
      have_sphere = true;
      for (int d = 0; d < 3; ++d)
        sphere_center[d] = j["scene_sphere"]["center"].at(size_t(d)).get<double>();
      sphere_radius = j["scene_sphere"]["radius"].get<double>();
    }
    if (j.contains("shape")) {
      ShapeSpec shape;
      const auto& s = j["shape"];
      shape.kind = s.at("kind").get<std::string>();
      for (int d = 0; d < 3; ++d) shape.center[d] = s.at("center").at(size_t(d)).get<double>();
      shape.radius = s.at("radius").get<double>();
      if (s.contains("center2"))
        for (int d = 0; d < 3; ++d) shape.center2[d] = s["center2"].at(size_t(d)).get<double>();
      if (s.contains("radius2")) shape.radius2 = s["radius2"].get<double>();
      scene.shape = shape;
    }
  }

  auto add_split = [&](const RawSplit& split, bool is_train_split) {
    for (const RawFrame& frame : split.frames) {
      Image img = read_png(image_path(dir, frame.file_path));
      Camera cam;
      cam.width = img.width;
      cam.height = img.height;
      cam.focal = 0.5 * img.width / std::tan(split.camera_angle_x / 2.0);
      cam.cx = img.width / 2.0;
      cam.cy = img.height / 2.0;
      cam.pose.rotation = frame.pose.topLeftCorner<3, 3>();
      cam.pose.translation = frame.pose.topRightCorner<3, 1>();
      const double ortho = (cam.pose.rotation.transpose() * cam.pose.rotation -
                            Mat3::Identity())
                               .cwiseAbs()
                               .maxCoeff();
      PF_CHECK_MSG(ortho < 1e-6,
                   "load_scene: frame " << frame.file_path << " rotation is not orthonormal");
      scene.cameras.push_back(std::move(cam));
      scene.images.push_back(std::move(img));
      scene.is_train.push_back(is_train_split ? 1 : 0);
      scene.names.push_back(frame.file_path);
    }
  };
  add_split(train, true);
  if (has_test) add_split(test, false);
  PF_CHECK_MSG(!scene.cameras.empty(), "load_scene: no frames in " << dir);
  for (size_t i = 1; i < scene.images.size(); ++i)
    PF_CHECK_MSG(scene.images[i].width == scene.images[0].width &&
                     scene.images[i].height == scene.images[0].height,
                 "load_scene: image size mismatch at frame " << scene.names[i]);

  // scene box: recorded target sphere, else fit from the camera bundle
  if (!have_sphere) {
    Mat3 lhs = Mat3::Zero();
    Vec3 rhs = Vec3::Zero();
    std::vector<double> dists;
    for (const Camera& cam : scene.cameras) {
      const Vec3 axis = cam.pose.rotation * Vec3(0, 0, -1);
      const Mat3 proj = Mat3::Identity() - axis * axis.transpose();
      lhs += proj;
      rhs += proj * cam.pose.translation;
    }
    sphere_center = lhs.ldlt().solve(rhs);
    for (const Camera& cam : scene.cameras)
      dists.push_back((cam.pose.translation - sphere_center).norm());
    std::nth_element(dists.begin(), dists.begin() + long(dists.size() / 2), dists.end());
    sphere_radius = 0.4 * dists[dists.size() / 2];
  }
  scene.box.center = sphere_center;
  scene.box.radius = sphere_radius;

  const double s = scene.box.scale();
  if (near_w < 0 || far_w < 0) {
    std::vector<double> dists;
    for (const Camera& cam : scene.cameras)
      dists.push_back((cam.pose.translation - sphere_center).norm());
    std::nth_element(dists.begin(), dists.begin() + long(dists.size() / 2), dists.end());
    const double med = dists[dists.size() / 2];
    near_w = std::max(0.05 * med, med - 2.0 * sphere_radius);
    far_w = med + 2.0 * sphere_radius;
  }
  scene.near = near_w * s;
  scene.far = far_w * s;

  for (Camera& cam : scene.cameras) {
    cam.pose.translation = scene.box.to_unit(cam.pose.translation);
    Mat4 gt = Mat4::Identity();
    gt.topLeftCorner<3, 3>() = cam.pose.rotation;
    gt.topRightCorner<3, 1>() = cam.pose.translation;
    scene.gt_poses.push_back(gt);
  }
  return scene;
}

namespace {
json pose_to_json(const Mat4& m) {
  json rows = json::array();
  for (int r = 0; r < 4; ++r) {
    json row = json::array();
    for (int c = 0; c < 4; ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}
}  // namespace

void write_scene(const Scene& scene, const std::string& dir) {
  fs::create_directories(dir + "/train");
  fs::create_directories(dir + "/test");

  json train, test;
  int n_train = 0, n_test = 0;
  for (size_t i = 0; i < scene.cameras.size(); ++i) {
    const Camera& cam = scene.cameras[i];
    const bool tr = scene.is_train[i] != 0;
    const std::string name = tr ? "./train/r_" + std::to_string(n_train++)
                                : "./test/r_" + std::to_string(n_test++);
    Mat4 world = scene.gt_poses[i];
    world.topRightCorner<3, 1>() = scene.box.to_world(world.topRightCorner<3, 1>());
    json frame;
    frame["file_path"] = name;
    frame["transform_matrix"] = pose_to_json(world);
    (tr ? train : test)["frames"].push_back(frame);
    const double angle = 2.0 * std::atan(0.5 * cam.width / cam.focal);
    (tr ? train : test)["camera_angle_x"] = angle;
    write_png(image_path(dir, name), scene.images[i]);
  }
  {
    std::ofstream os(dir + "/transforms_train.json");
    os << train.dump(2) << "\n";
  }
  if (n_test > 0) {
    std::ofstream os(dir + "/transforms_test.json");
    os << test.dump(2) << "\n";
  }

  json meta;
  meta["near"] = scene.near / scene.box.scale();
  meta["far"] = scene.far / scene.box.scale();
  meta["scene_sphere"] = {{"center", {scene.box.center.x(), scene.box.center.y(),
                                      scene.box.center.z()}},
                          {"radius", scene.box.radius}};
  if (scene.shape) {
    const ShapeSpec& sh = *scene.shape;
    meta["shape"] = {{"kind", sh.kind},
                     {"center", {sh.center.x(), sh.center.y(), sh.center.z()}},
                     {"radius", sh.radius},
                     {"center2", {sh.center2.x(), sh.center2.y(), sh.center2.z()}},
                     {"radius2", sh.radius2}};
  }
  std::ofstream os(dir + "/meta.json");
  os << meta.dump(2) << "\n";
}

std::vector<Vec3> sample_shape_surface(const ShapeSpec& shape, int count, uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(size_t(count));
  auto sphere_point = [&](const Vec3& c, double r) -> Vec3 {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    while (d.norm() < 1e-9) d = Vec3(rng.normal(), rng.normal(), rng.normal());
    return c + r * d.normalized();
  };
  if (shape.kind == "sphere") {
    for (int i = 0; i < count; ++i) out.push_back(sphere_point(shape.center, shape.radius));
  } else if (shape.kind == "two-spheres") {
    const double a1 = shape.radius * shape.radius;
    const double a2 = shape.radius2 * shape.radius2;
    while (int(out.size()) < count) {
      const bool first = rng.uniform() < a1 / (a1 + a2);
      const Vec3 p = first ? sphere_point(shape.center, shape.radius)
                           : sphere_point(shape.center2, shape.radius2);
      if (shape.sdf(p) > -1e-9) out.push_back(p);
    }
  } else if (shape.kind == "cube") {
    for (int i = 0; i < count; ++i) {
      const int face = int(rng.below(6));
      const int axis = face / 2;
      const double sign = face % 2 == 0 ? 1.0 : -1.0;
      Vec3 p;
      p[axis] = sign * shape.radius;
      p[(axis + 1) % 3] = rng.uniform(-shape.radius, shape.radius);
      p[(axis + 2) % 3] = rng.uniform(-shape.radius, shape.radius);
      out.push_back(shape.center + p);
    }
  } else {
    throw StructuralError("sample_shape_surface: unknown kind " + shape.kind);
  }
  return out;
}

}  // namespace posefield
