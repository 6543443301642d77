#include "posefield/renderer.hpp"

#include <cmath>
#include <thread>

#include "posefield/check.hpp"

namespace posefield {

Vec3 pixel_dir_cam(const Camera& cam, double px, double py) {
  PF_CHECK_MSG(cam.focal > 0, "camera focal must be positive");
  const Vec3 d((px + 0.5 - cam.cx) / cam.focal, -(py + 0.5 - cam.cy) / cam.focal, -1.0);
  return d.normalized();
}

Ray pixel_ray(const Camera& cam, double px, double py) {
  const Mat4 t = refined_pose(cam.pose);
  Ray ray;
  ray.origin = t.topRightCorner<3, 1>();
  ray.dir = t.topLeftCorner<3, 3>() * pixel_dir_cam(cam, px, py);
  return ray;
}

RayBatch generate_rays(const Camera& cam, std::span<const int> pixel_ids, double near,
                       double far) {
  PF_CHECK_MSG(near < far, "generate_rays: near must be < far");
  RayBatch batch;
  batch.near = near;
  batch.far = far;
  const Mat4 t = refined_pose(cam.pose);
  const Mat3 rot = t.topLeftCorner<3, 3>();
  const Vec3 origin = t.topRightCorner<3, 1>();
  for (int id : pixel_ids) {
    PF_CHECK_MSG(id >= 0 && id < cam.width * cam.height, "generate_rays: pixel id out of bounds");
    const int px = id % cam.width;
    const int py = id / cam.width;
    batch.origins.push_back(origin);
    batch.dirs.push_back(rot * pixel_dir_cam(cam, px, py));
    batch.pixel_ids.push_back(id);
  }
  return batch;
}

RaySamples sample_ray(const Ray& ray, double near, double far, int n_samples,
                      const OccupancyGrid* grid, bool jitter, Rng& rng) {
  PF_CHECK_MSG(n_samples >= 2, "sample_ray: need at least 2 samples");
  PF_CHECK_MSG(near < far, "sample_ray: near must be < far");
  RaySamples out;
  const double width = (far - near) / n_samples;
  for (int i = 0; i < n_samples; ++i) {
    const double u = jitter ? rng.uniform() : 0.5;
    const double t = near + (i + u) * width;
    if (grid && !grid->occupied(ray.origin + t * ray.dir)) continue;
    out.t.push_back(t);
  }
  if (!out.t.empty()) out.t_close = std::min(far, out.t.back() + width);
  return out;
}

CompositeResult composite(std::span<const double> alphas, std::span<const Vec3> colors,
                          std::span<const double> t) {
  PF_CHECK_MSG(alphas.size() == colors.size() && alphas.size() == t.size(),
               "composite: length mismatch");
  CompositeResult out;
  out.weights.reserve(alphas.size());
  double transmittance = 1.0;
  double depth_acc = 0.0;
  for (size_t i = 0; i < alphas.size(); ++i) {
    PF_CHECK_MSG(alphas[i] >= 0.0 && alphas[i] <= 1.0, "composite: alpha outside [0,1]");
    const double w = transmittance * alphas[i];
    out.weights.push_back(w);
    out.color += w * colors[i];
    depth_acc += w * t[i];
    out.acc += w;
    transmittance *= (1.0 - alphas[i]);
  }
  out.depth = depth_acc / std::max(out.acc, 1e-8);
  return out;
}

RayShade shade_ray(FieldModel& model, const Ray& ray, const RaySamples& samples, double alpha) {
  RayShade out;
  if (samples.empty()) return out;
  const int n = int(samples.t.size());
  const double sharp = model.sharpness();
  const double eps = model.config().alpha_eps;

  std::vector<double> sdf(static_cast<size_t>(n) + 1);
  for (int i = 0; i < n; ++i) sdf[size_t(i)] = model.sdf(ray.origin + samples.t[size_t(i)] * ray.dir, alpha);
  sdf[size_t(n)] = model.sdf(ray.origin + samples.t_close * ray.dir, alpha);

  std::vector<double> alphas(static_cast<size_t>(n));
  std::vector<Vec3> colors(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    alphas[size_t(i)] = sdf_to_alpha(sdf[size_t(i)], sdf[size_t(i) + 1], sharp, eps);
    const Vec3 x = ray.origin + samples.t[size_t(i)] * ray.dir;
    colors[size_t(i)] = model.appearance(x, ray.dir, alpha).color;
  }
  const CompositeResult comp = composite(alphas, colors, samples.t);
  out.color = comp.color;
  out.depth = comp.depth;
  out.acc = comp.acc;
  return out;
}

RenderResult render_image(FieldModel& model, const Camera& cam, const RenderOptions& opts,
                          const OccupancyGrid* grid) {
  RenderResult res;
  res.rgb = Image(cam.width, cam.height, 3);
  res.depth_preview = Image(cam.width, cam.height, 1);
  res.depth.assign(size_t(cam.width) * size_t(cam.height), 0.0f);
  res.acc.assign(size_t(cam.width) * size_t(cam.height), 0.0f);

  const Mat4 t = refined_pose(cam.pose);
  const Mat3 rot = t.topLeftCorner<3, 3>();
  const Vec3 origin = t.topRightCorner<3, 1>();

  auto render_rows = [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const size_t pix = size_t(y) * size_t(cam.width) + size_t(x);
        Ray ray{origin, rot * pixel_dir_cam(cam, x, y)};
        Rng rng = item_rng(opts.seed, pix);
        const RaySamples samples =
            sample_ray(ray, opts.near, opts.far, opts.n_samples, grid, opts.jitter, rng);
        const RayShade shade = shade_ray(model, ray, samples, opts.alpha);
        const Vec3 rgb = shade.color + (1.0 - shade.acc) * opts.background;
        for (int c = 0; c < 3; ++c)
          res.rgb.at(x, y, c) = float(std::clamp(rgb[c], 0.0, 1.0));
        res.depth[pix] = shade.acc > 1e-4 ? float(shade.depth) : 0.0f;
        res.acc[pix] = float(shade.acc);
      }
    }
  };

  const int threads = std::max(1, opts.threads);
  if (threads == 1) {
    render_rows(0, cam.height);
  } else {
    std::vector<std::thread> pool;
    const int rows = (cam.height + threads - 1) / threads;
    for (int k = 0; k < threads; ++k) {
      const int y0 = k * rows, y1 = std::min(cam.height, (k + 1) * rows);
      if (y0 < y1) pool.emplace_back(render_rows, y0, y1);
    }
    for (auto& th : pool) th.join();
  }

  float dmax = 0;
  for (float d : res.depth) dmax = std::max(dmax, d);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      res.depth_preview.at(x, y, 0) =
          dmax > 0 ? res.depth[size_t(y) * size_t(cam.width) + size_t(x)] / dmax : 0.0f;
  return res;
}

}  // namespace posefield
