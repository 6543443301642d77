#include "posefield/refine.hpp"

#include <algorithm>
#include <cmath>

#include "posefield/check.hpp"
#include "posefield/optim.hpp"
#include "posefield/raymesh.hpp"
#include "posefield/rng.hpp"

namespace posefield {

namespace {

struct FaceError {
  double sum = 0;
  int count = 0;
  double mean() const { return count > 0 ? sum / count : -1.0; }
};

}  // namespace

TriangleMesh refine_mesh(TriangleMesh mesh, const Scene& scene, FieldModel& model,
                         const std::vector<Camera>& cameras, const RefineConfig& cfg,
                         RefineStats* stats) {
  PF_CHECK_MSG(!mesh.faces.empty(), "refine_mesh: empty mesh");
  PF_CHECK_MSG(cameras.size() == scene.cameras.size(), "refine_mesh: camera count mismatch");
  const double alpha = model.geo_encoder().levels();
  const auto train = scene.train_indices();
  PF_CHECK_MSG(!train.empty(), "refine_mesh: no train views");

  mesh.reset_offsets();
  mesh.build_adjacency();
  Rng rng(cfg.seed);

  for (int round = 0; round < cfg.rounds; ++round) {
    const TriangleMesh snapshot = mesh;  // revert point for non-finite rounds
    std::vector<FaceError> face_err(mesh.faces.size());
    AdamW opt({&mesh.offsets}, {});
    bool blew_up = false;

    for (int iter = 0; iter < cfg.iters_per_round; ++iter) {
      const Bvh bvh(mesh);
      ad::Tape tape;
      ad::NodeRef offsets_node = tape.param(mesh.offsets);
      std::vector<ad::NodeRef> ray_sq;
      double photo_const = 0;  // misses contribute constants
      int n_rays = 0;

      for (int r = 0; r < cfg.rays_per_iter; ++r) {
        const int view = train[size_t(rng.below(train.size()))];
        const Camera& cam = cameras[size_t(view)];
        const Image& img = scene.images[size_t(view)];
        const int px = int(rng.below(uint64_t(cam.width)));
        const int py = int(rng.below(uint64_t(cam.height)));
        const Vec3 target(img.at(px, py, 0), img.at(px, py, 1), img.at(px, py, 2));
        const Ray ray = pixel_ray(cam, px, py);
        ++n_rays;

        const RayHit hit = bvh.intersect(ray.origin, ray.dir);
        if (!hit.hit()) {
          photo_const += (cfg.background - target).squaredNorm();
          continue;
        }
        const HitNodes hn = ray_hit_nodes(tape, offsets_node, mesh, hit.face, ray.origin, ray.dir);
        const AppearanceNodes app = model.appearance_node(tape, hn.point, ray.dir, alpha);
        ad::NodeRef err =
            tape.sub(app.color, tape.constant3(target.x(), target.y(), target.z()));
        ad::NodeRef sq = tape.dot(err, err);
        ray_sq.push_back(sq);
        auto& fe = face_err[size_t(hit.face)];
        fe.sum += tape.value(sq);
        fe.count += 1;
      }

      double photo = photo_const;
      if (!ray_sq.empty()) {
        ad::NodeRef photo_sum = tape.sum(tape.concat(ray_sq));
        photo += tape.value(photo_sum);
        mesh.offsets.zero_grad();
        tape.backward(photo_sum, cfg.weights.photometric / n_rays);
      } else {
        mesh.offsets.zero_grad();
      }
      photo /= std::max(1, n_rays);

      const double smooth =
          cfg.offset_laplacian ? smooth_loss_offset_laplacian(mesh) : smooth_loss(mesh);
      if (cfg.offset_laplacian)
        smooth_loss_offset_laplacian_grad(mesh, cfg.weights.smooth);
      else
        smooth_loss_grad(mesh, cfg.weights.smooth);
      const double off = offset_loss(mesh);
      offset_loss_grad(mesh, cfg.weights.offset);

      double total;
      try {
        total = refine_total(photo, smooth, off, cfg.weights);
      } catch (const NumericalError&) {
        blew_up = true;
        break;
      }
      if (stats) stats->loss_per_iter.push_back(total);
      opt.step(cfg.lr);
    }

    if (blew_up) {
      mesh = snapshot;
      if (stats) stats->reverted = true;
      break;
    }

    mesh.fold_offsets();
    if (!cfg.adapt_topology || round + 1 == cfg.rounds) continue;

    // subdivide the top error quantile, collapse the bottom quantile
    std::vector<int> scored;
    for (size_t f = 0; f < face_err.size(); ++f)
      if (face_err[f].count > 0) scored.push_back(int(f));
    if (scored.size() < 16) continue;
    std::sort(scored.begin(), scored.end(), [&](int a, int b) {
      return face_err[size_t(a)].mean() < face_err[size_t(b)].mean();
    });
    const int n_decimate = int(cfg.decimate_quantile * double(scored.size()));
    const int n_subdiv = int(cfg.subdivide_quantile * double(scored.size()));
    std::vector<int> worst(scored.end() - n_subdiv, scored.end());
    std::vector<int> best(scored.begin(), scored.begin() + n_decimate);

    // subdividing renumbers faces; do it first, then map collapse targets
    // by geometric identity (face sets are disjoint so centers survive)
    std::vector<Vec3> collapse_centers;
    for (int f : best)
      collapse_centers.push_back((mesh.position(mesh.faces[size_t(f)][0]) +
                                  mesh.position(mesh.faces[size_t(f)][1]) +
                                  mesh.position(mesh.faces[size_t(f)][2])) /
                                 3.0);
    const int added = subdivide_faces(mesh, worst);
    if (stats) stats->subdivided += added;

    std::vector<int> collapse_ids;
    if (!collapse_centers.empty()) {
      for (int f = 0; f < mesh.face_count(); ++f) {
        const Vec3 c = (mesh.position(mesh.faces[size_t(f)][0]) +
                        mesh.position(mesh.faces[size_t(f)][1]) +
                        mesh.position(mesh.faces[size_t(f)][2])) /
                       3.0;
        for (const Vec3& target : collapse_centers)
          if ((c - target).squaredNorm() < 1e-20) {
            collapse_ids.push_back(f);
            break;
          }
      }
      const int removed = collapse_faces(mesh, collapse_ids);
      if (stats) stats->decimated += removed;
    }
    mesh.reset_offsets();
    mesh.build_adjacency();
  }

  mesh.fold_offsets();
  return mesh;
}

}  // namespace posefield
