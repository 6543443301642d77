#pragma once

#include <vector>

#include "posefield/field.hpp"
#include "posefield/mesh.hpp"
#include "posefield/renderer.hpp"
#include "posefield/scene.hpp"

namespace posefield {

struct RefineConfig {
  RefineWeights weights;
  int iters_per_round = 200;
  int rounds = 3;
  int rays_per_iter = 1024;
  double lr = 2e-3;
  double subdivide_quantile = 0.10;  // top error faces split
  double decimate_quantile = 0.30;   // bottom error faces collapsed
  bool offset_laplacian = false;     // alternative smoothness on offsets only
  bool adapt_topology = true;
  uint64_t seed = 0;
  Vec3 background = Vec3(1, 1, 1);
  int threads = 1;
};

struct RefineStats {
  std::vector<double> loss_per_iter;
  int subdivided = 0;
  int decimated = 0;
  bool reverted = false;
};

// Photometric mesh refinement: rays from the training views hit the mesh
// through a BVH, colors come from the field's appearance networks at the
// hit points, and gradients flow into per-vertex offsets. Every round the
// highest-error faces subdivide and the lowest-error faces collapse.
// Returns the mesh with offsets folded into the vertices.
TriangleMesh refine_mesh(TriangleMesh mesh, const Scene& scene, FieldModel& model,
                         const std::vector<Camera>& cameras, const RefineConfig& cfg,
                         RefineStats* stats = nullptr);

}  // namespace posefield
