#pragma once

#include <vector>

#include "posefield/autodiff.hpp"
#include "posefield/mesh.hpp"

namespace posefield {

struct RayHit {
  int face = -1;
  double t = 0.0;
  double b1 = 0.0, b2 = 0.0;  // barycentric weights of vertices 1 and 2
  bool hit() const { return face >= 0; }
};

// Moller-Trumbore against a single triangle; returns t < 0 on miss (rays
// parallel to the plane miss).
RayHit intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                          const Vec3& c, int face_id = 0);

// Median-split bounding volume hierarchy over a position snapshot
// (vertex + offset at build time). Immutable once built.
class Bvh {
 public:
  Bvh() = default;
  explicit Bvh(const TriangleMesh& mesh);

  RayHit intersect(const Vec3& origin, const Vec3& dir) const;
  bool empty() const { return nodes_.empty(); }

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf triangle range in order_
  };
  int build(int begin, int end, std::vector<Vec3>& centroids, int depth);

  std::vector<Node> nodes_;
  std::vector<int> order_;
  std::vector<Vec3> va_, vb_, vc_;  // triangle vertices by mesh face id
};

// Differentiable intersection of a ray with a known face: the barycentrics
// and depth follow the Moller-Trumbore algebra built from tape primitives,
// so gradients flow to the three vertex offsets. offsets_node must be
// tape.param(mesh.offsets).
struct HitNodes {
  ad::NodeRef point;  // 3
  ad::NodeRef t;      // 1
  ad::NodeRef b1, b2;
};
HitNodes ray_hit_nodes(ad::Tape& tape, ad::NodeRef offsets_node, const TriangleMesh& mesh,
                       int face, const Vec3& origin, const Vec3& dir);

}  // namespace posefield
