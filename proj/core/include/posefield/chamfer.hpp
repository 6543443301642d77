#pragma once

#include <span>
#include <vector>

#include "posefield/lie.hpp"
#include "posefield/mesh.hpp"

namespace posefield {

// Static kd-tree for nearest-neighbor queries over a point set.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);
  double nearest_sq(const Vec3& query) const;
  size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;  // -1: leaf
    double split = 0;
    int left = -1, right = -1;
    int begin = 0, end = 0;
  };
  int build(int begin, int end, int depth);
  void query(int node, const Vec3& q, double& best) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
};

// Bidirectional chamfer distance with the squared convention:
// 0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2).
double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b);

// Area-weighted surface samples (positions include offsets).
std::vector<Vec3> sample_mesh_surface(const TriangleMesh& mesh, int count, uint64_t seed);

}  // namespace posefield
