#include "posefield/chamfer.hpp"

#include <algorithm>

#include "posefield/check.hpp"
#include "posefield/rng.hpp"

namespace posefield {

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  PF_CHECK_MSG(!points_.empty(), "KdTree: empty point set");
  nodes_.reserve(points_.size());
  build(0, int(points_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
  const int idx = int(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= 8) {
    nodes_[size_t(idx)].begin = begin;
    nodes_[size_t(idx)].end = end;
    return idx;
  }
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(points_.begin() + begin, points_.begin() + mid, points_.begin() + end,
                   [axis](const Vec3& a, const Vec3& b) { return a[axis] < b[axis]; });
  nodes_[size_t(idx)].axis = axis;
  nodes_[size_t(idx)].split = points_[size_t(mid)][axis];
  const int l = build(begin, mid, depth + 1);
  const int r = build(mid, end, depth + 1);
  nodes_[size_t(idx)].left = l;
  nodes_[size_t(idx)].right = r;
  return idx;
}

void KdTree::query(int node, const Vec3& q, double& best) const {
  const Node& n = nodes_[size_t(node)];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i)
      best = std::min(best, (points_[size_t(i)] - q).squaredNorm());
    return;
  }
  const double d = q[n.axis] - n.split;
  const int first = d < 0 ? n.left : n.right;
  const int second = d < 0 ? n.right : n.left;
  query(first, q, best);
  if (d * d < best) query(second, q, best);
}

double KdTree::nearest_sq(const Vec3& q) const {
  double best = 1e300;
  query(0, q, best);
  return best;
}

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  PF_CHECK_MSG(!a.empty() && !b.empty(), "chamfer_distance: empty point set");
  const KdTree tree_a(std::vector<Vec3>(a.begin(), a.end()));
  const KdTree tree_b(std::vector<Vec3>(b.begin(), b.end()));
  double ab = 0, ba = 0;
  for (const Vec3& p : a) ab += tree_b.nearest_sq(p);
  for (const Vec3& p : b) ba += tree_a.nearest_sq(p);
  return 0.5 * (ab / double(a.size()) + ba / double(b.size()));
}

std::vector<Vec3> sample_mesh_surface(const TriangleMesh& mesh, int count, uint64_t seed) {
  PF_CHECK_MSG(!mesh.faces.empty(), "sample_mesh_surface: empty mesh");
  std::vector<double> cdf(mesh.faces.size());
  double total = 0;
  for (int f = 0; f < mesh.face_count(); ++f) {
    total += mesh.face_area(f);
    cdf[size_t(f)] = total;
  }
  PF_CHECK_MSG(total > 0, "sample_mesh_surface: zero total area");
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    const double u = rng.uniform() * total;
    const int f = int(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const auto& fc = mesh.faces[size_t(std::min(f, mesh.face_count() - 1))];
    double r1 = std::sqrt(rng.uniform());
    double r2 = rng.uniform();
    const Vec3 p = (1 - r1) * mesh.position(fc[0]) + r1 * (1 - r2) * mesh.position(fc[1]) +
                   r1 * r2 * mesh.position(fc[2]);
    out.push_back(p);
  }
  return out;
}

}  // namespace posefield
