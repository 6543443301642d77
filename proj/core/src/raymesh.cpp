#include "posefield/raymesh.hpp"

#include <algorithm>
#include <numeric>

#include "posefield/check.hpp"

namespace posefield {

RayHit intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                          const Vec3& c, int face_id) {
  RayHit out;
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-14) return out;
  const double inv = 1.0 / det;
  const Vec3 tv = origin - a;
  const double b1 = tv.dot(p) * inv;
  if (b1 < 0.0 || b1 > 1.0) return out;
  const Vec3 q = tv.cross(e1);
  const double b2 = dir.dot(q) * inv;
  if (b2 < 0.0 || b1 + b2 > 1.0) return out;
  const double t = e2.dot(q) * inv;
  if (t <= 1e-9) return out;
  out.face = face_id;
  out.t = t;
  out.b1 = b1;
  out.b2 = b2;
  return out;
}

Bvh::Bvh(const TriangleMesh& mesh) {
  const int n = mesh.face_count();
  if (n == 0) return;
  va_.resize(size_t(n));
  vb_.resize(size_t(n));
  vc_.resize(size_t(n));
  std::vector<Vec3> centroids(static_cast<size_t>(n));
  for (int f = 0; f < n; ++f) {
    va_[size_t(f)] = mesh.position(mesh.faces[size_t(f)][0]);
    vb_[size_t(f)] = mesh.position(mesh.faces[size_t(f)][1]);
    vc_[size_t(f)] = mesh.position(mesh.faces[size_t(f)][2]);
    centroids[size_t(f)] = (va_[size_t(f)] + vb_[size_t(f)] + vc_[size_t(f)]) / 3.0;
  }
  order_.resize(size_t(n));
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(size_t(2 * n));
  build(0, n, centroids, 0);
}

int Bvh::build(int begin, int end, std::vector<Vec3>& centroids, int depth) {
  Node node;
  node.lo = Vec3(1e300, 1e300, 1e300);
  node.hi = -node.lo;
  for (int i = begin; i < end; ++i) {
    const int f = order_[size_t(i)];
    for (const Vec3* v : {&va_[size_t(f)], &vb_[size_t(f)], &vc_[size_t(f)]}) {
      node.lo = node.lo.cwiseMin(*v);
      node.hi = node.hi.cwiseMax(*v);
    }
  }
  const int idx = int(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= 4 || depth > 40) {
    nodes_[size_t(idx)].begin = begin;
    nodes_[size_t(idx)].end = end;
    return idx;
  }
  int axis = 0;
  (node.hi - node.lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int fa, int fb) { return centroids[size_t(fa)][axis] < centroids[size_t(fb)][axis]; });
  const int l = build(begin, mid, centroids, depth + 1);
  const int r = build(mid, end, centroids, depth + 1);
  nodes_[size_t(idx)].left = l;
  nodes_[size_t(idx)].right = r;
  return idx;
}

namespace {
bool box_hit(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& inv_d, double tmax) {
  double t0 = 0, t1 = tmax;
  for (int a = 0; a < 3; ++a) {
    double ta = (lo[a] - o[a]) * inv_d[a];
    double tb = (hi[a] - o[a]) * inv_d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}
}  // namespace

RayHit Bvh::intersect(const Vec3& origin, const Vec3& dir) const {
  RayHit best;
  if (nodes_.empty()) return best;
  double tmax = 1e300;
  const Vec3 inv_d(1.0 / dir.x(), 1.0 / dir.y(), 1.0 / dir.z());
  int stack[64];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[size_t(stack[--sp])];
    if (!box_hit(node.lo, node.hi, origin, inv_d, tmax)) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int f = order_[size_t(i)];
        const RayHit h =
            intersect_triangle(origin, dir, va_[size_t(f)], vb_[size_t(f)], vc_[size_t(f)], f);
        if (h.hit() && h.t < tmax) {
          tmax = h.t;
          best = h;
        }
      }
    } else {
      PF_CHECK_MSG(sp + 2 <= 64, "bvh: traversal stack overflow");
      stack[sp++] = node.left;
      stack[sp++] = node.right;
    }
  }
  return best;
}

HitNodes ray_hit_nodes(ad::Tape& tape, ad::NodeRef offsets_node, const TriangleMesh& mesh,
                       int face, const Vec3& origin, const Vec3& dir) {
  PF_CHECK_MSG(face >= 0 && face < mesh.face_count(), "ray_hit_nodes: face out of range");
  const auto& fc = mesh.faces[size_t(face)];
  auto vertex = [&](int v) {
    const Vec3 base = mesh.vertices[size_t(v)];
    ad::NodeRef b = tape.constant3(base.x(), base.y(), base.z());
    return tape.add(b, tape.slice(offsets_node, v * 3, 3));
  };
  ad::NodeRef a = vertex(fc[0]);
  ad::NodeRef b = vertex(fc[1]);
  ad::NodeRef c = vertex(fc[2]);
  ad::NodeRef o = tape.constant3(origin.x(), origin.y(), origin.z());
  ad::NodeRef d = tape.constant3(dir.x(), dir.y(), dir.z());

  ad::NodeRef e1 = tape.sub(b, a);
  ad::NodeRef e2 = tape.sub(c, a);
  ad::NodeRef p = tape.cross(d, e2);
  ad::NodeRef det = tape.dot(e1, p);
  ad::NodeRef tv = tape.sub(o, a);
  ad::NodeRef b1 = tape.div(tape.dot(tv, p), det);
  ad::NodeRef q = tape.cross(tv, e1);
  ad::NodeRef b2 = tape.div(tape.dot(d, q), det);
  ad::NodeRef t = tape.div(tape.dot(e2, q), det);
  ad::NodeRef point = tape.add(o, tape.mul(d, t));
  return {point, t, b1, b2};
}

}  // namespace posefield
