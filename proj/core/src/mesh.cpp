#include "posefield/mesh.hpp"

#include <algorithm>
#include <map>
#include <thread>
#include <unordered_map>

#include "posefield/check.hpp"

namespace posefield {

void TriangleMesh::reset_offsets() {
  offsets.resize(vertices.size() * 3);
}

void TriangleMesh::fold_offsets() {
  PF_CHECK_MSG(offsets.size() == vertices.size() * 3, "fold_offsets: offsets shape mismatch");
  for (size_t i = 0; i < vertices.size(); ++i) vertices[i] += offset(int(i));
  offsets.resize(vertices.size() * 3);
}

void TriangleMesh::build_adjacency() {
  adjacency.assign(vertices.size(), {});
  auto link = [&](int a, int b) {
    auto& na = adjacency[size_t(a)];
    if (std::find(na.begin(), na.end(), b) == na.end()) na.push_back(b);
  };
  for (const auto& f : faces) {
    link(f[0], f[1]);
    link(f[1], f[0]);
    link(f[1], f[2]);
    link(f[2], f[1]);
    link(f[2], f[0]);
    link(f[0], f[2]);
  }
  for (auto& n : adjacency) std::sort(n.begin(), n.end());
}

double TriangleMesh::face_area(int f) const {
  const auto& fc = faces[size_t(f)];
  const Vec3 a = position(fc[0]), b = position(fc[1]), c = position(fc[2]);
  return 0.5 * (b - a).cross(c - a).norm();
}

Vec3 TriangleMesh::face_normal(int f) const {
  const auto& fc = faces[size_t(f)];
  const Vec3 a = position(fc[0]), b = position(fc[1]), c = position(fc[2]);
  return (b - a).cross(c - a).normalized();
}

void TriangleMesh::remove_degenerate_faces(double area_eps) {
  std::vector<std::array<int, 3>> kept;
  kept.reserve(faces.size());
  for (const auto& f : faces) {
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    const Vec3 a = vertices[size_t(f[0])], b = vertices[size_t(f[1])], c = vertices[size_t(f[2])];
    if (0.5 * (b - a).cross(c - a).norm() <= area_eps) continue;
    kept.push_back(f);
  }
  faces = std::move(kept);
}

void TriangleMesh::validate() const {
  PF_CHECK_MSG(offsets.size() == vertices.size() * 3, "mesh: offsets shape mismatch");
  if (!colors.empty())
    PF_CHECK_MSG(colors.size() == vertices.size(), "mesh: colors shape mismatch");
  for (const auto& f : faces)
    for (int v : f)
      PF_CHECK_MSG(v >= 0 && v < int(vertices.size()), "mesh: face index out of range");
}

ScalarGrid sample_field_grid(FieldModel& model, int resolution, double alpha, int threads) {
  PF_CHECK_MSG(resolution >= 2, "sample_field_grid: resolution must be >= 2");
  ScalarGrid grid;
  grid.resolution = resolution;
  grid.values.assign(size_t(resolution) * size_t(resolution) * size_t(resolution), 0.0);
  auto slab = [&](int k0, int k1) {
    for (int k = k0; k < k1; ++k)
      for (int j = 0; j < resolution; ++j)
        for (int i = 0; i < resolution; ++i)
          grid.values[(size_t(k) * size_t(resolution) + size_t(j)) * size_t(resolution) +
                      size_t(i)] = model.sdf(grid.point(i, j, k), alpha);
  };
  threads = std::max(1, threads);
  if (threads == 1) {
    slab(0, resolution);
  } else {
    std::vector<std::thread> pool;
    const int rows = (resolution + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int k0 = t * rows, k1 = std::min(resolution, (t + 1) * rows);
      if (k0 < k1) pool.emplace_back(slab, k0, k1);
    }
    for (auto& th : pool) th.join();
  }
  return grid;
}

namespace {
std::map<std::pair<int, int>, int> edge_face_counts(const TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& f : mesh.faces)
    for (int e = 0; e < 3; ++e) {
      int a = f[size_t(e)], b = f[size_t((e + 1) % 3)];
      if (a > b) std::swap(a, b);
      counts[{a, b}] += 1;
    }
  return counts;
}
}  // namespace

int count_boundary_edges(const TriangleMesh& mesh) {
  int n = 0;
  for (const auto& [e, c] : edge_face_counts(mesh))
    if (c == 1) ++n;
  return n;
}

int count_nonmanifold_edges(const TriangleMesh& mesh) {
  int n = 0;
  for (const auto& [e, c] : edge_face_counts(mesh))
    if (c > 2) ++n;
  return n;
}

double smooth_loss(const TriangleMesh& mesh) {
  PF_CHECK_MSG(mesh.adjacency.size() == mesh.vertices.size(), "smooth_loss: adjacency not built");
  if (mesh.vertices.empty()) return 0.0;
  double total = 0;
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    const auto& nb = mesh.adjacency[size_t(i)];
    if (nb.empty()) continue;
    const Vec3 pi = mesh.position(i);
    double acc = 0;
    for (int j : nb) acc += (pi - mesh.position(j)).squaredNorm();
    total += acc / double(nb.size());
  }
  return total / double(mesh.vertex_count());
}

double smooth_loss_offset_laplacian(const TriangleMesh& mesh) {
  PF_CHECK_MSG(mesh.adjacency.size() == mesh.vertices.size(), "smooth_loss: adjacency not built");
  if (mesh.vertices.empty()) return 0.0;
  double total = 0;
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    const auto& nb = mesh.adjacency[size_t(i)];
    if (nb.empty()) continue;
    const Vec3 oi = mesh.offset(i);
    double acc = 0;
    for (int j : nb) acc += (oi - mesh.offset(j)).squaredNorm();
    total += acc / double(nb.size());
  }
  return total / double(mesh.vertex_count());
}

double offset_loss(const TriangleMesh& mesh) {
  double total = 0;
  for (size_t i = 0; i < mesh.offsets.size(); ++i) total += mesh.offsets.values[i] * mesh.offsets.values[i];
  return total;
}

void smooth_loss_grad(const TriangleMesh& mesh, double weight) {
  const int n = mesh.vertex_count();
  if (n == 0) return;
  auto& g = const_cast<ad::ParamBlock&>(mesh.offsets).grad;
  const double inv_n = 1.0 / double(n);
  for (int i = 0; i < n; ++i) {
    const auto& nb = mesh.adjacency[size_t(i)];
    if (nb.empty()) continue;
    const Vec3 pi = mesh.position(i);
    const double wi = weight * inv_n / double(nb.size());
    for (int j : nb) {
      const Vec3 d = pi - mesh.position(j);
      for (int c = 0; c < 3; ++c) {
        g[size_t(i) * 3 + size_t(c)] += 2.0 * wi * d[c];
        g[size_t(j) * 3 + size_t(c)] -= 2.0 * wi * d[c];
      }
    }
  }
}

void smooth_loss_offset_laplacian_grad(const TriangleMesh& mesh, double weight) {
  const int n = mesh.vertex_count();
  if (n == 0) return;
  auto& g = const_cast<ad::ParamBlock&>(mesh.offsets).grad;
  const double inv_n = 1.0 / double(n);
  for (int i = 0; i < n; ++i) {
    const auto& nb = mesh.adjacency[size_t(i)];
    if (nb.empty()) continue;
    const Vec3 oi = mesh.offset(i);
    const double wi = weight * inv_n / double(nb.size());
    for (int j : nb) {
      const Vec3 d = oi - mesh.offset(j);
      for (int c = 0; c < 3; ++c) {
        g[size_t(i) * 3 + size_t(c)] += 2.0 * wi * d[c];
        g[size_t(j) * 3 + size_t(c)] -= 2.0 * wi * d[c];
      }
    }
  }
}

void offset_loss_grad(const TriangleMesh& mesh, double weight) {
  auto& g = const_cast<ad::ParamBlock&>(mesh.offsets).grad;
  for (size_t i = 0; i < mesh.offsets.size(); ++i) g[i] += 2.0 * weight * mesh.offsets.values[i];
}

double refine_total(double photo, double smooth, double offset, const RefineWeights& w) {
  PF_CHECK_FINITE(std::isfinite(photo) && std::isfinite(smooth) && std::isfinite(offset));
  return w.photometric * photo + w.smooth * smooth + w.offset * offset;
}

void bake_vertex_colors(TriangleMesh& mesh, FieldModel& model, double alpha) {
  mesh.colors.resize(mesh.vertices.size());
  const Vec3 view(0, 0, -1);  // diffuse ignores the view direction
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3 c = model.appearance(mesh.position(i), view, alpha).diffuse;
    mesh.colors[size_t(i)] = c.cwiseMax(0.0).cwiseMin(1.0);
  }
}

int subdivide_faces(TriangleMesh& mesh, std::span<const int> face_ids) {
  if (face_ids.empty()) return 0;
  const int before = mesh.face_count();
  auto edge_key = [](int a, int b) {
    if (a > b) std::swap(a, b);
    return std::pair<int, int>(a, b);
  };

  std::map<std::pair<int, int>, int> split_edge;  // edge -> midpoint vertex (-1 = pending)
  std::vector<uint8_t> split_face(mesh.faces.size(), 0);
  for (int f : face_ids) {
    PF_CHECK_MSG(f >= 0 && f < mesh.face_count(), "subdivide: face id out of range");
    split_face[size_t(f)] = 1;
    const auto& fc = mesh.faces[size_t(f)];
    for (int e = 0; e < 3; ++e) split_edge[edge_key(fc[size_t(e)], fc[size_t((e + 1) % 3)])] = -1;
  }

  // conforming closure: a face with two or three split edges splits fully
  bool changed = true;
  while (changed) {
    changed = false;
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
      if (split_face[f]) continue;
      const auto& fc = mesh.faces[f];
      int marked = 0;
      for (int e = 0; e < 3; ++e)
        marked += split_edge.count(edge_key(fc[size_t(e)], fc[size_t((e + 1) % 3)])) ? 1 : 0;
      if (marked >= 2) {
        split_face[f] = 1;
        for (int e = 0; e < 3; ++e)
          split_edge.emplace(edge_key(fc[size_t(e)], fc[size_t((e + 1) % 3)]), -1);
        changed = true;
      }
    }
  }

  for (auto& [key, vid] : split_edge) {
    vid = int(mesh.vertices.size());
    mesh.vertices.push_back(0.5 * (mesh.vertices[size_t(key.first)] +
                                   mesh.vertices[size_t(key.second)]));
  }

  std::vector<std::array<int, 3>> out;
  out.reserve(mesh.faces.size() * 2);
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto fc = mesh.faces[f];
    int mid[3];
    int count = 0;
    for (int e = 0; e < 3; ++e) {
      auto it = split_edge.find(edge_key(fc[size_t(e)], fc[size_t((e + 1) % 3)]));
      mid[e] = it == split_edge.end() ? -1 : it->second;
      if (mid[e] >= 0) ++count;
    }
    if (count == 0) {
      out.push_back(fc);
    } else if (count == 3) {
      out.push_back({fc[0], mid[0], mid[2]});
      out.push_back({mid[0], fc[1], mid[1]});
      out.push_back({mid[2], mid[1], fc[2]});
      out.push_back({mid[0], mid[1], mid[2]});
    } else {
      // exactly one split edge after closure: bisect toward the far vertex
      PF_CHECK_MSG(count == 1, "subdivide: closure left a face with two split edges");
      int e = 0;
      while (mid[e] < 0) ++e;
      const int a = fc[size_t(e)], b = fc[size_t((e + 1) % 3)], c = fc[size_t((e + 2) % 3)];
      out.push_back({a, mid[e], c});
      out.push_back({mid[e], b, c});
    }
  }
  mesh.faces = std::move(out);
  mesh.reset_offsets();
  mesh.build_adjacency();
  mesh.colors.clear();
  return mesh.face_count() - before;
}

int collapse_faces(TriangleMesh& mesh, std::span<const int> face_ids) {
  if (face_ids.empty()) return 0;
  const int before = mesh.face_count();
  mesh.build_adjacency();

  std::vector<uint8_t> touched(mesh.vertices.size(), 0);
  std::vector<int> remap(mesh.vertices.size());
  for (size_t i = 0; i < remap.size(); ++i) remap[i] = int(i);

  auto common_neighbors = [&](int a, int b) {
    int n = 0;
    const auto& na = mesh.adjacency[size_t(a)];
    const auto& nb = mesh.adjacency[size_t(b)];
    for (int x : na)
      if (std::binary_search(nb.begin(), nb.end(), x)) ++n;
    return n;
  };

  for (int f : face_ids) {
    if (f < 0 || f >= mesh.face_count()) continue;
    const auto& fc = mesh.faces[size_t(f)];
    if (touched[size_t(fc[0])] || touched[size_t(fc[1])] || touched[size_t(fc[2])]) continue;
    // shortest edge of the face
    int best_a = fc[0], best_b = fc[1];
    double best = (mesh.vertices[size_t(fc[0])] - mesh.vertices[size_t(fc[1])]).squaredNorm();
    for (int e = 1; e < 3; ++e) {
      const int a = fc[size_t(e)], b = fc[size_t((e + 1) % 3)];
      const double d = (mesh.vertices[size_t(a)] - mesh.vertices[size_t(b)]).squaredNorm();
      if (d < best) {
        best = d;
        best_a = a;
        best_b = b;
      }
    }
    // link condition: collapsing is manifold-safe iff the endpoints share
    // exactly the two opposite vertices of the edge's two faces
    if (common_neighbors(best_a, best_b) != 2) continue;
    mesh.vertices[size_t(best_a)] =
        0.5 * (mesh.vertices[size_t(best_a)] + mesh.vertices[size_t(best_b)]);
    remap[size_t(best_b)] = best_a;
    touched[size_t(best_a)] = touched[size_t(best_b)] = 1;
    for (int x : mesh.adjacency[size_t(best_a)]) touched[size_t(x)] = 1;
    for (int x : mesh.adjacency[size_t(best_b)]) touched[size_t(x)] = 1;
  }

  for (auto& fc : mesh.faces)
    for (int& v : fc) v = remap[size_t(v)];
  mesh.remove_degenerate_faces(0.0);

  // drop unreferenced vertices, compact indices
  std::vector<int> newid(mesh.vertices.size(), -1);
  std::vector<Vec3> verts;
  for (auto& fc : mesh.faces)
    for (int& v : fc) {
      if (newid[size_t(v)] < 0) {
        newid[size_t(v)] = int(verts.size());
        verts.push_back(mesh.vertices[size_t(v)]);
      }
      v = newid[size_t(v)];
    }
  mesh.vertices = std::move(verts);
  mesh.reset_offsets();
  mesh.build_adjacency();
  mesh.colors.clear();
  return before - mesh.face_count();
}

}  // namespace posefield
