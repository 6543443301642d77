#pragma once

#include <array>
#include <span>
#include <vector>

#include "posefield/autodiff.hpp"
#include "posefield/field.hpp"
#include "posefield/lie.hpp"

namespace posefield {

// Triangle mesh with trainable per-vertex offsets. Faces index into
// vertices; rendered/exported positions are vertex + offset.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  ad::ParamBlock offsets;                // vertex_count * 3
  std::vector<Vec3> colors;              // empty or one per vertex
  std::vector<std::vector<int>> adjacency;

  TriangleMesh() : offsets("vertex_offsets", 0) {}

  int vertex_count() const { return int(vertices.size()); }
  int face_count() const { return int(faces.size()); }
  bool empty() const { return faces.empty(); }

  Vec3 offset(int i) const {
    return {offsets.values[size_t(i) * 3], offsets.values[size_t(i) * 3 + 1],
            offsets.values[size_t(i) * 3 + 2]};
  }
  Vec3 position(int i) const { return vertices[size_t(i)] + offset(i); }

  void reset_offsets();          // resize to vertices and zero
  void fold_offsets();           // vertices += offsets, offsets = 0
  void build_adjacency();        // symmetric vertex neighbor sets
  void remove_degenerate_faces(double area_eps = 1e-12);
  void validate() const;         // index ranges, offsets shape
  double face_area(int f) const;
  Vec3 face_normal(int f) const;
};

// Scalar field sampled on an R^3 corner lattice spanning [0,1]^3.
struct ScalarGrid {
  int resolution = 0;  // points per axis, >= 2
  double level = 0.0;
  std::vector<double> values;  // x fastest, then y, then z

  double value(int i, int j, int k) const {
    return values[(size_t(k) * size_t(resolution) + size_t(j)) * size_t(resolution) + size_t(i)];
  }
  Vec3 point(int i, int j, int k) const {
    const double h = 1.0 / (resolution - 1);
    return {i * h, j * h, k * h};
  }
};

ScalarGrid sample_field_grid(FieldModel& model, int resolution, double alpha, int threads = 1);

// Isosurface of {value = level}; shared edge vertices are welded, normals
// point toward value > level. A grid with no sign change yields an empty
// mesh.
TriangleMesh marching_cubes(const ScalarGrid& grid);

int count_boundary_edges(const TriangleMesh& mesh);
int count_nonmanifold_edges(const TriangleMesh& mesh);

// Mean over vertices of the average squared edge length to the neighbors
// (positions include offsets). Isolated vertices contribute zero.
double smooth_loss(const TriangleMesh& mesh);
// Variant penalizing only offset differences across edges.
double smooth_loss_offset_laplacian(const TriangleMesh& mesh);
// Sum of squared offset norms.
double offset_loss(const TriangleMesh& mesh);

// Analytic gradients of the above, accumulated into mesh.offsets.grad with
// the given weight.
void smooth_loss_grad(const TriangleMesh& mesh, double weight);
void smooth_loss_offset_laplacian_grad(const TriangleMesh& mesh, double weight);
void offset_loss_grad(const TriangleMesh& mesh, double weight);

struct RefineWeights {
  double photometric = 1.0;
  double smooth = 0.01;
  double offset = 0.1;
};
double refine_total(double photo, double smooth, double offset, const RefineWeights& w);

// Diffuse color of the field at each vertex position, clamped to [0,1].
void bake_vertex_colors(TriangleMesh& mesh, FieldModel& model, double alpha);

// Conforming midpoint subdivision: marked faces split 1-to-4, neighbors
// with one split edge bisect. Returns the number of faces added.
int subdivide_faces(TriangleMesh& mesh, std::span<const int> face_ids);

// Conservative edge collapse of the given faces' shortest edges; skips any
// collapse that would create a non-manifold edge. Returns faces removed.
int collapse_faces(TriangleMesh& mesh, std::span<const int> face_ids);

}  // namespace posefield
