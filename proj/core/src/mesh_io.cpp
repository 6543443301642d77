#include "posefield/mesh_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "posefield/check.hpp"

namespace posefield {

namespace {
std::string lower_ext(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot == std::string::npos) return "";
  std::string ext = path.substr(dot + 1);
  for (char& c : ext) c = char(std::tolower(c));
  return ext;
}

unsigned char color_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}
}  // namespace

void export_mesh(const TriangleMesh& mesh, const std::string& path) {
  const std::string ext = lower_ext(path);
  if (ext == "obj") return export_obj(mesh, path);
  if (ext == "ply") return export_ply(mesh, path);
  throw StructuralError("export_mesh: unsupported format ." + ext + " (use .obj or .ply)");
}

TriangleMesh import_mesh(const std::string& path) {
  const std::string ext = lower_ext(path);
  if (ext == "obj") return import_obj(path);
  if (ext == "ply") return import_ply(path);
  throw StructuralError("import_mesh: unsupported format ." + ext);
}

void export_obj(const TriangleMesh& mesh, const std::string& path) {
  mesh.validate();
  std::ofstream os(path);
  if (!os) throw NumericalError("export_obj: cannot open " + path);
  const bool colored = !mesh.colors.empty();
  char buf[160];
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3 p = mesh.position(i);
    if (colored) {
      const Vec3& c = mesh.colors[size_t(i)];
      std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g %.9g %.9g %.9g\n", p.x(), p.y(), p.z(),
                    c.x(), c.y(), c.z());
    } else {
      std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", p.x(), p.y(), p.z());
    }
    os << buf;
  }
  for (const auto& f : mesh.faces) {
    std::snprintf(buf, sizeof buf, "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
    os << buf;
  }
}

TriangleMesh import_obj(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw StructuralError("import_obj: cannot open " + path);
  TriangleMesh mesh;
  std::string line;
  bool any_color = false;
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      ss >> x >> y >> z;
      PF_CHECK_MSG(bool(ss), "import_obj: malformed vertex line: " << line);
      mesh.vertices.emplace_back(x, y, z);
      double r, g, b;
      if (ss >> r >> g >> b) {
        any_color = true;
        mesh.colors.emplace_back(r, g, b);
      } else {
        mesh.colors.emplace_back(0, 0, 0);
      }
    } else if (tag == "f") {
      std::array<int, 3> f;
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        ss >> tok;
        PF_CHECK_MSG(!tok.empty(), "import_obj: malformed face line: " << line);
        f[size_t(k)] = std::stoi(tok) - 1;  // tolerate v/vt/vn forms
      }
      mesh.faces.push_back(f);
    }
  }
  if (!any_color) mesh.colors.clear();
  mesh.reset_offsets();
  mesh.build_adjacency();
  mesh.validate();
  return mesh;
}

void export_ply(const TriangleMesh& mesh, const std::string& path) {
  mesh.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NumericalError("export_ply: cannot open " + path);
  const bool colored = !mesh.colors.empty();
  os << "ply\nformat binary_little_endian 1.0\n";
  os << "element vertex " << mesh.vertex_count() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  if (colored) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "element face " << mesh.face_count() << "\n";
  os << "property list uchar int vertex_indices\nend_header\n";
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3 p = mesh.position(i);
    const float xyz[3] = {float(p.x()), float(p.y()), float(p.z())};
    os.write(reinterpret_cast<const char*>(xyz), 12);
    if (colored) {
      const unsigned char rgb[3] = {color_byte(mesh.colors[size_t(i)].x()),
                                    color_byte(mesh.colors[size_t(i)].y()),
                                    color_byte(mesh.colors[size_t(i)].z())};
      os.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
  for (const auto& f : mesh.faces) {
    const unsigned char n = 3;
    os.write(reinterpret_cast<const char*>(&n), 1);
    const int32_t idx[3] = {f[0], f[1], f[2]};
    os.write(reinterpret_cast<const char*>(idx), 12);
  }
}

TriangleMesh import_ply(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StructuralError("import_ply: cannot open " + path);
  std::string line;
  std::getline(is, line);
  PF_CHECK_MSG(line == "ply", "import_ply: not a PLY file: " << path);
  std::getline(is, line);
  PF_CHECK_MSG(line == "format binary_little_endian 1.0",
               "import_ply: unsupported format line: " << line);
  int n_vertex = -1, n_face = -1;
  bool colored = false;
  std::string element;
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "element") {
      int count;
      ss >> element >> count;
      if (element == "vertex") n_vertex = count;
      else if (element == "face") n_face = count;
    } else if (tag == "property" && element == "vertex") {
      std::string type, name;
      ss >> type >> name;
      if (name == "red") colored = true;
    } else if (tag == "end_header") {
      break;
    }
  }
  PF_CHECK_MSG(n_vertex >= 0 && n_face >= 0, "import_ply: missing element declarations");

  TriangleMesh mesh;
  mesh.vertices.resize(size_t(n_vertex));
  if (colored) mesh.colors.resize(size_t(n_vertex));
  for (int i = 0; i < n_vertex; ++i) {
    float xyz[3];
    is.read(reinterpret_cast<char*>(xyz), 12);
    mesh.vertices[size_t(i)] = Vec3(xyz[0], xyz[1], xyz[2]);
    if (colored) {
      unsigned char rgb[3];
      is.read(reinterpret_cast<char*>(rgb), 3);
      mesh.colors[size_t(i)] = Vec3(rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0);
    }
  }
  mesh.faces.resize(size_t(n_face));
  for (int f = 0; f < n_face; ++f) {
    unsigned char n;
    is.read(reinterpret_cast<char*>(&n), 1);
    PF_CHECK_MSG(n == 3, "import_ply: only triangle faces supported");
    int32_t idx[3];
    is.read(reinterpret_cast<char*>(idx), 12);
    mesh.faces[size_t(f)] = {idx[0], idx[1], idx[2]};
  }
  PF_CHECK_MSG(bool(is), "import_ply: truncated file " << path);
  mesh.reset_offsets();
  mesh.build_adjacency();
  mesh.validate();
  return mesh;
}

}  // namespace posefield
