#pragma once

#include <string>

#include "posefield/mesh.hpp"

namespace posefield {

// OBJ (ASCII, `v x y z [r g b]` + 1-based `f`) and binary little-endian
// PLY with optional uchar vertex colors. Offsets are folded into positions
// on export. Output bytes are deterministic for a fixed mesh.
void export_mesh(const TriangleMesh& mesh, const std::string& path);  // by extension
void export_obj(const TriangleMesh& mesh, const std::string& path);
void export_ply(const TriangleMesh& mesh, const std::string& path);

TriangleMesh import_mesh(const std::string& path);
TriangleMesh import_obj(const std::string& path);
TriangleMesh import_ply(const std::string& path);

}  // namespace posefield
