#pragma once

#include "qcmorph/core.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace qcm {

/// Indexed triangle surface. Faces are counter-clockwise with respect to the
/// outward normal. Immutable after load; safe for concurrent shared reads.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    /// Per-vertex scalar attributes preserved from the input file.
    std::map<std::string, std::vector<double>> vertex_attributes;

    int vertex_count() const { return static_cast<int>(vertices.size()); }
    int face_count() const { return static_cast<int>(faces.size()); }

    double face_area(int f) const;
    Vec3 face_normal(int f) const;  // unit, CCW orientation
    double surface_area() const;
    double bounding_box_diagonal() const;
};

struct TopologyReport {
    int euler_characteristic = 0;
    int boundary_loop_count = 0;
    bool is_simply_connected_open = false;
    int genus = 0;
    int edge_count = 0;
};

/// Ordered pairs of vertex anchors (source_vertex_ids[i] ↔ target_vertex_ids[i]).
struct LandmarkCorrespondence {
    std::vector<int> source_vertex_ids;
    std::vector<int> target_vertex_ids;

    int size() const { return static_cast<int>(source_vertex_ids.size()); }
};

enum class MeshFormat { Off, Obj, Ply };

/// Shared adjacency for topology checks and downstream operators.
/// Edges are stored once with (v0 < v1); `edge_faces` lists the bordering
/// faces (-1 when absent).
struct MeshConnectivity {
    std::vector<std::array<int, 2>> edges;
    std::vector<std::array<int, 2>> edge_faces;
    std::vector<std::vector<int>> vertex_faces;  // incident faces, sorted
    std::vector<bool> vertex_on_boundary;
    int boundary_edge_count = 0;
};

MeshConnectivity build_connectivity(const TriMesh& mesh);

/// Throws InputError on index range violations or degenerate faces
/// (repeated vertex, or area below 1e-12 of squared bounding-box diagonal).
void check_mesh_invariants(const TriMesh& mesh);

MeshFormat format_from_path(const std::filesystem::path& path);

/// Reads an ASCII OFF/OBJ/PLY file. Non-geometry records (materials,
/// normals, textures) are skipped with a warning. Throws InputError with
/// file/line context on parse failures, non-triangle faces, or out-of-range
/// indices.
TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format);
TriMesh load_mesh(const std::filesystem::path& path);  // format from extension

void save_off(const TriMesh& mesh, const std::filesystem::path& path);

/// χ = |V| − |E| + |F| (integer arithmetic), boundary loops from
/// boundary-edge traversal. Throws NumericalError naming the offending
/// simplices when a non-manifold edge or vertex is found.
TopologyReport validate_topology(const TriMesh& mesh);

/// Ordered closed loop of boundary vertices, oriented consistently with the
/// face orientation. Requires exactly one boundary loop. The loop starts at
/// its smallest vertex index.
std::vector<int> extract_boundary(const TriMesh& mesh);

/// Text file of k lines "src_index target_index" (0-based). Throws on
/// out-of-range indices, duplicates on one side, or an empty file.
LandmarkCorrespondence load_landmarks(const std::filesystem::path& path,
                                      const TriMesh& source, const TriMesh& target);

}  // namespace qcm
