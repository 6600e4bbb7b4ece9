#include "qcmorph/mesh.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

namespace qcm {

void log_warning(const std::string& msg) {
    std::cerr << "[qcmorph] warning: " << msg << "\n";
}

double TriMesh::face_area(int f) const {
    const auto& t = faces[f];
    return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

Vec3 TriMesh::face_normal(int f) const {
    const auto& t = faces[f];
    Vec3 n = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
    double len = n.norm();
    return len > 0 ? Vec3(n / len) : Vec3(0, 0, 0);
}

double TriMesh::surface_area() const {
    double a = 0;
    for (int f = 0; f < face_count(); ++f) a += face_area(f);
    return a;
}

double TriMesh::bounding_box_diagonal() const {
    if (vertices.empty()) return 0;
    Vec3 lo = vertices.front(), hi = vertices.front();
    for (const auto& v : vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return (hi - lo).norm();
}

void check_mesh_invariants(const TriMesh& mesh) {
    const int nv = mesh.vertex_count();
    if (nv == 0 || mesh.faces.empty()) throw InputError("mesh has no vertices or no faces");
    const double diag2 = mesh.bounding_box_diagonal() * mesh.bounding_box_diagonal();
    const double area_tol = 1e-12 * diag2;
    for (int f = 0; f < mesh.face_count(); ++f) {
        const auto& t = mesh.faces[f];
        for (int c = 0; c < 3; ++c) {
            if (t[c] < 0 || t[c] >= nv)
                throw InputError("face " + std::to_string(f) + " references out-of-range vertex " +
                                 std::to_string(t[c]) + " (vertex count " + std::to_string(nv) + ")");
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
            throw InputError("face " + std::to_string(f) + " repeats a vertex");
        if (mesh.face_area(f) < area_tol)
            throw InputError("face " + std::to_string(f) + " is degenerate (area below tolerance)");
    }
    for (const auto& [name, vals] : mesh.vertex_attributes) {
        if (static_cast<int>(vals.size()) != nv)
            throw InputError("vertex attribute '" + name + "' has wrong length");
    }
}

MeshConnectivity build_connectivity(const TriMesh& mesh) {
    MeshConnectivity conn;
    const int nv = mesh.vertex_count();
    conn.vertex_faces.assign(nv, {});
    conn.vertex_on_boundary.assign(nv, false);

    std::unordered_map<std::uint64_t, int> edge_index;
    edge_index.reserve(mesh.faces.size() * 2);
    auto key = [](int a, int b) {
        if (a > b) std::swap(a, b);
        return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
    };

    for (int f = 0; f < mesh.face_count(); ++f) {
        const auto& t = mesh.faces[f];
        for (int c = 0; c < 3; ++c) {
            conn.vertex_faces[t[c]].push_back(f);
            int a = t[c], b = t[(c + 1) % 3];
            auto [it, inserted] = edge_index.try_emplace(key(a, b), static_cast<int>(conn.edges.size()));
            if (inserted) {
                conn.edges.push_back({std::min(a, b), std::max(a, b)});
                conn.edge_faces.push_back({f, -1});
            } else {
                auto& ef = conn.edge_faces[it->second];
                if (ef[1] != -1) {
                    // third face on one edge; flag with a sentinel for validate_topology
                    ef[1] = -2;
                } else {
                    ef[1] = f;
                }
            }
        }
    }
    for (std::size_t e = 0; e < conn.edges.size(); ++e) {
        if (conn.edge_faces[e][1] == -1) {
            ++conn.boundary_edge_count;
            conn.vertex_on_boundary[conn.edges[e][0]] = true;
            conn.vertex_on_boundary[conn.edges[e][1]] = true;
        }
    }
    return conn;
}

namespace {

struct LineReader {
    LineReader(std::istream& stream, std::string file) : in(stream), path(std::move(file)) {}

    std::istream& in;
    std::string path;
    int line_no = 0;
    std::string line;

    /// Next non-empty, non-comment line (OFF/PLY '#' comments).
    bool next(bool strip_hash_comments) {
        while (std::getline(in, line)) {
            ++line_no;
            if (strip_hash_comments) {
                if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
            }
            bool blank = std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
            if (!blank) return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw InputError(path + ":" + std::to_string(line_no) + ": " + what);
    }
};

std::vector<std::string> tokenize(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

double parse_double(LineReader& r, const std::string& tok) {
    try {
        std::size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) r.fail("bad number '" + tok + "'");
        return v;
    } catch (const std::exception&) {
        r.fail("bad number '" + tok + "'");
    }
}

long parse_int(LineReader& r, const std::string& tok) {
    long v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) r.fail("bad integer '" + tok + "'");
    return v;
}

TriMesh load_off(LineReader& r) {
    if (!r.next(true)) r.fail("empty OFF file");
    auto header = tokenize(r.line);
    std::vector<std::string> counts;
    if (header.size() == 1 && (header[0] == "OFF" || header[0] == "off")) {
        if (!r.next(true)) r.fail("missing OFF counts line");
        counts = tokenize(r.line);
    } else if (header.size() == 4 && (header[0] == "OFF" || header[0] == "off")) {
        counts.assign(header.begin() + 1, header.end());
    } else {
        counts = header;  // header-less variant: counts on the first line
    }
    if (counts.size() < 2) r.fail("expected 'nv nf [ne]' counts");
    long nv = parse_int(r, counts[0]);
    long nf = parse_int(r, counts[1]);
    if (nv <= 0 || nf < 0) r.fail("non-positive vertex/face counts");

    TriMesh mesh;
    mesh.vertices.reserve(nv);
    for (long i = 0; i < nv; ++i) {
        if (!r.next(true)) r.fail("unexpected end of file in vertex list");
        auto toks = tokenize(r.line);
        if (toks.size() < 3) r.fail("vertex line needs 3 coordinates");
        mesh.vertices.emplace_back(parse_double(r, toks[0]), parse_double(r, toks[1]), parse_double(r, toks[2]));
    }
    mesh.faces.reserve(nf);
    for (long i = 0; i < nf; ++i) {
        if (!r.next(true)) r.fail("unexpected end of file in face list");
        auto toks = tokenize(r.line);
        if (toks.empty()) r.fail("empty face line");
        long k = parse_int(r, toks[0]);
        if (k != 3) r.fail("non-triangle face with " + std::to_string(k) + " vertices");
        if (static_cast<long>(toks.size()) < 1 + k) r.fail("face line missing indices");
        std::array<int, 3> t{};
        for (int c = 0; c < 3; ++c) {
            long idx = parse_int(r, toks[1 + c]);
            if (idx < 0 || idx >= nv)
                r.fail("face index " + std::to_string(idx) + " out of range [0, " + std::to_string(nv) + ")");
            t[c] = static_cast<int>(idx);
        }
        mesh.faces.push_back(t);
    }
    return mesh;
}

TriMesh load_obj(LineReader& r) {
    TriMesh mesh;
    int ignored_records = 0;
    while (r.next(false)) {
        auto toks = tokenize(r.line);
        if (toks.empty() || toks[0][0] == '#') continue;
        const std::string& tag = toks[0];
        if (tag == "v") {
            if (toks.size() < 4) r.fail("vertex line needs 3 coordinates");
            mesh.vertices.emplace_back(parse_double(r, toks[1]), parse_double(r, toks[2]), parse_double(r, toks[3]));
        } else if (tag == "f") {
            if (toks.size() != 4) r.fail("non-triangle face with " + std::to_string(toks.size() - 1) + " vertices");
            std::array<int, 3> t{};
            for (int c = 0; c < 3; ++c) {
                std::string ref = toks[1 + c].substr(0, toks[1 + c].find('/'));
                long idx = parse_int(r, ref);
                long nv = static_cast<long>(mesh.vertices.size());
                if (idx < 0) idx = nv + 1 + idx;  // negative OBJ indices count from the end
                if (idx < 1 || idx > nv)
                    r.fail("face index " + std::to_string(idx) + " out of range [1, " + std::to_string(nv) + "]");
                t[c] = static_cast<int>(idx - 1);
            }
            mesh.faces.push_back(t);
        } else if (tag == "vn" || tag == "vt" || tag == "mtllib" || tag == "usemtl" || tag == "g" ||
                   tag == "o" || tag == "s") {
            ++ignored_records;
        } else {
            r.fail("unrecognized OBJ record '" + tag + "'");
        }
    }
    if (ignored_records > 0)
        log_warning(r.path + ": ignored " + std::to_string(ignored_records) +
                    " non-geometry OBJ records (normals/textures/materials)");
    return mesh;
}

TriMesh load_ply(LineReader& r) {
    if (!r.next(false) || tokenize(r.line) != std::vector<std::string>{"ply"}) r.fail("missing 'ply' magic");

    long nv = -1, nf = -1;
    struct Prop { std::string name; };
    std::vector<Prop> vertex_props;
    std::string current_element;
    bool face_list_seen = false;
    int ignored = 0;

    while (true) {
        if (!r.next(false)) r.fail("unexpected end of PLY header");
        auto toks = tokenize(r.line);
        if (toks.empty()) continue;
        if (toks[0] == "comment" || toks[0] == "obj_info") continue;
        if (toks[0] == "format") {
            if (toks.size() < 2 || toks[1] != "ascii") r.fail("only ascii PLY is supported");
        } else if (toks[0] == "element") {
            if (toks.size() < 3) r.fail("bad element line");
            current_element = toks[1];
            if (toks[1] == "vertex") nv = parse_int(r, toks[2]);
            else if (toks[1] == "face") nf = parse_int(r, toks[2]);
            else r.fail("unsupported PLY element '" + toks[1] + "'");
        } else if (toks[0] == "property") {
            if (current_element == "vertex") {
                if (toks.size() < 3) r.fail("bad property line");
                if (toks[1] == "list") r.fail("list property on vertex element is not supported");
                vertex_props.push_back({toks.back()});
            } else if (current_element == "face") {
                if (toks[1] == "list") {
                    face_list_seen = true;
                } else {
                    ++ignored;  // per-face extras are skipped positionally below
                }
            }
        } else if (toks[0] == "end_header") {
            break;
        } else {
            r.fail("unrecognized PLY header line '" + toks[0] + "'");
        }
    }
    if (nv <= 0) r.fail("PLY file declares no vertices");
    if (nf < 0) r.fail("PLY file declares no face element");
    if (!face_list_seen) r.fail("PLY face element lacks a vertex index list property");

    int ix = -1, iy = -1, iz = -1;
    for (int i = 0; i < static_cast<int>(vertex_props.size()); ++i) {
        if (vertex_props[i].name == "x") ix = i;
        else if (vertex_props[i].name == "y") iy = i;
        else if (vertex_props[i].name == "z") iz = i;
    }
    if (ix < 0 || iy < 0 || iz < 0) r.fail("PLY vertex element lacks x/y/z properties");

    TriMesh mesh;
    mesh.vertices.reserve(nv);
    std::vector<std::vector<double>> extra(vertex_props.size());
    for (long i = 0; i < nv; ++i) {
        if (!r.next(false)) r.fail("unexpected end of file in vertex list");
        auto toks = tokenize(r.line);
        if (toks.size() < vertex_props.size()) r.fail("vertex line has too few properties");
        mesh.vertices.emplace_back(parse_double(r, toks[ix]), parse_double(r, toks[iy]), parse_double(r, toks[iz]));
        for (std::size_t p = 0; p < vertex_props.size(); ++p) {
            if (static_cast<int>(p) == ix || static_cast<int>(p) == iy || static_cast<int>(p) == iz) continue;
            extra[p].push_back(parse_double(r, toks[p]));
        }
    }
    for (std::size_t p = 0; p < vertex_props.size(); ++p) {
        if (!extra[p].empty()) mesh.vertex_attributes[vertex_props[p].name] = std::move(extra[p]);
    }
    for (long i = 0; i < nf; ++i) {
        if (!r.next(false)) r.fail("unexpected end of file in face list");
        auto toks = tokenize(r.line);
        if (toks.empty()) r.fail("empty face line");
        long k = parse_int(r, toks[0]);
        if (k != 3) r.fail("non-triangle face with " + std::to_string(k) + " vertices");
        if (static_cast<long>(toks.size()) < 1 + k) r.fail("face line missing indices");
        std::array<int, 3> t{};
        for (int c = 0; c < 3; ++c) {
            long idx = parse_int(r, toks[1 + c]);
            if (idx < 0 || idx >= nv)
                r.fail("face index " + std::to_string(idx) + " out of range [0, " + std::to_string(nv) + ")");
            t[c] = static_cast<int>(idx);
        }
        mesh.faces.push_back(t);
    }
    if (ignored > 0) log_warning(r.path + ": ignored non-geometry PLY face properties");
    return mesh;
}

}  // namespace

MeshFormat format_from_path(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".off") return MeshFormat::Off;
    if (ext == ".obj") return MeshFormat::Obj;
    if (ext == ".ply") return MeshFormat::Ply;
    throw InputError("cannot infer mesh format from extension '" + ext + "' (" + path.string() + ")");
}

TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open mesh file " + path.string());
    LineReader reader(in, path.string());
    TriMesh mesh;
    switch (format) {
        case MeshFormat::Off: mesh = load_off(reader); break;
        case MeshFormat::Obj: mesh = load_obj(reader); break;
        case MeshFormat::Ply: mesh = load_ply(reader); break;
    }
    check_mesh_invariants(mesh);
    return mesh;
}

TriMesh load_mesh(const std::filesystem::path& path) {
    return load_mesh(path, format_from_path(path));
}

void save_off(const TriMesh& mesh, const std::filesystem::path& path) {
    std::FILE* out = std::fopen(path.string().c_str(), "w");
    if (!out) throw InputError("cannot open " + path.string() + " for writing");
    std::fprintf(out, "OFF\n%d %d 0\n", mesh.vertex_count(), mesh.face_count());
    for (const auto& v : mesh.vertices) std::fprintf(out, "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    for (const auto& t : mesh.faces) std::fprintf(out, "3 %d %d %d\n", t[0], t[1], t[2]);
    std::fclose(out);
}

namespace {

/// One fan around `v`: incident faces must form a single sequence glued
/// across shared edges (closed cycle for interior vertices, open strip for
/// boundary vertices).
bool vertex_is_single_fan(const TriMesh& mesh, const MeshConnectivity& conn, int v) {
    const auto& star = conn.vertex_faces[v];
    if (star.empty()) return true;
    // Union-find over the star, gluing faces that share an edge through v.
    std::vector<int> parent(star.size());
    for (std::size_t i = 0; i < star.size(); ++i) parent[i] = static_cast<int>(i);
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::unordered_map<int, int> other_end;  // neighbor vertex -> star slot seen first
    int components = static_cast<int>(star.size());
    for (std::size_t i = 0; i < star.size(); ++i) {
        const auto& t = mesh.faces[star[i]];
        for (int c = 0; c < 3; ++c) {
            if (t[c] == v) continue;
            auto [it, inserted] = other_end.try_emplace(t[c], static_cast<int>(i));
            if (!inserted) {
                int a = find(it->second), b = find(static_cast<int>(i));
                if (a != b) {
                    parent[a] = b;
                    --components;
                }
            }
        }
    }
    return components == 1;
}

}  // namespace

TopologyReport validate_topology(const TriMesh& mesh) {
    check_mesh_invariants(mesh);
    MeshConnectivity conn = build_connectivity(mesh);

    for (std::size_t e = 0; e < conn.edges.size(); ++e) {
        if (conn.edge_faces[e][1] == -2)
            throw NumericalError("non-manifold edge (" + std::to_string(conn.edges[e][0]) + ", " +
                                 std::to_string(conn.edges[e][1]) + ") borders more than two faces");
    }
    for (int v = 0; v < mesh.vertex_count(); ++v) {
        if (!vertex_is_single_fan(mesh, conn, v))
            throw NumericalError("non-manifold vertex " + std::to_string(v) +
                                 ": incident faces do not form a single fan");
    }

    // Directed boundary half-edges: a face edge whose undirected edge has a
    // single bordering face. Loops are counted by walking source -> target.
    std::unordered_map<int, int> next_on_boundary;
    {
        std::unordered_map<std::uint64_t, int> edge_face_count;
        auto key = [](int a, int b) {
            if (a > b) std::swap(a, b);
            return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
        };
        for (const auto& t : mesh.faces)
            for (int c = 0; c < 3; ++c) ++edge_face_count[key(t[c], t[(c + 1) % 3])];
        for (const auto& t : mesh.faces) {
            for (int c = 0; c < 3; ++c) {
                int a = t[c], b = t[(c + 1) % 3];
                if (edge_face_count[key(a, b)] == 1) {
                    auto [it, inserted] = next_on_boundary.emplace(a, b);
                    if (!inserted)
                        throw NumericalError("non-manifold boundary at vertex " + std::to_string(a));
                }
            }
        }
    }

    int loops = 0;
    std::set<int> unvisited;
    for (const auto& [a, b] : next_on_boundary) unvisited.insert(a);
    while (!unvisited.empty()) {
        int start = *unvisited.begin();
        int cur = start;
        do {
            unvisited.erase(cur);
            auto it = next_on_boundary.find(cur);
            if (it == next_on_boundary.end())
                throw NumericalError("open boundary chain at vertex " + std::to_string(cur));
            cur = it->second;
        } while (cur != start);
        ++loops;
    }

    TopologyReport report;
    report.edge_count = static_cast<int>(conn.edges.size());
    report.euler_characteristic = mesh.vertex_count() - report.edge_count + mesh.face_count();
    report.boundary_loop_count = loops;
    report.is_simply_connected_open = (report.euler_characteristic == 1 && loops == 1);
    report.genus = (2 - report.euler_characteristic - loops) / 2;
    return report;
}

std::vector<int> extract_boundary(const TriMesh& mesh) {
    std::unordered_map<std::uint64_t, int> edge_face_count;
    auto key = [](int a, int b) {
        if (a > b) std::swap(a, b);
        return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
    };
    for (const auto& t : mesh.faces)
        for (int c = 0; c < 3; ++c) ++edge_face_count[key(t[c], t[(c + 1) % 3])];

    std::unordered_map<int, int> next_on_boundary;
    for (const auto& t : mesh.faces) {
        for (int c = 0; c < 3; ++c) {
            int a = t[c], b = t[(c + 1) % 3];
            if (edge_face_count[key(a, b)] == 1) {
                // Walking boundary half-edges in their own face direction keeps
                // the loop orientation consistent with the face orientation.
                auto [it, inserted] = next_on_boundary.emplace(a, b);
                if (!inserted) throw NumericalError("non-manifold boundary at vertex " + std::to_string(a));
            }
        }
    }
    if (next_on_boundary.empty()) throw InputError("mesh has no boundary (closed surface)");

    int start = next_on_boundary.begin()->first;
    for (const auto& [a, b] : next_on_boundary) start = std::min(start, a);
    std::vector<int> loop;
    int cur = start;
    do {
        loop.push_back(cur);
        auto it = next_on_boundary.find(cur);
        if (it == next_on_boundary.end())
            throw NumericalError("open boundary chain at vertex " + std::to_string(cur));
        cur = it->second;
    } while (cur != start);

    if (loop.size() != next_on_boundary.size())
        throw InputError("mesh has multiple boundary loops (" + std::to_string(loop.size()) + " of " +
                         std::to_string(next_on_boundary.size()) + " boundary vertices on the first loop)");
    return loop;
}

LandmarkCorrespondence load_landmarks(const std::filesystem::path& path, const TriMesh& source,
                                      const TriMesh& target) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open landmark file " + path.string());
    LineReader reader(in, path.string());
    LandmarkCorrespondence lm;
    while (reader.next(true)) {
        auto toks = tokenize(reader.line);
        if (toks.size() != 2) reader.fail("expected 'src_index target_index'");
        long s = parse_int(reader, toks[0]);
        long t = parse_int(reader, toks[1]);
        if (s < 0 || s >= source.vertex_count())
            reader.fail("source index " + std::to_string(s) + " out of range [0, " +
                        std::to_string(source.vertex_count()) + ")");
        if (t < 0 || t >= target.vertex_count())
            reader.fail("target index " + std::to_string(t) + " out of range [0, " +
                        std::to_string(target.vertex_count()) + ")");
        lm.source_vertex_ids.push_back(static_cast<int>(s));
        lm.target_vertex_ids.push_back(static_cast<int>(t));
    }
    if (lm.size() == 0) throw InputError(path.string() + ": landmark file is empty (k >= 1 required)");
    for (int side = 0; side < 2; ++side) {
        const auto& ids = side == 0 ? lm.source_vertex_ids : lm.target_vertex_ids;
        std::set<int> seen;
        for (int id : ids)
            if (!seen.insert(id).second)
                throw InputError(path.string() + ": duplicate " + (side == 0 ? "source" : "target") +
                                 " landmark index " + std::to_string(id));
    }
    return lm;
}

}  // namespace qcm
