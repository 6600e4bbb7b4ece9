#include "qcmorph/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

namespace qcm {

TriMesh disk_grid_mesh(int resolution, const std::function<double(double, double)>& height) {
    if (resolution < 4) throw InputError("disk_grid_mesh: resolution must be >= 4");
    const int n = resolution;
    auto coord = [&](int i) { return -1.0 + 2.0 * i / (n - 1); };
    auto inside = [&](int i, int j) {
        double x = coord(i), y = coord(j);
        return x * x + y * y <= 1.0 + 1e-12;
    };

    std::vector<int> vertex_id(static_cast<std::size_t>(n) * n, -1);
    TriMesh mesh;
    auto require_vertex = [&](int i, int j) {
        int& id = vertex_id[static_cast<std::size_t>(j) * n + i];
        if (id < 0) {
            double x = coord(i), y = coord(j);
            id = mesh.vertex_count();
            mesh.vertices.emplace_back(x, y, height(x, y));
        }
        return id;
    };

    for (int j = 0; j + 1 < n; ++j) {
        for (int i = 0; i + 1 < n; ++i) {
            if (!(inside(i, j) && inside(i + 1, j) && inside(i, j + 1) && inside(i + 1, j + 1))) continue;
            int v00 = require_vertex(i, j), v10 = require_vertex(i + 1, j);
            int v01 = require_vertex(i, j + 1), v11 = require_vertex(i + 1, j + 1);
            // CCW as seen from +z, matching the upward height-field normal
            mesh.faces.push_back({v00, v10, v11});
            mesh.faces.push_back({v00, v11, v01});
        }
    }
    check_mesh_invariants(mesh);
    return mesh;
}

namespace {

struct Bump {
    double cx, cy, height, width;
};

constexpr double kBumpBase = 0.45;  // apex positions (±base, ±base), fixed order

std::array<Bump, 4> class_bumps(int class_index) {
    // Classes mimic cusp-morphology differences: taller, narrower cusps raise
    // the tip curvature while keeping the apex layout (and hence the landmark
    // configuration) nearly identical across classes.
    int c = class_index % 5;
    double h = 0.50 + 0.15 * c;
    double w = 0.30 - 0.045 * c;
    return {Bump{-kBumpBase, -kBumpBase, h, w}, Bump{kBumpBase, -kBumpBase, h, w},
            Bump{kBumpBase, kBumpBase, h, w}, Bump{-kBumpBase, kBumpBase, h, w}};
}

int hill_climb(const TriMesh& mesh, const MeshConnectivity& conn, int start) {
    int cur = start;
    while (true) {
        int best = cur;
        double best_z = mesh.vertices[cur].z();
        for (int f : conn.vertex_faces[cur]) {
            for (int c = 0; c < 3; ++c) {
                int v = mesh.faces[f][c];
                if (mesh.vertices[v].z() > best_z || (mesh.vertices[v].z() == best_z && v < best)) {
                    best_z = mesh.vertices[v].z();
                    best = v;
                }
            }
        }
        if (best == cur) return cur;
        cur = best;
    }
}

}  // namespace

std::vector<SyntheticSpecimen> generate_synthetic_specimens(const SyntheticParams& params) {
    if (params.class_count < 1 || params.per_class < 1)
        throw InputError("generate_synthetic: class_count and per_class must be >= 1");
    std::mt19937_64 rng(params.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    std::vector<SyntheticSpecimen> out;
    for (int c = 0; c < params.class_count; ++c) {
        for (int s = 0; s < params.per_class; ++s) {
            std::array<Bump, 4> bumps = class_bumps(c);
            for (auto& b : bumps) {
                b.cx += 0.02 * unit(rng);
                b.cy += 0.02 * unit(rng);
                b.height *= 1.0 + 0.04 * unit(rng);
                b.width *= 1.0 + 0.04 * unit(rng);
            }
            auto height = [&bumps](double x, double y) {
                double z = 0;
                for (const auto& b : bumps) {
                    double dx = x - b.cx, dy = y - b.cy;
                    z += b.height * std::exp(-(dx * dx + dy * dy) / (b.width * b.width));
                }
                return z;
            };

            SyntheticSpecimen spec;
            spec.id = "c" + std::to_string(c) + "_s" + std::to_string(s);
            spec.class_label = "class" + std::to_string(c);
            spec.mesh = disk_grid_mesh(params.resolution, height);

            MeshConnectivity conn = build_connectivity(spec.mesh);
            for (const auto& b : bumps) {
                int nearest = 0;
                double best = std::numeric_limits<double>::max();
                for (int v = 0; v < spec.mesh.vertex_count(); ++v) {
                    double dx = spec.mesh.vertices[v].x() - b.cx, dy = spec.mesh.vertices[v].y() - b.cy;
                    double d2 = dx * dx + dy * dy;
                    if (d2 < best) {
                        best = d2;
                        nearest = v;
                    }
                }
                spec.landmarks.push_back(hill_climb(spec.mesh, conn, nearest));
            }
            out.push_back(std::move(spec));
        }
    }
    return out;
}

std::filesystem::path generate_synthetic(const SyntheticParams& params, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    auto specimens = generate_synthetic_specimens(params);

    nlohmann::ordered_json manifest;
    manifest["specimens"] = nlohmann::ordered_json::array();
    for (const auto& spec : specimens) {
        std::string mesh_name = spec.id + ".off";
        save_off(spec.mesh, out_dir / mesh_name);
        manifest["specimens"].push_back({{"id", spec.id},
                                         {"mesh", mesh_name},
                                         {"landmarks", spec.landmarks},
                                         {"class", spec.class_label}});
    }
    std::filesystem::path manifest_path = out_dir / "manifest.json";
    std::ofstream out(manifest_path);
    if (!out) throw InputError("cannot open " + manifest_path.string() + " for writing");
    out << manifest.dump(2) << "\n";
    return manifest_path;
}

}  // namespace qcm
