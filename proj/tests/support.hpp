#pragma once

// Shared mesh builders with analytically known geometry, used as oracles
// across the test suites.

#include "qcmorph/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace qcmtest {

using qcm::TriMesh;
using qcm::Vec3;

/// Flat nx × ny grid in the z = 0 plane, spacing h, faces CCW from +z.
inline TriMesh grid_patch(int nx, int ny, double h = 1.0) {
    TriMesh mesh;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) mesh.vertices.emplace_back(i * h, j * h, 0.0);
    auto id = [&](int i, int j) { return j * nx + i; };
    for (int j = 0; j + 1 < ny; ++j) {
        for (int i = 0; i + 1 < nx; ++i) {
            mesh.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    }
    return mesh;
}

/// Height-field over the grid: z = f(x, y), same connectivity as grid_patch.
inline TriMesh height_field(int nx, int ny, double h, const std::function<double(double, double)>& f) {
    TriMesh mesh = grid_patch(nx, ny, h);
    for (auto& v : mesh.vertices) v.z() = f(v.x(), v.y());
    return mesh;
}

inline TriMesh closed_tetrahedron() {
    TriMesh mesh;
    mesh.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, std::sqrt(3.0) / 2, 0),
                     Vec3(0.5, std::sqrt(3.0) / 6, std::sqrt(6.0) / 3)};
    mesh.faces = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {2, 0, 3}};
    return mesh;
}

inline TriMesh open_tetrahedron() {
    TriMesh mesh = closed_tetrahedron();
    mesh.faces.erase(mesh.faces.begin());  // drop the base face
    return mesh;
}

/// Icosphere of the given radius: subdivided icosahedron, vertices projected
/// onto the sphere. Closed, genus 0, outward-oriented.
inline TriMesh icosphere(int subdivisions, double radius = 1.0) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                               {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                               {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
        {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
        {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (auto& v : verts) v.normalize();

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto [it, inserted] = midpoint.try_emplace(key, static_cast<int>(verts.size()));
            if (inserted) verts.push_back(((verts[a] + verts[b]) / 2).normalized());
            return it->second;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& t : faces) {
            int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
            next.push_back({t[0], ab, ca});
            next.push_back({t[1], bc, ab});
            next.push_back({t[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces.swap(next);
    }
    TriMesh mesh;
    mesh.vertices = std::move(verts);
    for (auto& v : mesh.vertices) v *= radius;
    mesh.faces = std::move(faces);
    return mesh;
}

/// Open axial strip of a cylinder of the given radius (x-axis aligned),
/// spanning angle span around the top. Interior vertices have H = 1/(2r),
/// K = 0 with outward (upward) normals.
inline TriMesh cylinder_strip(double radius, int n_axial = 30, int n_angular = 30, double length = 2.0,
                              double span = 1.5) {
    TriMesh mesh;
    for (int j = 0; j < n_angular; ++j) {
        double theta = std::numbers::pi / 2 + span * (static_cast<double>(j) / (n_angular - 1) - 0.5);
        for (int i = 0; i < n_axial; ++i) {
            double x = length * (static_cast<double>(i) / (n_axial - 1) - 0.5);
            mesh.vertices.emplace_back(x, radius * std::cos(theta), radius * std::sin(theta));
        }
    }
    auto id = [&](int i, int j) { return j * n_axial + i; };
    for (int j = 0; j + 1 < n_angular; ++j) {
        for (int i = 0; i + 1 < n_axial; ++i) {
            mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i + 1, j)});
            mesh.faces.push_back({id(i, j), id(i, j + 1), id(i + 1, j + 1)});
        }
    }
    // Fix orientation so normals point away from the axis (outward).
    for (auto& t : mesh.faces) {
        Vec3 c = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3;
        Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
        Vec3 radial(0, c.y(), c.z());
        if (n.dot(radial) < 0) std::swap(t[1], t[2]);
    }
    return mesh;
}

/// Spherical cap (top of a unit sphere), open disk topology.
inline TriMesh hemisphere_cap(int resolution = 24, double polar_angle = 1.1) {
    TriMesh mesh = grid_patch(resolution, resolution, 1.0 / (resolution - 1));
    // Map the unit square onto a polar cap via the disk.
    std::vector<int> keep(mesh.vertices.size(), -1);
    TriMesh cap;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        double x = 2 * mesh.vertices[v].x() - 1, y = 2 * mesh.vertices[v].y() - 1;
        double r = std::sqrt(x * x + y * y);
        if (r > 1 + 1e-9) continue;
        keep[v] = cap.vertex_count();
        double theta = polar_angle * r;
        double az = std::atan2(y, x);
        cap.vertices.emplace_back(std::sin(theta) * std::cos(az), std::sin(theta) * std::sin(az),
                                  std::cos(theta));
    }
    for (const auto& t : mesh.faces) {
        if (keep[t[0]] < 0 || keep[t[1]] < 0 || keep[t[2]] < 0) continue;
        cap.faces.push_back({keep[t[0]], keep[t[1]], keep[t[2]]});
    }
    // Drop vertices that lost all faces.
    std::vector<int> used(cap.vertex_count(), 0);
    for (const auto& t : cap.faces)
        for (int c : t) used[c] = 1;
    std::vector<int> remap(cap.vertex_count(), -1);
    TriMesh out;
    for (int v = 0; v < cap.vertex_count(); ++v) {
        if (!used[v]) continue;
        remap[v] = out.vertex_count();
        out.vertices.push_back(cap.vertices[v]);
    }
    for (auto t : cap.faces) out.faces.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
    return out;
}

/// Removes faces with centroid x beyond a threshold chosen so that the given
/// fraction of the 3D surface area is cut away; compacts vertices and remaps
/// the given landmark ids (which must survive).
inline TriMesh crop_by_area(const TriMesh& mesh, double fraction_removed, std::vector<int>& landmarks) {
    std::vector<std::pair<double, int>> by_x;  // (centroid x, face)
    double total = 0;
    for (int f = 0; f < mesh.face_count(); ++f) {
        double cx = (mesh.vertices[mesh.faces[f][0]].x() + mesh.vertices[mesh.faces[f][1]].x() +
                     mesh.vertices[mesh.faces[f][2]].x()) /
                    3.0;
        by_x.push_back({cx, f});
        total += mesh.face_area(f);
    }
    std::sort(by_x.begin(), by_x.end());
    double acc = 0;
    std::vector<char> keep(mesh.face_count(), 0);
    std::size_t i = 0;
    for (; i < by_x.size() && acc < (1 - fraction_removed) * total; ++i) {
        keep[by_x[i].second] = 1;
        acc += mesh.face_area(by_x[i].second);
    }

    std::vector<int> remap(mesh.vertex_count(), -1);
    TriMesh out;
    for (int f = 0; f < mesh.face_count(); ++f) {
        if (!keep[f]) continue;
        std::array<int, 3> t{};
        for (int c = 0; c < 3; ++c) {
            int v = mesh.faces[f][c];
            if (remap[v] < 0) {
                remap[v] = out.vertex_count();
                out.vertices.push_back(mesh.vertices[v]);
            }
            t[c] = remap[v];
        }
        out.faces.push_back(t);
    }
    for (int& lm : landmarks) {
        if (remap[lm] < 0) throw std::runtime_error("crop_by_area: landmark cropped away");
        lm = remap[lm];
    }
    return out;
}

}  // namespace qcmtest
