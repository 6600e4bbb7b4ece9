#pragma once

#include "qcmorph/mesh.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace qcm {

/// One generated specimen: a simply-connected open height-field patch over a
/// disk with four cusp-like bumps; landmarks sit at the four bump apices.
struct SyntheticSpecimen {
    std::string id;
    std::string class_label;
    TriMesh mesh;
    std::vector<int> landmarks;  // 4 vertex ids, fixed bump order
};

struct SyntheticParams {
    int class_count = 3;
    int per_class = 5;
    int resolution = 40;  // grid points per axis; ~(π/4)·resolution² vertices
    std::uint64_t seed = 7;
};

/// Structured triangulation of the unit disk (cells kept only when all four
/// corners are inside), lifted by the height function z(x, y).
TriMesh disk_grid_mesh(int resolution, const std::function<double(double, double)>& height);

/// Deterministic for a fixed seed: classes differ in bump height/width (cusp
/// morphology), specimens within a class carry small seeded jitter.
std::vector<SyntheticSpecimen> generate_synthetic_specimens(const SyntheticParams& params);

/// Writes OFF meshes plus a dataset manifest into out_dir; byte-identical for
/// identical parameters. Returns the manifest path.
std::filesystem::path generate_synthetic(const SyntheticParams& params, const std::filesystem::path& out_dir);

}  // namespace qcm
