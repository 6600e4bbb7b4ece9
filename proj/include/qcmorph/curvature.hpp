#pragma once

#include "qcmorph/mesh.hpp"
#include "qcmorph/parallel.hpp"

#include <filesystem>
#include <vector>

namespace qcm {

/// Per-vertex curvature estimates. Units: mean 1/length, gaussian 1/length²,
/// principal 1/length, mixed_area length².
struct CurvatureField {
    std::vector<double> mean;
    std::vector<double> gaussian;
    std::vector<double> kappa1;  // kappa1 >= kappa2 everywhere
    std::vector<double> kappa2;
    std::vector<double> mixed_area;
};

enum class NormalizeRange { Unit, Symmetric };  // [0,1] or [-1,1]

struct NormalizedField {
    std::vector<double> values;
    NormalizeRange range = NormalizeRange::Unit;
    double input_min = 0;  // affine map actually used
    double input_max = 0;
    bool degenerate_range = false;  // max == min: output forced to all zeros
};

/// Angle-defect Gaussian curvature: (2π − Σ incident angles)/A_mixed at
/// interior vertices, (π − Σ)/A_mixed on the boundary. Mixed-Voronoi areas
/// use the obtuse-safe variant. Throws NumericalError on a zero mixed area.
std::vector<double> gaussian_curvature(const TriMesh& mesh, ExecMode mode = default_exec_mode());

/// Cotangent-Laplacian mean curvature, signed positive on regions convex
/// with respect to the outward normal.
std::vector<double> mean_curvature(const TriMesh& mesh, ExecMode mode = default_exec_mode());

/// κ = H ± sqrt(max(H² − K, 0)); the discriminant is clamped at zero when
/// discretization noise makes H² < K.
void principal_curvatures(const std::vector<double>& mean, const std::vector<double>& gaussian,
                          std::vector<double>& kappa1, std::vector<double>& kappa2);

CurvatureField curvature_field(const TriMesh& mesh, ExecMode mode = default_exec_mode());

std::vector<double> mixed_voronoi_areas(const TriMesh& mesh, ExecMode mode = default_exec_mode());

/// Monotone affine map onto [0,1] (Unit) or [-1,1] (Symmetric) using the
/// exact min/max, or percentile-clipped bounds when clip_percentile > 0.
/// A degenerate range (max == min) yields all zeros with a warning.
NormalizedField normalize_field(const std::vector<double>& values, NormalizeRange range,
                                double clip_percentile = 0.0);

/// CSV rows: vertex,mean,gaussian,kappa1,kappa2,mixed_area
void export_curvature_csv(const CurvatureField& field, const std::filesystem::path& path);

}  // namespace qcm
