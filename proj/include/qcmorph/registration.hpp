#pragma once

#include "qcmorph/conformal.hpp"
#include "qcmorph/curvature.hpp"
#include "qcmorph/mesh.hpp"
#include "qcmorph/parallel.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace qcm {

struct RegistrationConfig {
    int n_iter = 20;               // outer iteration cap
    double lambda = 0.1;           // weight of the |mu|² energy term
    int demons_grid = 256;         // raster resolution (longest axis)
    double demons_sigma = 4.0;     // Gaussian smoothing std, in grid cells
    int demons_steps_per_outer = 10;
    double mu_cap = 0.97;          // |mu| clip before each map reconstruction
    double ssd_rel_tol = 1e-4;     // early-stop on relative SSD improvement

    void validate() const;
};

/// Axis-aligned raster geometry: world = origin + spacing * (px, py), with
/// (0,0) at the center of pixel (0,0). Pixels are square.
struct GridGeometry {
    double origin_x = 0, origin_y = 0;
    double spacing = 1;
    int width = 0, height = 0;

    Vec2 pixel_center(int px, int py) const {
        return {origin_x + spacing * px, origin_y + spacing * py};
    }
    Vec2 to_pixel(const Vec2& world) const {
        return {(world.x() - origin_x) / spacing, (world.y() - origin_y) / spacing};
    }
    int size() const { return width * height; }
    bool same_as(const GridGeometry& other) const;
};

/// Scalar raster with a coverage mask (pixels whose center lies inside the
/// flattened domain).
struct IntensityImage {
    GridGeometry grid;
    std::vector<double> values;  // row-major, height*width; 0 outside mask
    std::vector<std::uint8_t> mask;
    bool coarse_coverage_warning = false;

    int covered_count() const;
};

struct DisplacementField {
    GridGeometry grid;
    std::vector<double> dx, dy;

    static DisplacementField zero(const GridGeometry& g) {
        return {g, std::vector<double>(g.size(), 0.0), std::vector<double>(g.size(), 0.0)};
    }

    /// Bilinear sample at a world point; coordinates clamp to the grid.
    Vec2 sample(const Vec2& world) const;
};

struct DemonsStats {
    double ssd = 0;            // final intensity SSD over the mask overlap
    int accepted_steps = 0;
    int rejected_steps = 0;
    bool fixed_all_masked = false;
};

struct IterationEnergy {
    double intensity = 0;  // ∫ (deformed source − target)² over the overlap
    double mu_l2 = 0;      // λ ∫ |mu|²
    double mu_grad = 0;    // ∫ |∇mu|²
};

/// Barycentric reference into a target mesh.
struct BaryRef {
    int face = -1;
    Vec3 bary = Vec3::Zero();
    bool clamped = false;  // projected onto the nearest face instead of contained
};

struct OverlapResult {
    std::vector<std::uint8_t> omega1_faces;  // source-face mask
    std::vector<std::uint8_t> omega2_faces;  // target-face mask
    std::vector<BaryRef> correspondence;     // per source vertex; face < 0 if unused
};

struct RegistrationResult {
    const TriMesh* source_mesh = nullptr;
    const TriMesh* target_mesh = nullptr;
    std::vector<Vec2> map_points;       // h(v) for each source vertex, target plane
    std::vector<Vec2> target_points;    // similarity-aligned target embedding
    Eigen::Matrix2d align_linear;       // target pre-alignment: x -> A x + t
    Vec2 align_translation = Vec2::Zero();
    OverlapResult overlap;
    std::vector<IterationEnergy> trace; // one entry per completed outer iteration
    BeltramiField mu;                   // final per-face coefficient of h
    double landmark_residual_max = 0;   // absolute planar units
    double domain_diameter = 0;         // diagonal of the common raster bbox
    int iterations = 0;
    bool early_stopped = false;
};

/// Maps the source common region onto the target surface in 3D.
struct SurfaceCorrespondence {
    std::vector<int> source_vertices;     // vertices of Ω₁ faces
    std::vector<Vec3> target_positions;   // barycentric lift through the target mesh
    std::vector<double> mu_abs_omega1;    // per Ω₁ face, copied from the planar map
};

/// Barycentric rasterization of a per-vertex field in [0,1] onto the grid.
/// `positions` override the embedding coordinates (pass embedding.uv for the
/// rest pose). Throws NumericalError when nothing is covered.
IntensityImage rasterize_intensity(const PlanarEmbedding& embedding, const std::vector<Vec2>& positions,
                                   const std::vector<double>& vertex_values, const GridGeometry& grid,
                                   ExecMode mode = default_exec_mode());

/// Convenience overload: builds a square-pixel grid over the embedding bbox
/// with `resolution` pixels along the longest axis.
IntensityImage rasterize_intensity(const PlanarEmbedding& embedding, const NormalizedField& vertex_values,
                                   int resolution, ExecMode mode = default_exec_mode());

GridGeometry make_grid(const Vec2& lo, const Vec2& hi, int resolution, double margin_fraction = 0.08);

/// One demons phase: `steps` force+smooth updates of the displacement field,
/// each accepted only if the masked SSD does not increase (step halving, then
/// rejection). Masked pixels receive zero force.
DemonsStats demons_update(const IntensityImage& moving, const IntensityImage& fixed,
                          DisplacementField& displacement, const RegistrationConfig& config,
                          ExecMode mode = default_exec_mode());

double masked_ssd(const IntensityImage& moving, const IntensityImage& fixed,
                  const DisplacementField& displacement);

/// Alternating intensity matching and landmark-exact map reconstruction on the
/// flattened domains. The final step always re-imposes the landmarks exactly.
RegistrationResult inconsistent_planar_register(const PlanarEmbedding& emb1, const PlanarEmbedding& emb2,
                                                const NormalizedField& intensity1,
                                                const NormalizedField& intensity2,
                                                const LandmarkCorrespondence& landmarks,
                                                const RegistrationConfig& config,
                                                ExecMode mode = default_exec_mode());

/// Ω₁: source faces whose three mapped vertices land inside the target domain.
/// Ω₂: target faces whose centroid lies inside the mapped Ω₁ region. Landmark
/// vertices are force-included on both sides.
OverlapResult extract_overlap(const std::vector<Vec2>& map_points, const PlanarEmbedding& emb1,
                              const std::vector<Vec2>& target_points, const PlanarEmbedding& emb2,
                              const LandmarkCorrespondence& landmarks);

/// f = (target flattening)⁻¹ ∘ h ∘ (source flattening), evaluated per Ω₁
/// vertex as a 3D point on the target surface.
SurfaceCorrespondence compose_registration(const PlanarEmbedding& emb1, const RegistrationResult& reg,
                                           const PlanarEmbedding& emb2);

/// JSON report: config echo, energy trace, landmark residuals, area fractions,
/// |mu| summary statistics.
void write_registration_report(const RegistrationResult& reg, const TriMesh& mesh1, const TriMesh& mesh2,
                               const RegistrationConfig& config, const std::filesystem::path& path);

}  // namespace qcm
