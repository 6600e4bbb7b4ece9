#include "qcmorph/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace qcm {

namespace {

double corner_angle(const Vec3& at, const Vec3& a, const Vec3& b) {
    Vec3 u = a - at, v = b - at;
    double c = u.dot(v);
    double s = u.cross(v).norm();
    return std::atan2(s, c);
}

double cot(double angle) { return std::cos(angle) / std::sin(angle); }

}  // namespace

std::vector<double> mixed_voronoi_areas(const TriMesh& mesh, ExecMode mode) {
    MeshConnectivity conn = build_connectivity(mesh);
    std::vector<double> area(mesh.vertex_count(), 0.0);
    parallel_for(mesh.vertex_count(), [&](std::ptrdiff_t v) {
        double acc = 0;
        for (int f : conn.vertex_faces[v]) {
            const auto& t = mesh.faces[f];
            int c = t[0] == v ? 0 : (t[1] == v ? 1 : 2);
            const Vec3& p = mesh.vertices[t[c]];
            const Vec3& q = mesh.vertices[t[(c + 1) % 3]];
            const Vec3& r = mesh.vertices[t[(c + 2) % 3]];
            double ang_p = corner_angle(p, q, r);
            double ang_q = corner_angle(q, r, p);
            double ang_r = corner_angle(r, p, q);
            double tri_area = 0.5 * (q - p).cross(r - p).norm();
            constexpr double half_pi = std::numbers::pi / 2;
            if (ang_p > half_pi) {
                acc += tri_area / 2;
            } else if (ang_q > half_pi || ang_r > half_pi) {
                acc += tri_area / 4;
            } else {
                // Voronoi-safe: 1/8 (|pr|² cot(ang_q) + |pq|² cot(ang_r))
                acc += ((r - p).squaredNorm() * cot(ang_q) + (q - p).squaredNorm() * cot(ang_r)) / 8.0;
            }
        }
        area[v] = acc;
    }, mode);
    return area;
}

std::vector<double> gaussian_curvature(const TriMesh& mesh, ExecMode mode) {
    MeshConnectivity conn = build_connectivity(mesh);
    std::vector<double> areas = mixed_voronoi_areas(mesh, mode);
    std::vector<double> K(mesh.vertex_count(), 0.0);
    std::vector<char> degenerate(mesh.vertex_count(), 0);
    parallel_for(mesh.vertex_count(), [&](std::ptrdiff_t v) {
        double angle_sum = 0;
        for (int f : conn.vertex_faces[v]) {
            const auto& t = mesh.faces[f];
            int c = t[0] == v ? 0 : (t[1] == v ? 1 : 2);
            angle_sum += corner_angle(mesh.vertices[t[c]], mesh.vertices[t[(c + 1) % 3]],
                                      mesh.vertices[t[(c + 2) % 3]]);
        }
        if (areas[v] <= 0) {
            degenerate[v] = 1;
            return;
        }
        double defect = (conn.vertex_on_boundary[v] ? std::numbers::pi : 2 * std::numbers::pi) - angle_sum;
        K[v] = defect / areas[v];
    }, mode);
    for (int v = 0; v < mesh.vertex_count(); ++v)
        if (degenerate[v])
            throw NumericalError("zero mixed area at vertex " + std::to_string(v) + " (degenerate star)");
    return K;
}

std::vector<double> mean_curvature(const TriMesh& mesh, ExecMode mode) {
    MeshConnectivity conn = build_connectivity(mesh);
    std::vector<double> areas = mixed_voronoi_areas(mesh, mode);
    std::vector<double> H(mesh.vertex_count(), 0.0);
    std::vector<char> degenerate(mesh.vertex_count(), 0);
    parallel_for(mesh.vertex_count(), [&](std::ptrdiff_t v) {
        if (areas[v] <= 0) {
            degenerate[v] = 1;
            return;
        }
        Vec3 lap = Vec3::Zero();    // ½ Σ (cot α + cot β)(x_u − x_v), both halves
        Vec3 normal = Vec3::Zero(); // area-weighted vertex normal for the sign
        for (int f : conn.vertex_faces[v]) {
            const auto& t = mesh.faces[f];
            int c = t[0] == v ? 0 : (t[1] == v ? 1 : 2);
            const Vec3& p = mesh.vertices[t[c]];
            const Vec3& a = mesh.vertices[t[(c + 1) % 3]];
            const Vec3& b = mesh.vertices[t[(c + 2) % 3]];
            // edge (v,a) is opposite the corner at b, edge (v,b) opposite at a
            lap += 0.5 * cot(corner_angle(b, p, a)) * (a - p);
            lap += 0.5 * cot(corner_angle(a, b, p)) * (b - p);
            normal += (a - p).cross(b - p);  // 2·area·unit normal
        }
        // lap ≈ A_mixed · Δx = −2 A_mixed H n
        double magnitude = lap.norm() / (2 * areas[v]);
        double sign = lap.dot(normal) > 0 ? -1.0 : 1.0;
        H[v] = sign * magnitude;
    }, mode);
    for (int v = 0; v < mesh.vertex_count(); ++v)
        if (degenerate[v])
            throw NumericalError("zero mixed area at vertex " + std::to_string(v) + " (degenerate star)");
    return H;
}

void principal_curvatures(const std::vector<double>& mean, const std::vector<double>& gaussian,
                          std::vector<double>& kappa1, std::vector<double>& kappa2) {
    kappa1.resize(mean.size());
    kappa2.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        double disc = std::sqrt(std::max(mean[i] * mean[i] - gaussian[i], 0.0));
        kappa1[i] = mean[i] + disc;
        kappa2[i] = mean[i] - disc;
    }
}

CurvatureField curvature_field(const TriMesh& mesh, ExecMode mode) {
    CurvatureField field;
    field.mixed_area = mixed_voronoi_areas(mesh, mode);
    field.gaussian = gaussian_curvature(mesh, mode);
    field.mean = mean_curvature(mesh, mode);
    principal_curvatures(field.mean, field.gaussian, field.kappa1, field.kappa2);
    return field;
}

NormalizedField normalize_field(const std::vector<double>& values, NormalizeRange range,
                                double clip_percentile) {
    if (values.empty()) throw InputError("normalize_field: empty input");
    for (double v : values)
        if (!std::isfinite(v)) throw InputError("normalize_field: non-finite input value");

    double lo, hi;
    if (clip_percentile > 0) {
        std::vector<double> sorted(values);
        std::sort(sorted.begin(), sorted.end());
        auto at = [&](double p) {
            double idx = p * (sorted.size() - 1);
            std::size_t i = static_cast<std::size_t>(idx);
            double frac = idx - static_cast<double>(i);
            return i + 1 < sorted.size() ? sorted[i] * (1 - frac) + sorted[i + 1] * frac : sorted[i];
        };
        lo = at(clip_percentile);
        hi = at(1.0 - clip_percentile);
    } else {
        auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        lo = *mn;
        hi = *mx;
    }

    NormalizedField out;
    out.range = range;
    out.input_min = lo;
    out.input_max = hi;
    out.values.resize(values.size());
    if (hi <= lo) {
        out.degenerate_range = true;
        std::fill(out.values.begin(), out.values.end(), 0.0);
        log_warning("normalize_field: degenerate range (max == min), output forced to zeros");
        return out;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        double t = (std::clamp(values[i], lo, hi) - lo) / (hi - lo);
        out.values[i] = range == NormalizeRange::Unit ? t : 2 * t - 1;
    }
    return out;
}

void export_curvature_csv(const CurvatureField& field, const std::filesystem::path& path) {
    std::FILE* out = std::fopen(path.string().c_str(), "w");
    if (!out) throw InputError("cannot open " + path.string() + " for writing");
    std::fprintf(out, "vertex,mean,gaussian,kappa1,kappa2,mixed_area\n");
    for (std::size_t v = 0; v < field.mean.size(); ++v)
        std::fprintf(out, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", v, field.mean[v], field.gaussian[v],
                     field.kappa1[v], field.kappa2[v], field.mixed_area[v]);
    std::fclose(out);
}

}  // namespace qcm
