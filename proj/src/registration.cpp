#include "qcmorph/registration.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace qcm {

void RegistrationConfig::validate() const {
    if (n_iter < 1) throw InputError("registration config: n_iter must be >= 1");
    if (lambda < 0) throw InputError("registration config: lambda must be >= 0");
    if (demons_grid < 32) throw InputError("registration config: demons_grid must be >= 32");
    if (demons_sigma <= 0) throw InputError("registration config: demons_sigma must be > 0");
    if (demons_steps_per_outer < 1) throw InputError("registration config: demons_steps_per_outer must be >= 1");
    if (mu_cap <= 0 || mu_cap >= 1) throw InputError("registration config: mu_cap must be in (0,1)");
}

bool GridGeometry::same_as(const GridGeometry& o) const {
    return width == o.width && height == o.height && origin_x == o.origin_x && origin_y == o.origin_y &&
           spacing == o.spacing;
}

int IntensityImage::covered_count() const {
    int n = 0;
    for (auto m : mask) n += m != 0;
    return n;
}

Vec2 DisplacementField::sample(const Vec2& world) const {
    Vec2 p = grid.to_pixel(world);
    double px = std::clamp(p.x(), 0.0, static_cast<double>(grid.width - 1));
    double py = std::clamp(p.y(), 0.0, static_cast<double>(grid.height - 1));
    int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
    int x1 = std::min(x0 + 1, grid.width - 1), y1 = std::min(y0 + 1, grid.height - 1);
    double fx = px - x0, fy = py - y0;
    auto lerp = [&](const std::vector<double>& d) {
        double a = d[y0 * grid.width + x0] * (1 - fx) + d[y0 * grid.width + x1] * fx;
        double b = d[y1 * grid.width + x0] * (1 - fx) + d[y1 * grid.width + x1] * fx;
        return a * (1 - fy) + b * fy;
    };
    // displacement is stored in pixel units
    return {lerp(dx) * grid.spacing, lerp(dy) * grid.spacing};
}

GridGeometry make_grid(const Vec2& lo, const Vec2& hi, int resolution, double margin_fraction) {
    if (resolution < 2) throw InputError("grid resolution must be >= 2");
    Vec2 extent = hi - lo;
    double pad = margin_fraction * std::max(extent.x(), extent.y());
    Vec2 lo2 = lo - Vec2(pad, pad), hi2 = hi + Vec2(pad, pad);
    Vec2 ext2 = hi2 - lo2;
    GridGeometry g;
    g.spacing = std::max(ext2.x(), ext2.y()) / (resolution - 1);
    g.origin_x = lo2.x();
    g.origin_y = lo2.y();
    g.width = static_cast<int>(std::ceil(ext2.x() / g.spacing)) + 1;
    g.height = static_cast<int>(std::ceil(ext2.y() / g.spacing)) + 1;
    return g;
}

namespace {

struct BaryChecked {
    Vec3 bary;
    double min_coord;
};

BaryChecked barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
    double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
    if (det == 0) return {Vec3(0, 0, 0), -std::numeric_limits<double>::infinity()};
    double l1 = ((p.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (p.y() - a.y())) / det;
    double l2 = ((b.x() - a.x()) * (p.y() - a.y()) - (p.x() - a.x()) * (b.y() - a.y())) / det;
    double l0 = 1.0 - l1 - l2;
    return {Vec3(l0, l1, l2), std::min({l0, l1, l2})};
}

/// Uniform-bin point locator over a set of planar triangles.
class PointLocator {
public:
    PointLocator(const std::vector<std::array<int, 3>>& faces, const std::vector<Vec2>& pos,
                 const std::vector<int>& face_ids)
        : faces_(faces), pos_(pos) {
        lo_ = Vec2(std::numeric_limits<double>::max(), std::numeric_limits<double>::max());
        hi_ = -lo_;
        for (int f : face_ids)
            for (int c = 0; c < 3; ++c) {
                lo_ = lo_.cwiseMin(pos_[faces_[f][c]]);
                hi_ = hi_.cwiseMax(pos_[faces_[f][c]]);
            }
        if (face_ids.empty()) {
            lo_ = Vec2(0, 0);
            hi_ = Vec2(1, 1);
        }
        bins_per_axis_ = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(face_ids.size()) / 2) ));
        cell_ = (hi_ - lo_).cwiseMax(Vec2(1e-300, 1e-300)) / bins_per_axis_;
        bins_.resize(static_cast<std::size_t>(bins_per_axis_) * bins_per_axis_);
        for (int f : face_ids) {
            Vec2 flo = pos_[faces_[f][0]], fhi = flo;
            for (int c = 1; c < 3; ++c) {
                flo = flo.cwiseMin(pos_[faces_[f][c]]);
                fhi = fhi.cwiseMax(pos_[faces_[f][c]]);
            }
            auto [x0, y0] = bin_of(flo);
            auto [x1, y1] = bin_of(fhi);
            for (int by = y0; by <= y1; ++by)
                for (int bx = x0; bx <= x1; ++bx) bins_[by * bins_per_axis_ + bx].push_back(f);
        }
        face_ids_ = face_ids;
    }

    /// Containing face (tolerance on the barycentric minimum), or -1.
    int locate(const Vec2& p, Vec3* bary_out, double tol = 1e-9) const {
        if (p.x() < lo_.x() - tol || p.y() < lo_.y() - tol || p.x() > hi_.x() + tol || p.y() > hi_.y() + tol)
            return -1;
        auto [bx, by] = bin_of(p);
        int best = -1;
        double best_min = -tol;
        for (int f : bins_[by * bins_per_axis_ + bx]) {
            const auto& t = faces_[f];
            BaryChecked bc = barycentric(p, pos_[t[0]], pos_[t[1]], pos_[t[2]]);
            if (bc.min_coord > best_min || (bc.min_coord == best_min && best != -1 && f < best)) {
                best_min = bc.min_coord;
                best = f;
                if (bary_out) *bary_out = bc.bary;
            }
        }
        return best;
    }

    /// Nearest face by clamped barycentric projection (brute force fallback).
    int project(const Vec2& p, Vec3* bary_out) const {
        int best = -1;
        double best_d2 = std::numeric_limits<double>::max();
        for (int f : face_ids_) {
            const auto& t = faces_[f];
            BaryChecked bc = barycentric(p, pos_[t[0]], pos_[t[1]], pos_[t[2]]);
            Vec3 b = bc.bary.cwiseMax(0.0);
            double s = b.sum();
            if (s <= 0) continue;
            b /= s;
            Vec2 q = b[0] * pos_[t[0]] + b[1] * pos_[t[1]] + b[2] * pos_[t[2]];
            double d2 = (q - p).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best = f;
                if (bary_out) *bary_out = b;
            }
        }
        return best;
    }

private:
    std::pair<int, int> bin_of(const Vec2& p) const {
        int bx = static_cast<int>((p.x() - lo_.x()) / cell_.x());
        int by = static_cast<int>((p.y() - lo_.y()) / cell_.y());
        return {std::clamp(bx, 0, bins_per_axis_ - 1), std::clamp(by, 0, bins_per_axis_ - 1)};
    }

    const std::vector<std::array<int, 3>>& faces_;
    const std::vector<Vec2>& pos_;
    std::vector<int> face_ids_;
    Vec2 lo_, hi_, cell_;
    int bins_per_axis_ = 1;
    std::vector<std::vector<int>> bins_;
};

std::vector<int> all_face_ids(int n) {
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

/// Separable Gaussian blur in pixel space; border taps renormalize.
void gaussian_blur(std::vector<double>& img, int width, int height, double sigma, ExecMode mode,
                   std::vector<double>& scratch) {
    int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));

    scratch.resize(img.size());
    parallel_for(height, [&](std::ptrdiff_t y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0, wsum = 0;
            int k0 = std::max(-radius, -x), k1 = std::min(radius, width - 1 - x);
            for (int k = k0; k <= k1; ++k) {
                acc += kernel[k + radius] * img[y * width + x + k];
                wsum += kernel[k + radius];
            }
            scratch[y * width + x] = acc / wsum;
        }
    }, mode);
    parallel_for(height, [&](std::ptrdiff_t y) {
        int k0 = std::max<std::ptrdiff_t>(-radius, -y);
        int k1 = std::min<std::ptrdiff_t>(radius, height - 1 - y);
        for (int x = 0; x < width; ++x) {
            double acc = 0, wsum = 0;
            for (int k = k0; k <= k1; ++k) {
                acc += kernel[k + radius] * scratch[(y + k) * width + x];
                wsum += kernel[k + radius];
            }
            img[y * width + x] = acc / wsum;
        }
    }, mode);
}

/// Bilinear sample at pixel coordinates with a zero background: uncovered
/// pixels hold 0 by construction, and points outside the grid read as 0.
/// This realizes the union-of-supports intensity mismatch: where both images
/// are background the integrand vanishes.
double sample_background(const IntensityImage& img, double px, double py) {
    if (px < 0 || py < 0 || px > img.grid.width - 1 || py > img.grid.height - 1) return 0.0;
    int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
    int x1 = std::min(x0 + 1, img.grid.width - 1), y1 = std::min(y0 + 1, img.grid.height - 1);
    double fx = px - x0, fy = py - y0;
    double a = img.values[y0 * img.grid.width + x0] * (1 - fx) + img.values[y0 * img.grid.width + x1] * fx;
    double b = img.values[y1 * img.grid.width + x0] * (1 - fx) + img.values[y1 * img.grid.width + x1] * fx;
    return a * (1 - fy) + b * fy;
}

}  // namespace

IntensityImage rasterize_intensity(const PlanarEmbedding& embedding, const std::vector<Vec2>& positions,
                                   const std::vector<double>& vertex_values, const GridGeometry& grid,
                                   ExecMode mode) {
    const TriMesh& mesh = *embedding.mesh;
    if (static_cast<int>(vertex_values.size()) != mesh.vertex_count())
        throw InputError("rasterize_intensity: value count does not match vertex count");
    for (double v : vertex_values)
        if (!(v >= -1e-9 && v <= 1 + 1e-9)) throw InputError("rasterize_intensity: values must lie in [0,1]");

    PointLocator locator(mesh.faces, positions, all_face_ids(mesh.face_count()));

    IntensityImage img;
    img.grid = grid;
    img.values.assign(grid.size(), 0.0);
    img.mask.assign(grid.size(), 0);

    parallel_for(grid.height, [&](std::ptrdiff_t y) {
        for (int x = 0; x < grid.width; ++x) {
            Vec3 bary;
            int f = locator.locate(grid.pixel_center(x, static_cast<int>(y)), &bary, 1e-12);
            if (f < 0) continue;
            const auto& t = mesh.faces[f];
            double v = bary[0] * vertex_values[t[0]] + bary[1] * vertex_values[t[1]] + bary[2] * vertex_values[t[2]];
            img.values[y * grid.width + x] = std::clamp(v, 0.0, 1.0);
            img.mask[y * grid.width + x] = 1;
        }
    }, mode);

    int covered = img.covered_count();
    if (covered == 0) throw NumericalError("rasterize_intensity: empty coverage (degenerate embedding or grid)");
    if (covered < 16) {
        img.coarse_coverage_warning = true;
        log_warning("rasterize_intensity: only " + std::to_string(covered) +
                    " covered pixels; grid resolution is too coarse for this domain");
    }
    return img;
}

IntensityImage rasterize_intensity(const PlanarEmbedding& embedding, const NormalizedField& vertex_values,
                                   int resolution, ExecMode mode) {
    if (vertex_values.range != NormalizeRange::Unit)
        throw InputError("rasterize_intensity: intensities must be unit-normalized");
    Vec2 lo(std::numeric_limits<double>::max(), std::numeric_limits<double>::max()), hi = -lo;
    for (const auto& p : embedding.uv) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return rasterize_intensity(embedding, embedding.uv, vertex_values.values, make_grid(lo, hi, resolution), mode);
}

double intensity_ssd(const IntensityImage& moving, const IntensityImage& fixed,
                     const DisplacementField& displacement) {
    if (!moving.grid.same_as(fixed.grid)) throw InputError("intensity_ssd: grid geometry mismatch");
    if (static_cast<int>(displacement.dx.size()) != fixed.grid.size() ||
        static_cast<int>(displacement.dy.size()) != fixed.grid.size())
        throw InputError("intensity_ssd: displacement field does not match the grid");
    const int w = fixed.grid.width, h = fixed.grid.height;
    double ssd = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double m = sample_background(moving, x + displacement.dx[y * w + x], y + displacement.dy[y * w + x]);
            double diff = m - fixed.values[y * w + x];
            ssd += diff * diff;
        }
    }
    return ssd;
}

DemonsStats demons_update(const IntensityImage& moving, const IntensityImage& fixed,
                          DisplacementField& displacement, const RegistrationConfig& config,
                          ExecMode mode) {
    if (!moving.grid.same_as(fixed.grid)) throw InputError("demons_update: grid geometry mismatch");
    const int w = fixed.grid.width, h = fixed.grid.height;
    if (displacement.dx.empty()) {
        displacement.grid = fixed.grid;
        displacement.dx.assign(fixed.grid.size(), 0.0);
        displacement.dy.assign(fixed.grid.size(), 0.0);
    }
    if (!displacement.grid.same_as(fixed.grid)) throw InputError("demons_update: displacement grid mismatch");

    DemonsStats stats;
    if (fixed.covered_count() == 0) {
        stats.fixed_all_masked = true;
        log_warning("demons_update: fixed image has empty coverage; displacement left unchanged");
        return stats;
    }

    // Fixed-image gradient in pixel units; zero where the stencil leaves the mask.
    std::vector<double> gx(fixed.grid.size(), 0.0), gy(fixed.grid.size(), 0.0);
    parallel_for(h, [&](std::ptrdiff_t y) {
        for (int x = 1; x + 1 < w; ++x) {
            if (y < 1 || y + 1 >= h) continue;
            int i = static_cast<int>(y) * w + x;
            if (!fixed.mask[i] || !fixed.mask[i - 1] || !fixed.mask[i + 1] || !fixed.mask[i - w] ||
                !fixed.mask[i + w])
                continue;
            gx[i] = 0.5 * (fixed.values[i + 1] - fixed.values[i - 1]);
            gy[i] = 0.5 * (fixed.values[i + w] - fixed.values[i - w]);
        }
    }, mode);

    std::vector<double> fx(fixed.grid.size()), fy(fixed.grid.size());
    std::vector<double> cand_x, cand_y, scratch;
    double current_ssd = masked_ssd(moving, fixed, displacement);

    for (int step = 0; step < config.demons_steps_per_outer; ++step) {
        // Thirion force: (m∘d − f)·∇f / (‖∇f‖² + (m∘d − f)²)
        parallel_for(h, [&](std::ptrdiff_t y) {
            for (int x = 0; x < w; ++x) {
                int i = static_cast<int>(y) * w + x;
                fx[i] = fy[i] = 0;
                if (!fixed.mask[i]) continue;
                double m;
                if (!sample_masked(moving, x + displacement.dx[i], y + displacement.dy[i], &m)) continue;
                double diff = m - fixed.values[i];
                double denom = gx[i] * gx[i] + gy[i] * gy[i] + diff * diff;
                if (denom <= 1e-30) continue;
                // Move the sampling point against the residual so the warped
                // moving image approaches the fixed one.
                fx[i] = -diff * gx[i] / denom;
                fy[i] = -diff * gy[i] / denom;
            }
        }, mode);

        bool accepted = false;
        double scale = 1.0;
        for (int attempt = 0; attempt < 5; ++attempt) {
            cand_x = displacement.dx;
            cand_y = displacement.dy;
            for (int i = 0; i < w * h; ++i) {
                cand_x[i] += scale * fx[i];
                cand_y[i] += scale * fy[i];
            }
            gaussian_blur(cand_x, w, h, config.demons_sigma, mode, scratch);
            gaussian_blur(cand_y, w, h, config.demons_sigma, mode, scratch);
            DisplacementField cand{fixed.grid, cand_x, cand_y};
            double cand_ssd = masked_ssd(moving, fixed, cand);
            if (cand_ssd <= current_ssd) {
                displacement.dx.swap(cand_x);
                displacement.dy.swap(cand_y);
                current_ssd = cand_ssd;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (accepted) {
            ++stats.accepted_steps;
        } else {
            ++stats.rejected_steps;
            break;  // the same force would be recomputed and rejected again
        }
    }
    stats.ssd = current_ssd;
    return stats;
}

namespace {

/// Orientation-preserving similarity z -> a z + b minimizing Σ|a z_i + b − w_i|².
void similarity_align(const std::vector<Vec2>& from, const std::vector<Vec2>& to, Eigen::Matrix2d* linear,
                      Vec2* translation) {
    Complex zm{0, 0}, wm{0, 0};
    for (std::size_t i = 0; i < from.size(); ++i) {
        zm += Complex(from[i].x(), from[i].y());
        wm += Complex(to[i].x(), to[i].y());
    }
    zm /= static_cast<double>(from.size());
    wm /= static_cast<double>(from.size());
    Complex num{0, 0};
    double den = 0;
    for (std::size_t i = 0; i < from.size(); ++i) {
        Complex zc = Complex(from[i].x(), from[i].y()) - zm;
        Complex wc = Complex(to[i].x(), to[i].y()) - wm;
        num += std::conj(zc) * wc;
        den += std::norm(zc);
    }
    Complex a = den > 0 ? num / den : Complex{1, 0};
    if (std::abs(a) < 1e-15) a = Complex{1, 0};  // coincident targets: keep shape, translate only
    Complex b = wm - a * zm;
    *linear << a.real(), -a.imag(), a.imag(), a.real();
    *translation = Vec2(b.real(), b.imag());
}

double polygon_diameter(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    Vec2 lo(std::numeric_limits<double>::max(), std::numeric_limits<double>::max()), hi = -lo;
    for (const auto& p : a) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    for (const auto& p : b) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return (hi - lo).norm();
}

constexpr Complex kGradRot{0.0, 1.0};  // 90° rotation: hat gradient = i·e/(2A)

/// ∫ |∇mu|² with mu transferred to vertices and differentiated per face.
double mu_gradient_energy(const PlanarEmbedding& emb, const std::vector<Complex>& mu_face) {
    std::vector<Complex> at_vertex = face_to_vertex(emb, mu_face);
    const TriMesh& mesh = *emb.mesh;
    double energy = 0;
    for (int f = 0; f < mesh.face_count(); ++f) {
        const auto& t = mesh.faces[f];
        Complex z0(emb.uv[t[0]].x(), emb.uv[t[0]].y());
        Complex z1(emb.uv[t[1]].x(), emb.uv[t[1]].y());
        Complex z2(emb.uv[t[2]].x(), emb.uv[t[2]].y());
        double area = 0.5 * (std::conj(z1 - z0) * (z2 - z0)).imag();
        if (area <= 0) continue;
        std::array<Complex, 3> z{z0, z1, z2};
        Complex grad_re{0, 0}, grad_im{0, 0};  // gradient encoded as a complex number
        for (int j = 0; j < 3; ++j) {
            Complex e = z[(j + 2) % 3] - z[(j + 1) % 3];
            Complex gradhat = kGradRot * e / (2 * area);
            grad_re += at_vertex[t[j]].real() * gradhat;
            grad_im += at_vertex[t[j]].imag() * gradhat;
        }
        energy += area * (std::norm(grad_re) + std::norm(grad_im));
    }
    return energy;
}

}  // namespace

RegistrationResult inconsistent_planar_register(const PlanarEmbedding& emb1, const PlanarEmbedding& emb2,
                                                const NormalizedField& intensity1,
                                                const NormalizedField& intensity2,
                                                const LandmarkCorrespondence& landmarks,
                                                const RegistrationConfig& config, ExecMode mode) {
    config.validate();
    if (landmarks.size() < 2)
        throw InputError("inconsistent_planar_register: at least 2 landmark pairs are required");
    for (int i = 0; i < landmarks.size(); ++i) {
        if (landmarks.source_vertex_ids[i] < 0 || landmarks.source_vertex_ids[i] >= emb1.vertex_count() ||
            landmarks.target_vertex_ids[i] < 0 || landmarks.target_vertex_ids[i] >= emb2.vertex_count())
            throw InputError("inconsistent_planar_register: landmark index out of range");
    }
    for (int f = 0; f < emb1.mesh->face_count(); ++f)
        if (emb1.signed_face_area(f) <= 0)
            throw InputError("inconsistent_planar_register: source embedding has flipped faces");
    for (int f = 0; f < emb2.mesh->face_count(); ++f)
        if (emb2.signed_face_area(f) <= 0)
            throw InputError("inconsistent_planar_register: target embedding has flipped faces");

    RegistrationResult reg;
    reg.source_mesh = emb1.mesh;
    reg.target_mesh = emb2.mesh;

    // Similarity pre-alignment of the target plane onto the source plane via
    // the flattened landmark positions (demons has a small capture range and
    // the flattening gauge is arbitrary).
    std::vector<Vec2> src_lm(landmarks.size()), tgt_lm(landmarks.size());
    for (int i = 0; i < landmarks.size(); ++i) {
        src_lm[i] = emb1.uv[landmarks.source_vertex_ids[i]];
        tgt_lm[i] = emb2.uv[landmarks.target_vertex_ids[i]];
    }
    similarity_align(tgt_lm, src_lm, &reg.align_linear, &reg.align_translation);
    reg.target_points.resize(emb2.vertex_count());
    for (int v = 0; v < emb2.vertex_count(); ++v)
        reg.target_points[v] = reg.align_linear * emb2.uv[v] + reg.align_translation;

    Vec2 lo(std::numeric_limits<double>::max(), std::numeric_limits<double>::max()), hi = -lo;
    for (const auto& p : emb1.uv) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    for (const auto& p : reg.target_points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    reg.domain_diameter = polygon_diameter(emb1.uv, reg.target_points);
    GridGeometry grid = make_grid(lo, hi, config.demons_grid);
    double pixel_area = grid.spacing * grid.spacing;

    IntensityImage target_img =
        rasterize_intensity(emb2, reg.target_points, intensity2.values, grid, mode);

    std::vector<std::pair<int, Vec2>> constraints(landmarks.size());
    for (int i = 0; i < landmarks.size(); ++i)
        constraints[i] = {landmarks.source_vertex_ids[i], reg.target_points[landmarks.target_vertex_ids[i]]};

    reg.map_points = emb1.uv;  // identity start

    auto landmark_residual = [&]() {
        double r = 0;
        for (const auto& [v, target] : constraints)
            r = std::max(r, (reg.map_points[v] - target).norm());
        return r;
    };

    // Algorithm guard: if the start is already landmark-exact with matching
    // intensities (self pair), no iteration is needed.
    {
        IntensityImage warped = rasterize_intensity(emb1, reg.map_points, intensity1.values, grid, mode);
        double ssd0 = masked_ssd(target_img, warped, DisplacementField::zero(grid));
        if (ssd0 * pixel_area <= 1e-24 && landmark_residual() <= 1e-12 * reg.domain_diameter) {
            reg.mu = beltrami_from_map(emb1, reg.map_points);
            reg.landmark_residual_max = landmark_residual();
            reg.overlap = extract_overlap(reg.map_points, emb1, reg.target_points, emb2, landmarks);
            return reg;
        }
    }

    double prev_recorded_ssd = std::numeric_limits<double>::max();
    for (int iter = 1; iter <= config.n_iter; ++iter) {
        IntensityImage warped = rasterize_intensity(emb1, reg.map_points, intensity1.values, grid, mode);
        DisplacementField disp;
        DemonsStats stats = demons_update(target_img, warped, disp, config, mode);

        // The recorded intensity value must not increase across outer
        // iterations: give the phase bounded extra steps to absorb the
        // landmark re-projection of the previous iteration, else stop at the
        // previous (landmark-exact) state.
        int recovery = 0;
        while (stats.ssd > prev_recorded_ssd && recovery < 3) {
            DemonsStats more = demons_update(target_img, warped, disp, config, mode);
            stats.ssd = more.ssd;
            ++recovery;
        }
        if (stats.ssd > prev_recorded_ssd) {
            reg.early_stopped = true;
            break;
        }

        std::vector<Vec2> moved(emb1.vertex_count());
        for (int v = 0; v < emb1.vertex_count(); ++v)
            moved[v] = reg.map_points[v] + disp.sample(reg.map_points[v]);

        BeltramiField mu_raw = beltrami_from_map(emb1, moved);
        BeltramiField mu_smooth = smooth_and_clip(emb1, mu_raw, config.mu_cap);
        PlanarMap lbs = lbs_solve(emb1, mu_smooth, constraints);
        reg.map_points = lbs.positions;
        reg.mu = std::move(lbs.beltrami);

        IterationEnergy energy;
        energy.intensity = stats.ssd * pixel_area;
        double mu_l2 = 0;
        for (int f = 0; f < emb1.mesh->face_count(); ++f)
            mu_l2 += std::abs(emb1.signed_face_area(f)) * std::norm(reg.mu.mu[f]);
        energy.mu_l2 = config.lambda * mu_l2;
        energy.mu_grad = mu_gradient_energy(emb1, reg.mu.mu);
        reg.trace.push_back(energy);
        reg.iterations = iter;

        double improvement = prev_recorded_ssd == std::numeric_limits<double>::max()
                                 ? 1.0
                                 : (prev_recorded_ssd - stats.ssd) / std::max(prev_recorded_ssd, 1e-300);
        prev_recorded_ssd = stats.ssd;
        if (improvement < config.ssd_rel_tol && landmark_residual() <= 1e-10 * reg.domain_diameter) {
            reg.early_stopped = true;
            break;
        }
    }

    if (reg.mu.mu.empty()) reg.mu = beltrami_from_map(emb1, reg.map_points);
    reg.landmark_residual_max = landmark_residual();
    reg.overlap = extract_overlap(reg.map_points, emb1, reg.target_points, emb2, landmarks);

    for (int f = 0; f < emb1.mesh->face_count(); ++f) {
        if (reg.overlap.omega1_faces[f] && std::abs(reg.mu.mu[f]) >= 1.0)
            throw NumericalError("registration collapsed: |mu| >= 1 on common-region face " +
                                 std::to_string(f));
    }
    return reg;
}

OverlapResult extract_overlap(const std::vector<Vec2>& map_points, const PlanarEmbedding& emb1,
                              const std::vector<Vec2>& target_points, const PlanarEmbedding& emb2,
                              const LandmarkCorrespondence& landmarks) {
    const TriMesh& mesh1 = *emb1.mesh;
    const TriMesh& mesh2 = *emb2.mesh;
    OverlapResult out;
    out.omega1_faces.assign(mesh1.face_count(), 0);
    out.omega2_faces.assign(mesh2.face_count(), 0);
    out.correspondence.assign(mesh1.vertex_count(), BaryRef{});

    PointLocator target_locator(mesh2.faces, target_points, all_face_ids(mesh2.face_count()));

    std::vector<char> vertex_inside(mesh1.vertex_count(), 0);
    std::vector<BaryRef> located(mesh1.vertex_count());
    for (int v = 0; v < mesh1.vertex_count(); ++v) {
        Vec3 bary;
        int f = target_locator.locate(map_points[v], &bary);
        if (f >= 0) {
            vertex_inside[v] = 1;
            located[v] = BaryRef{f, bary, false};
        }
    }
    for (int f = 0; f < mesh1.face_count(); ++f) {
        const auto& t = mesh1.faces[f];
        if (vertex_inside[t[0]] && vertex_inside[t[1]] && vertex_inside[t[2]]) out.omega1_faces[f] = 1;
    }

    // Landmarks are guaranteed members of the common regions.
    MeshConnectivity conn1 = build_connectivity(mesh1);
    for (int i = 0; i < landmarks.size(); ++i) {
        int p = landmarks.source_vertex_ids[i];
        bool covered = false;
        for (int f : conn1.vertex_faces[p]) covered = covered || out.omega1_faces[f];
        if (!covered)
            for (int f : conn1.vertex_faces[p]) out.omega1_faces[f] = 1;
    }

    bool any_face = false;
    for (auto m : out.omega1_faces) any_face = any_face || m;
    if (!any_face) throw NumericalError("extract_overlap: empty overlap between the mapped source and target");

    // Correspondence for every vertex of an Ω₁ face; vertices that fall
    // outside the target domain (possible on force-included faces) project to
    // the nearest face and are flagged.
    std::vector<char> vertex_used(mesh1.vertex_count(), 0);
    for (int f = 0; f < mesh1.face_count(); ++f)
        if (out.omega1_faces[f])
            for (int c = 0; c < 3; ++c) vertex_used[mesh1.faces[f][c]] = 1;
    for (int v = 0; v < mesh1.vertex_count(); ++v) {
        if (!vertex_used[v]) continue;
        if (vertex_inside[v]) {
            out.correspondence[v] = located[v];
        } else {
            Vec3 bary;
            int f = target_locator.project(map_points[v], &bary);
            if (f < 0) throw NumericalError("extract_overlap: projection onto target domain failed");
            out.correspondence[v] = BaryRef{f, bary, true};
        }
    }

    // Landmark images are target vertices; pin their correspondence exactly.
    MeshConnectivity conn2 = build_connectivity(mesh2);
    for (int i = 0; i < landmarks.size(); ++i) {
        int p = landmarks.source_vertex_ids[i];
        int q = landmarks.target_vertex_ids[i];
        if (conn2.vertex_faces[q].empty()) throw NumericalError("target landmark vertex has no incident face");
        int f = conn2.vertex_faces[q].front();
        Vec3 bary = Vec3::Zero();
        for (int c = 0; c < 3; ++c)
            if (mesh2.faces[f][c] == q) bary[c] = 1.0;
        out.correspondence[p] = BaryRef{f, bary, false};
    }

    // Ω₂: target faces whose centroid lies in the mapped common region, plus
    // every face referenced by the correspondence and the landmark stars.
    std::vector<int> omega1_ids;
    for (int f = 0; f < mesh1.face_count(); ++f)
        if (out.omega1_faces[f]) omega1_ids.push_back(f);
    PointLocator mapped_locator(mesh1.faces, map_points, omega1_ids);
    for (int f = 0; f < mesh2.face_count(); ++f) {
        const auto& t = mesh2.faces[f];
        Vec2 centroid = (target_points[t[0]] + target_points[t[1]] + target_points[t[2]]) / 3.0;
        if (mapped_locator.locate(centroid, nullptr) >= 0) out.omega2_faces[f] = 1;
    }
    for (int v = 0; v < mesh1.vertex_count(); ++v)
        if (vertex_used[v] && out.correspondence[v].face >= 0) out.omega2_faces[out.correspondence[v].face] = 1;
    for (int i = 0; i < landmarks.size(); ++i) {
        int q = landmarks.target_vertex_ids[i];
        bool covered = false;
        for (int f : conn2.vertex_faces[q]) covered = covered || out.omega2_faces[f];
        if (!covered)
            for (int f : conn2.vertex_faces[q]) out.omega2_faces[f] = 1;
    }
    return out;
}

SurfaceCorrespondence compose_registration(const PlanarEmbedding& emb1, const RegistrationResult& reg,
                                           const PlanarEmbedding& emb2) {
    const TriMesh& mesh1 = *emb1.mesh;
    const TriMesh& mesh2 = *emb2.mesh;
    SurfaceCorrespondence out;
    std::vector<char> used(mesh1.vertex_count(), 0);
    for (int f = 0; f < mesh1.face_count(); ++f) {
        if (!reg.overlap.omega1_faces[f]) continue;
        out.mu_abs_omega1.push_back(std::abs(reg.mu.mu[f]));
        for (int c = 0; c < 3; ++c) used[mesh1.faces[f][c]] = 1;
    }
    for (int v = 0; v < mesh1.vertex_count(); ++v) {
        if (!used[v]) continue;
        const BaryRef& ref = reg.overlap.correspondence[v];
        if (ref.face < 0 || !reg.overlap.omega2_faces[ref.face])
            throw NumericalError("compose_registration: correspondence references a face outside the "
                                 "target common region (internal consistency failure)");
        const auto& t = mesh2.faces[ref.face];
        out.source_vertices.push_back(v);
        out.target_positions.push_back(ref.bary[0] * mesh2.vertices[t[0]] + ref.bary[1] * mesh2.vertices[t[1]] +
                                       ref.bary[2] * mesh2.vertices[t[2]]);
    }
    return out;
}

void write_registration_report(const RegistrationResult& reg, const TriMesh& mesh1, const TriMesh& mesh2,
                               const RegistrationConfig& config, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["config"] = {{"n_iter", config.n_iter},
                   {"lambda", config.lambda},
                   {"demons_grid", config.demons_grid},
                   {"demons_sigma", config.demons_sigma},
                   {"demons_steps_per_outer", config.demons_steps_per_outer},
                   {"mu_cap", config.mu_cap},
                   {"ssd_rel_tol", config.ssd_rel_tol}};
    j["iterations"] = reg.iterations;
    j["early_stopped"] = reg.early_stopped;
    nlohmann::ordered_json trace = nlohmann::ordered_json::array();
    for (const auto& e : reg.trace)
        trace.push_back({{"intensity", e.intensity}, {"mu_l2", e.mu_l2}, {"mu_grad", e.mu_grad}});
    j["energy_trace"] = trace;
    j["landmark_residual_max"] = reg.landmark_residual_max;
    j["landmark_residual_relative"] =
        reg.domain_diameter > 0 ? reg.landmark_residual_max / reg.domain_diameter : 0.0;

    double a1 = 0, s1 = 0, a2 = 0, s2 = 0;
    for (int f = 0; f < mesh1.face_count(); ++f) {
        double a = mesh1.face_area(f);
        s1 += a;
        if (reg.overlap.omega1_faces[f]) a1 += a;
    }
    for (int f = 0; f < mesh2.face_count(); ++f) {
        double a = mesh2.face_area(f);
        s2 += a;
        if (reg.overlap.omega2_faces[f]) a2 += a;
    }
    j["omega1_area_fraction"] = s1 > 0 ? a1 / s1 : 0.0;
    j["omega2_area_fraction"] = s2 > 0 ? a2 / s2 : 0.0;

    std::vector<double> mu_abs;
    for (int f = 0; f < mesh1.face_count(); ++f)
        if (reg.overlap.omega1_faces[f]) mu_abs.push_back(std::abs(reg.mu.mu[f]));
    if (!mu_abs.empty()) {
        std::vector<double> sorted = mu_abs;
        std::sort(sorted.begin(), sorted.end());
        double mean = std::accumulate(mu_abs.begin(), mu_abs.end(), 0.0) / mu_abs.size();
        j["mu_abs"] = {{"mean", mean},
                       {"median", sorted[sorted.size() / 2]},
                       {"max", sorted.back()},
                       {"faces", mu_abs.size()}};
    }

    std::ofstream out(path);
    if (!out) throw InputError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
}

}  // namespace qcm
