#include "qcmorph/conformal.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace qcm {

namespace {
constexpr std::complex<double> kI{0.0, 1.0};
}

double PlanarEmbedding::signed_face_area(int f) const {
    const auto& t = mesh->faces[f];
    Vec2 a = uv[t[1]] - uv[t[0]], b = uv[t[2]] - uv[t[0]];
    return 0.5 * (a.x() * b.y() - a.y() * b.x());
}

double BeltramiField::max_abs() const {
    double m = 0;
    for (const auto& v : mu) m = std::max(m, std::abs(v));
    return m;
}

FaceDerivatives face_derivatives(const Complex& z0, const Complex& z1, const Complex& z2) {
    std::array<Complex, 3> z{z0, z1, z2};
    double area = 0.5 * (std::conj(z1 - z0) * (z2 - z0)).imag();
    if (area <= 0) throw NumericalError("face_derivatives: non-positive triangle area in the domain");
    FaceDerivatives d;
    d.area = area;
    for (int j = 0; j < 3; ++j) {
        Complex e = z[(j + 2) % 3] - z[(j + 1) % 3];  // opposite edge
        // grad of the hat function is the 90°-rotated opposite edge / 2A
        d.dz[j] = -kI * std::conj(e) / (4 * area);
        d.dzbar[j] = kI * e / (4 * area);
    }
    return d;
}

namespace {

Complex to_complex(const Vec2& v) { return {v.x(), v.y()}; }

std::vector<FaceDerivatives> embedding_derivatives(const PlanarEmbedding& domain) {
    std::vector<FaceDerivatives> out;
    out.reserve(domain.mesh->faces.size());
    for (const auto& t : domain.mesh->faces)
        out.push_back(face_derivatives(to_complex(domain.uv[t[0]]), to_complex(domain.uv[t[1]]),
                                       to_complex(domain.uv[t[2]])));
    return out;
}

/// Minimizes Σ_f A_f |Σ_j w_j (dzbar[j] − mu_f dz[j])|² over complex vertex
/// values w with the constrained entries fixed. The normal equations form a
/// Hermitian positive-definite system solved by a sparse Cholesky factorization.
std::vector<Vec2> solve_beltrami_least_squares(const TriMesh& mesh,
                                               const std::vector<FaceDerivatives>& derivs,
                                               const std::vector<Complex>& mu,
                                               const std::vector<std::pair<int, Vec2>>& constraints) {
    using SpMat = Eigen::SparseMatrix<Complex>;
    const int nv = mesh.vertex_count();
    const int nf = mesh.face_count();

    std::vector<int> free_index(nv, -1);
    std::vector<Complex> fixed_value(nv);
    std::vector<bool> fixed(nv, false);
    for (const auto& [v, pos] : constraints) {
        if (v < 0 || v >= nv) throw InputError("constraint vertex index out of range");
        if (fixed[v]) throw InputError("duplicate constraint on vertex " + std::to_string(v));
        fixed[v] = true;
        fixed_value[v] = to_complex(pos);
    }
    int n_free = 0;
    for (int v = 0; v < nv; ++v)
        if (!fixed[v]) free_index[v] = n_free++;
    if (n_free == 0) {
        std::vector<Vec2> out(nv);
        for (int v = 0; v < nv; ++v) out[v] = Vec2(fixed_value[v].real(), fixed_value[v].imag());
        return out;
    }

    std::vector<Eigen::Triplet<Complex>> trip_free, trip_fixed;
    trip_free.reserve(static_cast<std::size_t>(nf) * 3);
    for (int f = 0; f < nf; ++f) {
        const auto& t = mesh.faces[f];
        double w = std::sqrt(derivs[f].area);
        for (int j = 0; j < 3; ++j) {
            Complex c = w * (derivs[f].dzbar[j] - mu[f] * derivs[f].dz[j]);
            if (fixed[t[j]])
                trip_fixed.emplace_back(f, t[j], c);
            else
                trip_free.emplace_back(f, free_index[t[j]], c);
        }
    }
    SpMat C_free(nf, n_free), C_fixed(nf, nv);
    C_free.setFromTriplets(trip_free.begin(), trip_free.end());
    C_fixed.setFromTriplets(trip_fixed.begin(), trip_fixed.end());

    Eigen::VectorXcd wc(nv);
    for (int v = 0; v < nv; ++v) wc[v] = fixed[v] ? fixed_value[v] : Complex{0, 0};

    SpMat normal = (C_free.adjoint() * C_free).pruned();
    Eigen::VectorXcd rhs = -(C_free.adjoint() * (C_fixed * wc));

    Eigen::SimplicialLDLT<SpMat> solver(normal);
    if (solver.info() != Eigen::Success)
        throw NumericalError("conformal solve: factorization failed (singular or degenerate system)");
    Eigen::VectorXcd x = solver.solve(rhs);
    if (solver.info() != Eigen::Success) throw NumericalError("conformal solve: back-substitution failed");

    std::vector<Vec2> out(nv);
    for (int v = 0; v < nv; ++v) {
        Complex w = fixed[v] ? fixed_value[v] : x[free_index[v]];
        out[v] = Vec2(w.real(), w.imag());
    }
    return out;
}

/// Isometric local frame of a 3D triangle: p0 -> 0, p1 -> (|e01|, 0).
std::array<Complex, 3> local_frame(const Vec3& p0, const Vec3& p1, const Vec3& p2) {
    Vec3 e1 = p1 - p0;
    double len = e1.norm();
    if (len <= 0) throw NumericalError("degenerate face (zero edge) in local frame");
    Vec3 u = e1 / len;
    Vec3 n = e1.cross(p2 - p0);
    double nn = n.norm();
    if (nn <= 0) throw NumericalError("degenerate face (zero area) in local frame");
    Vec3 v = (n / nn).cross(u);
    Vec3 d = p2 - p0;
    return {Complex{0, 0}, Complex{len, 0}, Complex{d.dot(u), d.dot(v)}};
}

}  // namespace

std::pair<int, int> default_lscm_pins(const TriMesh& mesh) {
    std::vector<int> loop = extract_boundary(mesh);
    if (loop.size() < 2) throw NumericalError("boundary loop too short to pin");
    return {loop[0], loop[loop.size() / 2]};
}

PlanarEmbedding lscm(const TriMesh& mesh, int pin_a, int pin_b, const Vec2& pos_a, const Vec2& pos_b) {
    if (pin_a == pin_b) throw InputError("lscm: the two pinned vertices coincide");
    if (pin_a < 0 || pin_a >= mesh.vertex_count() || pin_b < 0 || pin_b >= mesh.vertex_count())
        throw InputError("lscm: pin index out of range");

    std::vector<FaceDerivatives> derivs;
    derivs.reserve(mesh.faces.size());
    for (const auto& t : mesh.faces) {
        auto z = local_frame(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        derivs.push_back(face_derivatives(z[0], z[1], z[2]));
    }

    std::vector<Complex> zero_mu(mesh.face_count(), Complex{0, 0});
    PlanarEmbedding embedding;
    embedding.mesh = &mesh;
    embedding.uv = solve_beltrami_least_squares(mesh, derivs, zero_mu, {{pin_a, pos_a}, {pin_b, pos_b}});

    for (int f = 0; f < mesh.face_count(); ++f)
        if (embedding.signed_face_area(f) <= 0) embedding.flipped_faces.push_back(f);
    if (!embedding.flipped_faces.empty()) {
        double frac = static_cast<double>(embedding.flipped_faces.size()) / mesh.face_count();
        if (frac > 0.001)
            throw NumericalError("lscm: " + std::to_string(embedding.flipped_faces.size()) +
                                 " flipped faces (" + std::to_string(frac * 100) + "% > 0.1% limit)");
        log_warning("lscm: " + std::to_string(embedding.flipped_faces.size()) + " flipped faces reported");
    }
    return embedding;
}

PlanarEmbedding lscm(const TriMesh& mesh) {
    auto [a, b] = default_lscm_pins(mesh);
    return lscm(mesh, a, b, Vec2(0, 0), Vec2(1, 0));
}

BeltramiField beltrami_from_map(const PlanarEmbedding& domain, const std::vector<Vec2>& image) {
    if (image.size() != domain.uv.size())
        throw InputError("beltrami_from_map: image size does not match domain vertex count");
    const TriMesh& mesh = *domain.mesh;
    BeltramiField field;
    field.mu.resize(mesh.face_count());
    for (int f = 0; f < mesh.face_count(); ++f) {
        const auto& t = mesh.faces[f];
        FaceDerivatives d = face_derivatives(to_complex(domain.uv[t[0]]), to_complex(domain.uv[t[1]]),
                                             to_complex(domain.uv[t[2]]));
        Complex fz{0, 0}, fzbar{0, 0};
        for (int j = 0; j < 3; ++j) {
            Complex w = to_complex(image[t[j]]);
            fz += w * d.dz[j];
            fzbar += w * d.dzbar[j];
        }
        if (std::abs(fz) < 1e-300) {
            field.degenerate_faces.push_back(f);
            field.mu[f] = Complex{0, 0};
        } else {
            field.mu[f] = fzbar / fz;
        }
    }
    return field;
}

PlanarMap lbs_solve(const PlanarEmbedding& domain, const BeltramiField& target_mu,
                    const std::vector<std::pair<int, Vec2>>& constraints) {
    const TriMesh& mesh = *domain.mesh;
    if (static_cast<int>(target_mu.mu.size()) != mesh.face_count())
        throw InputError("lbs_solve: coefficient count does not match face count");
    if (constraints.size() < 2)
        throw InputError("lbs_solve: at least two point constraints are required");
    for (int f = 0; f < mesh.face_count(); ++f)
        if (std::abs(target_mu.mu[f]) >= 1.0)
            throw NumericalError("lbs_solve: |mu| >= 1 on face " + std::to_string(f));

    PlanarMap map;
    map.positions = solve_beltrami_least_squares(mesh, embedding_derivatives(domain), target_mu.mu, constraints);
    map.beltrami = beltrami_from_map(domain, map.positions);
    return map;
}

double dilatation(const Complex& mu) {
    double m = std::abs(mu);
    if (m >= 1.0) throw NumericalError("dilatation: |mu| >= 1");
    return (1 + m) / (1 - m);
}

std::vector<Complex> face_to_vertex(const PlanarEmbedding& domain, const std::vector<Complex>& face_values) {
    const TriMesh& mesh = *domain.mesh;
    std::vector<Complex> acc(mesh.vertex_count(), Complex{0, 0});
    std::vector<double> wsum(mesh.vertex_count(), 0.0);
    for (int f = 0; f < mesh.face_count(); ++f) {
        double a = std::abs(domain.signed_face_area(f));
        for (int c = 0; c < 3; ++c) {
            acc[mesh.faces[f][c]] += a * face_values[f];
            wsum[mesh.faces[f][c]] += a;
        }
    }
    for (int v = 0; v < mesh.vertex_count(); ++v)
        if (wsum[v] > 0) acc[v] /= wsum[v];
    return acc;
}

BeltramiField smooth_and_clip(const PlanarEmbedding& domain, const BeltramiField& field, double cap) {
    const TriMesh& mesh = *domain.mesh;
    std::vector<Complex> at_vertex = face_to_vertex(domain, field.mu);
    BeltramiField out;
    out.mu.resize(mesh.face_count());
    for (int f = 0; f < mesh.face_count(); ++f) {
        const auto& t = mesh.faces[f];
        Complex m = (at_vertex[t[0]] + at_vertex[t[1]] + at_vertex[t[2]]) / 3.0;
        double mag = std::abs(m);
        out.mu[f] = mag > cap ? m * (cap / mag) : m;
    }
    return out;
}

void export_mu_csv(const BeltramiField& field, const std::filesystem::path& path) {
    std::FILE* out = std::fopen(path.string().c_str(), "w");
    if (!out) throw InputError("cannot open " + path.string() + " for writing");
    std::fprintf(out, "face,re_mu,im_mu\n");
    for (std::size_t f = 0; f < field.mu.size(); ++f)
        std::fprintf(out, "%zu,%.17g,%.17g\n", f, field.mu[f].real(), field.mu[f].imag());
    std::fclose(out);
}

void export_embedding_csv(const PlanarEmbedding& embedding, const std::filesystem::path& path) {
    std::FILE* out = std::fopen(path.string().c_str(), "w");
    if (!out) throw InputError("cannot open " + path.string() + " for writing");
    std::fprintf(out, "vertex,u,v\n");
    for (std::size_t v = 0; v < embedding.uv.size(); ++v)
        std::fprintf(out, "%zu,%.17g,%.17g\n", v, embedding.uv[v].x(), embedding.uv[v].y());
    std::fclose(out);
}

}  // namespace qcm
