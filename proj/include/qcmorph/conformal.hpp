#pragma once

#include "qcmorph/mesh.hpp"

#include <complex>
#include <utility>
#include <vector>

namespace qcm {

/// Per-vertex 2D coordinates of a conformal flattening of `mesh`.
/// A valid embedding has no flipped face (negative signed area).
struct PlanarEmbedding {
    const TriMesh* mesh = nullptr;
    std::vector<Vec2> uv;
    std::vector<int> flipped_faces;  // reported by lscm; empty when clean

    int vertex_count() const { return static_cast<int>(uv.size()); }
    double signed_face_area(int f) const;
};

/// Per-face complex Beltrami coefficient of a piecewise-linear planar map.
/// |mu| < 1 on every face for an orientation-preserving quasi-conformal map.
struct BeltramiField {
    std::vector<Complex> mu;
    std::vector<int> degenerate_faces;  // faces where |f_z| vanished

    double max_abs() const;
};

/// Per-vertex image positions of a planar map over a source embedding's mesh.
struct PlanarMap {
    std::vector<Vec2> positions;
    BeltramiField beltrami;
};

/// Wirtinger derivative coefficients of the three linear hat functions on one
/// triangle: f_z = Σ w_j dz[j], f_zbar = Σ w_j dzbar[j] for vertex values w_j.
struct FaceDerivatives {
    std::array<Complex, 3> dz;
    std::array<Complex, 3> dzbar;
    double area;
};

/// From planar corner positions (counter-clockwise; positive area required).
FaceDerivatives face_derivatives(const Complex& z0, const Complex& z1, const Complex& z2);

/// Free-boundary conformal flattening by least-squares minimization of the
/// per-face conformality residual, with two vertices pinned exactly.
/// Rejected (NumericalError) when more than 0.1% of faces flip.
PlanarEmbedding lscm(const TriMesh& mesh, int pin_a, int pin_b, const Vec2& pos_a, const Vec2& pos_b);

/// Deterministic default pins: the two vertices half the loop length apart on
/// the boundary loop (starting from its smallest vertex index), mapped to
/// (0,0) and (1,0).
std::pair<int, int> default_lscm_pins(const TriMesh& mesh);
PlanarEmbedding lscm(const TriMesh& mesh);

/// Per-face mu = f_zbar / f_z of the piecewise-linear map sending each domain
/// vertex to `image[v]`. Faces with vanishing f_z are reported in the result
/// and carry mu = 0.
BeltramiField beltrami_from_map(const PlanarEmbedding& domain, const std::vector<Vec2>& image);

/// Reconstructs the planar map with prescribed per-face coefficient by
/// minimizing the quadratic residual Σ A_f |f_zbar − mu_f f_z|² subject to
/// hard point constraints (at least two, to fix the similarity freedom).
/// Constraints hold exactly; beltrami_from_map(result) approximates target_mu.
PlanarMap lbs_solve(const PlanarEmbedding& domain, const BeltramiField& target_mu,
                    const std::vector<std::pair<int, Vec2>>& constraints);

/// Ellipse aspect ratio (1+|mu|)/(1−|mu|) in [1, ∞). Requires |mu| < 1.
double dilatation(const Complex& mu);

/// Area-weighted transfer of a per-face field to vertices.
std::vector<Complex> face_to_vertex(const PlanarEmbedding& domain, const std::vector<Complex>& face_values);

/// One smoothing pass: area-weighted vertex average, then per-face mean of
/// corner values; |mu| is clamped to cap afterwards.
BeltramiField smooth_and_clip(const PlanarEmbedding& domain, const BeltramiField& field, double cap);

/// CSV rows: face,re_mu,im_mu
void export_mu_csv(const BeltramiField& field, const std::filesystem::path& path);
void export_embedding_csv(const PlanarEmbedding& embedding, const std::filesystem::path& path);

}  // namespace qcm
