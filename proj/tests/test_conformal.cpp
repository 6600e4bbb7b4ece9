#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qcmorph/clustering.hpp"
#include "qcmorph/conformal.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace qcm;

namespace {

PlanarEmbedding embed_plane(const TriMesh& mesh) {
    PlanarEmbedding emb;
    emb.mesh = &mesh;
    for (const auto& v : mesh.vertices) emb.uv.emplace_back(v.x(), v.y());
    return emb;
}

std::vector<Vec2> map_by(const std::vector<Vec2>& pts, const std::function<Complex(Complex)>& f) {
    std::vector<Vec2> out;
    for (const auto& p : pts) {
        Complex w = f(Complex(p.x(), p.y()));
        out.emplace_back(w.real(), w.imag());
    }
    return out;
}

}  // namespace

TEST_CASE("lscm: an already-planar grid reproduces itself through corner pins") {
    TriMesh m = qcmtest::grid_patch(9, 9, 0.125);
    int a = 0, b = 8;  // two corners of the bottom edge
    PlanarEmbedding emb = lscm(m, a, b, Vec2(0, 0), Vec2(1, 0));
    for (int v = 0; v < m.vertex_count(); ++v) {
        CHECK(emb.uv[v].x() == doctest::Approx(m.vertices[v].x()).epsilon(1e-8));
        CHECK(emb.uv[v].y() == doctest::Approx(m.vertices[v].y()).epsilon(1e-8));
    }
    BeltramiField mu = beltrami_from_map(emb, emb.uv);
    CHECK(mu.max_abs() <= 1e-8);
}

TEST_CASE("lscm: hemisphere cap flattens without flips and low distortion") {
    TriMesh m = qcmtest::hemisphere_cap();
    PlanarEmbedding emb = lscm(m);
    CHECK(emb.flipped_faces.empty());
    // conformality of the flattening measured through the 3D-to-plane map: the
    // inverse map's Beltrami coefficient per face, via the local isometric frame
    std::vector<double> mu_abs;
    for (int f = 0; f < m.face_count(); ++f) {
        const auto& t = m.faces[f];
        Vec3 e1 = m.vertices[t[1]] - m.vertices[t[0]];
        double len = e1.norm();
        Vec3 u = e1 / len;
        Vec3 n = e1.cross(m.vertices[t[2]] - m.vertices[t[0]]).normalized();
        Vec3 w = n.cross(u);
        Vec3 d = m.vertices[t[2]] - m.vertices[t[0]];
        FaceDerivatives fd = face_derivatives(Complex(0, 0), Complex(len, 0), Complex(d.dot(u), d.dot(w)));
        Complex fz{0, 0}, fzb{0, 0};
        for (int j = 0; j < 3; ++j) {
            Complex img(emb.uv[t[j]].x(), emb.uv[t[j]].y());
            fz += img * fd.dz[j];
            fzb += img * fd.dzbar[j];
        }
        mu_abs.push_back(std::abs(fzb / fz));
    }
    std::sort(mu_abs.begin(), mu_abs.end());
    CHECK(mu_abs[mu_abs.size() / 2] < 0.05);
}

TEST_CASE("lscm: coincident pins are rejected") {
    TriMesh m = qcmtest::grid_patch(4, 4);
    CHECK_THROWS_AS(lscm(m, 2, 2, Vec2(0, 0), Vec2(1, 0)), InputError);
}

TEST_CASE("lscm is similarity-equivariant under re-pinning") {
    TriMesh m = qcmtest::hemisphere_cap(16);
    auto [a, b] = default_lscm_pins(m);
    PlanarEmbedding e1 = lscm(m, a, b, Vec2(0, 0), Vec2(1, 0));
    // re-pin to a rotated and scaled pin pair
    double s = 1.7, theta = 0.6;
    Vec2 pb(s * std::cos(theta), s * std::sin(theta));
    PlanarEmbedding e2 = lscm(m, a, b, Vec2(0, 0), pb);
    // compare via Procrustes on the 2D point sets (z = 0)
    std::vector<Vec3> p1, p2;
    for (int v = 0; v < m.vertex_count(); ++v) {
        p1.emplace_back(e1.uv[v].x(), e1.uv[v].y(), 0.0);
        p2.emplace_back(e2.uv[v].x(), e2.uv[v].y(), 0.0);
    }
    CHECK(procrustes_baseline(p1, p2) < 1e-8);
}

TEST_CASE("beltrami_from_map: identity and similarity give zero") {
    TriMesh m = qcmtest::grid_patch(7, 7);
    PlanarEmbedding emb = embed_plane(m);

    BeltramiField ident = beltrami_from_map(emb, emb.uv);
    CHECK(ident.max_abs() <= 1e-12);

    auto similar = map_by(emb.uv, [](Complex z) { return 2.0 * z + Complex(1, 1); });
    BeltramiField sim = beltrami_from_map(emb, similar);
    CHECK(sim.max_abs() <= 1e-12);
}

TEST_CASE("beltrami_from_map: z + 0.5 conj(z) has mu = 0.5 on every face") {
    TriMesh m = qcmtest::grid_patch(7, 7);
    PlanarEmbedding emb = embed_plane(m);
    auto image = map_by(emb.uv, [](Complex z) { return z + 0.5 * std::conj(z); });
    BeltramiField mu = beltrami_from_map(emb, image);
    for (const auto& v : mu.mu) {
        CHECK(std::abs(v - Complex(0.5, 0)) <= 1e-12);
    }
}

TEST_CASE("beltrami is invariant under post-composed similarities") {
    TriMesh m = qcmtest::grid_patch(6, 6);
    PlanarEmbedding emb = embed_plane(m);
    auto image = map_by(emb.uv, [](Complex z) { return z + 0.3 * std::conj(z) + 0.1 * z * z; });
    BeltramiField base = beltrami_from_map(emb, image);

    Complex a(1.4, 0.6), b(-2.0, 0.7);  // similarity w -> a w + b
    std::vector<Vec2> transformed;
    for (const auto& p : image) {
        Complex w = a * Complex(p.x(), p.y()) + b;
        transformed.emplace_back(w.real(), w.imag());
    }
    BeltramiField moved = beltrami_from_map(emb, transformed);
    for (int f = 0; f < m.face_count(); ++f) CHECK(std::abs(moved.mu[f] - base.mu[f]) <= 1e-12);
}

TEST_CASE("beltrami_from_map: degenerate image face is reported") {
    TriMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    m.faces = {{0, 1, 2}};
    PlanarEmbedding emb = embed_plane(m);
    std::vector<Vec2> image = {Vec2(0, 0), Vec2(0, 0), Vec2(0, 0)};  // collapses the face
    BeltramiField mu = beltrami_from_map(emb, image);
    CHECK(mu.degenerate_faces == std::vector<int>{0});
}

TEST_CASE("dilatation values") {
    CHECK(dilatation(Complex(0, 0)) == 1.0);
    CHECK(dilatation(Complex(0.5, 0)) == 3.0);
    CHECK(dilatation(Complex(0.9, 0)) == doctest::Approx(19.0));
    CHECK_THROWS_AS(dilatation(Complex(1.0, 0)), NumericalError);
}

TEST_CASE("lbs_solve: mu = 0 with two pins is conformal on a flat domain") {
    TriMesh m = qcmtest::grid_patch(9, 9);
    PlanarEmbedding emb = embed_plane(m);
    BeltramiField zero;
    zero.mu.assign(m.face_count(), Complex(0, 0));
    PlanarMap map = lbs_solve(emb, zero, {{0, Vec2(0, 0)}, {8, Vec2(4, 3)}});
    CHECK(map.beltrami.max_abs() <= 1e-6);
    CHECK((map.positions[0] - Vec2(0, 0)).norm() <= 1e-12);
    CHECK((map.positions[8] - Vec2(4, 3)).norm() <= 1e-12);
}

TEST_CASE("lbs_solve roundtrip recovers a known smooth deformation") {
    TriMesh m = qcmtest::grid_patch(21, 21, 0.05);
    PlanarEmbedding emb = embed_plane(m);
    auto g = [](Complex z) { return z + 0.25 * std::conj(z) + Complex(0, 0.15) * z * z; };
    std::vector<Vec2> image = map_by(emb.uv, g);
    BeltramiField mu = beltrami_from_map(emb, image);
    REQUIRE(mu.max_abs() < 1.0);

    std::vector<std::pair<int, Vec2>> constraints;
    for (int v : {0, 20, 440, 210}) constraints.push_back({v, image[v]});
    PlanarMap rec = lbs_solve(emb, mu, constraints);

    double diam = std::sqrt(2.0);
    double worst = 0;
    for (int v = 0; v < m.vertex_count(); ++v) worst = std::max(worst, (rec.positions[v] - image[v]).norm());
    CHECK(worst < 0.01 * diam);
    for (const auto& [v, pos] : constraints) CHECK((rec.positions[v] - pos).norm() <= 1e-10 * diam);
}

TEST_CASE("lbs_solve: |mu| >= 1 is a precondition error") {
    TriMesh m = qcmtest::grid_patch(4, 4);
    PlanarEmbedding emb = embed_plane(m);
    BeltramiField bad;
    bad.mu.assign(m.face_count(), Complex(1.2, 0));
    CHECK_THROWS_AS(lbs_solve(emb, bad, {{0, Vec2(0, 0)}, {3, Vec2(1, 0)}}), NumericalError);
}

TEST_CASE("lbs_solve: fewer than two constraints is rejected") {
    TriMesh m = qcmtest::grid_patch(4, 4);
    PlanarEmbedding emb = embed_plane(m);
    BeltramiField zero;
    zero.mu.assign(m.face_count(), Complex(0, 0));
    CHECK_THROWS_AS(lbs_solve(emb, zero, {{0, Vec2(0, 0)}}), InputError);
}

TEST_CASE("smooth_and_clip caps |mu|") {
    TriMesh m = qcmtest::grid_patch(5, 5);
    PlanarEmbedding emb = embed_plane(m);
    BeltramiField field;
    field.mu.assign(m.face_count(), Complex(2.0, 0));
    BeltramiField smoothed = smooth_and_clip(emb, field, 0.97);
    CHECK(smoothed.max_abs() <= 0.97 + 1e-15);
}
