#include "qcmorph/dissimilarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace qcm {

void IndexWeights::validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0) throw InputError("index weights must be non-negative");
    if (std::abs(alpha + beta + gamma - 1.0) > 1e-12)
        throw InputError("index weights must sum to 1 (got " + std::to_string(alpha + beta + gamma) + ")");
}

namespace {

double pullback(const NormalizedField& field, const TriMesh& mesh2, const BaryRef& ref) {
    const auto& t = mesh2.faces[ref.face];
    return ref.bary[0] * field.values[t[0]] + ref.bary[1] * field.values[t[1]] +
           ref.bary[2] * field.values[t[2]];
}

}  // namespace

DeltaComponents delta_components(const RegistrationResult& reg, const TriMesh& mesh1,
                                 const NormalizedField& mean1, const NormalizedField& gauss1,
                                 const NormalizedField& mean2, const NormalizedField& gauss2) {
    if (mean1.range != NormalizeRange::Symmetric || gauss1.range != NormalizeRange::Symmetric ||
        mean2.range != NormalizeRange::Symmetric || gauss2.range != NormalizeRange::Symmetric)
        throw InputError("delta_components: curvature fields must be symmetric-normalized");

    if (!reg.target_mesh) throw InputError("delta_components: registration lacks a target mesh");

    double area = 0, mu_int = 0, mean_int = 0, gauss_int = 0;
    bool any = false;
    for (int f = 0; f < mesh1.face_count(); ++f) {
        if (!reg.overlap.omega1_faces[f]) continue;
        any = true;
        double a = mesh1.face_area(f);  // the index integrates over the 3D surface
        double mu_abs = std::min(std::abs(reg.mu.mu[f]), 1.0);
        double dh = 0, dk = 0;
        for (int c = 0; c < 3; ++c) {
            int v = mesh1.faces[f][c];
            const BaryRef& ref = reg.overlap.correspondence[v];
            dh += std::abs(mean1.values[v] - pullback(mean2, *reg.target_mesh, ref));
            dk += std::abs(gauss1.values[v] - pullback(gauss2, *reg.target_mesh, ref));
        }
        area += a;
        mu_int += a * mu_abs;
        mean_int += a * (dh / 3.0) / 2.0;
        gauss_int += a * (dk / 3.0) / 2.0;
    }
    if (!any || area <= 0) throw NumericalError("shape index: empty source common region");
    return {mu_int / area, mean_int / area, gauss_int / area};
}

double shape_index_delta(const RegistrationResult& reg, const TriMesh& mesh1,
                         const NormalizedField& mean1, const NormalizedField& gauss1,
                         const NormalizedField& mean2, const NormalizedField& gauss2,
                         const IndexWeights& weights) {
    weights.validate();
    return delta_components(reg, mesh1, mean1, gauss1, mean2, gauss2).combine(weights);
}

double dissimilarity(double delta12, double delta21) {
    if (!(delta12 >= 0 && delta12 <= 1 && delta21 >= 0 && delta21 <= 1))
        throw InputError("dissimilarity: deltas must lie in [0,1]");
    return std::min(delta12, delta21);
}

DissimilarityMatrix build_matrix(const std::vector<double>& delta_table, const std::vector<std::string>& ids,
                                 const IndexWeights& weights) {
    weights.validate();
    const int n = static_cast<int>(ids.size());
    if (static_cast<int>(delta_table.size()) != n * n)
        throw InputError("build_matrix: delta table size does not match id count");
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double d = delta_table[i * n + j];
            if (i == j) continue;  // the diagonal is forced to zero below
            if (std::isnan(d)) throw InputError("build_matrix: missing delta entry (" + ids[i] + ", " + ids[j] + ")");
            if (!(d >= 0 && d <= 1))
                throw InputError("build_matrix: delta out of range at (" + ids[i] + ", " + ids[j] + "): " +
                                 std::to_string(d));
        }
    }
    DissimilarityMatrix m;
    m.ids = ids;
    m.weights = weights;
    m.values.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double d = std::min(delta_table[i * n + j], delta_table[j * n + i]);
            m.values[i * n + j] = d;
            m.values[j * n + i] = d;
        }
    }
    return m;
}

void export_matrix_csv(const DissimilarityMatrix& matrix, const std::filesystem::path& path) {
    std::FILE* out = std::fopen(path.string().c_str(), "w");
    if (!out) throw InputError("cannot open " + path.string() + " for writing");
    std::fprintf(out, "id");
    for (const auto& id : matrix.ids) std::fprintf(out, ",%s", id.c_str());
    std::fprintf(out, "\n");
    const int n = matrix.size();
    for (int i = 0; i < n; ++i) {
        std::fprintf(out, "%s", matrix.ids[i].c_str());
        for (int j = 0; j < n; ++j) std::fprintf(out, ",%.17g", matrix(i, j));
        std::fprintf(out, "\n");
    }
    std::fclose(out);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

std::vector<double> load_table_csv(const std::filesystem::path& path, std::vector<std::string>* ids_out) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw InputError(path.string() + ": empty CSV");
    auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "id") throw InputError(path.string() + ": expected 'id' header row");
    std::vector<std::string> ids(header.begin() + 1, header.end());
    const int n = static_cast<int>(ids.size());
    std::vector<double> values(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw InputError(path.string() + ": missing row " + std::to_string(i));
        auto cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != n + 1)
            throw InputError(path.string() + ": row " + std::to_string(i) + " has wrong column count");
        if (cells[0] != ids[i]) throw InputError(path.string() + ": row/column id mismatch at " + cells[0]);
        for (int j = 0; j < n; ++j) values[i * n + j] = std::stod(cells[j + 1]);
    }
    if (ids_out) *ids_out = ids;
    return values;
}

}  // namespace

DissimilarityMatrix load_matrix_csv(const std::filesystem::path& path) {
    DissimilarityMatrix m;
    m.values = load_table_csv(path, &m.ids);
    const int n = m.size();
    for (int i = 0; i < n; ++i) {
        if (m.values[i * n + i] != 0) throw InputError(path.string() + ": nonzero diagonal entry");
        for (int j = 0; j < n; ++j) {
            if (m.values[i * n + j] != m.values[j * n + i])
                throw InputError(path.string() + ": matrix is not symmetric");
            if (!(m.values[i * n + j] >= 0 && m.values[i * n + j] <= 1))
                throw InputError(path.string() + ": entry out of [0,1]");
        }
    }
    return m;
}

void export_component_csv(const std::vector<double>& table, const std::vector<std::string>& ids,
                          const std::filesystem::path& path) {
    const int n = static_cast<int>(ids.size());
    if (static_cast<int>(table.size()) != n * n) throw InputError("component table size mismatch");
    std::FILE* out = std::fopen(path.string().c_str(), "w");
    if (!out) throw InputError("cannot open " + path.string() + " for writing");
    std::fprintf(out, "id");
    for (const auto& id : ids) std::fprintf(out, ",%s", id.c_str());
    std::fprintf(out, "\n");
    for (int i = 0; i < n; ++i) {
        std::fprintf(out, "%s", ids[i].c_str());
        for (int j = 0; j < n; ++j) std::fprintf(out, ",%.17g", table[i * n + j]);
        std::fprintf(out, "\n");
    }
    std::fclose(out);
}

std::vector<double> load_component_csv(const std::filesystem::path& path, std::vector<std::string>* ids) {
    return load_table_csv(path, ids);
}

}  // namespace qcm
