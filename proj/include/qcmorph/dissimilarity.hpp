#pragma once

#include "qcmorph/curvature.hpp"
#include "qcmorph/registration.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace qcm {

/// Non-negative weights with alpha + beta + gamma = 1 (within 1e-12).
struct IndexWeights {
    double alpha = 1.0 / 3, beta = 1.0 / 3, gamma = 1.0 / 3;

    void validate() const;
};

/// The three area-averaged integrals the combined shape index is affine in:
/// delta = alpha*mu_term + beta*mean_term + gamma*gauss_term. Caching them per
/// ordered pair makes weight sweeps free of re-registration.
struct DeltaComponents {
    double mu_term = 0;     // (1/A) ∫ |mu|
    double mean_term = 0;   // (1/A) ∫ ½|H̃₁(f) − H̃₂|
    double gauss_term = 0;  // (1/A) ∫ ½|K̃₁(f) − K̃₂|

    double combine(const IndexWeights& w) const {
        return w.alpha * mu_term + w.beta * mean_term + w.gamma * gauss_term;
    }
};

struct DissimilarityMatrix {
    std::vector<std::string> ids;
    std::vector<double> values;  // row-major n×n
    IndexWeights weights;

    int size() const { return static_cast<int>(ids.size()); }
    double operator()(int i, int j) const { return values[i * size() + j]; }
};

/// Area-weighted integrals over the source common region. Curvature fields
/// must be symmetric-normalized ([-1,1]); the target values are pulled back
/// through the barycentric correspondence.
DeltaComponents delta_components(const RegistrationResult& reg, const TriMesh& mesh1,
                                 const NormalizedField& mean1, const NormalizedField& gauss1,
                                 const NormalizedField& mean2, const NormalizedField& gauss2);

/// delta(S1,S2) in [0,1].
double shape_index_delta(const RegistrationResult& reg, const TriMesh& mesh1,
                         const NormalizedField& mean1, const NormalizedField& gauss1,
                         const NormalizedField& mean2, const NormalizedField& gauss2,
                         const IndexWeights& weights);

/// d = min(delta12, delta21).
double dissimilarity(double delta12, double delta21);

/// From a complete n×n table of ordered deltas: D(i,j) = min(δij, δji),
/// diagonal forced to zero. Entries are validated to lie in [0,1]; NaN marks
/// a missing entry.
DissimilarityMatrix build_matrix(const std::vector<double>& delta_table, const std::vector<std::string>& ids,
                                 const IndexWeights& weights);

void export_matrix_csv(const DissimilarityMatrix& matrix, const std::filesystem::path& path);
DissimilarityMatrix load_matrix_csv(const std::filesystem::path& path);

/// n×n table of one component (same layout as the delta table).
void export_component_csv(const std::vector<double>& table, const std::vector<std::string>& ids,
                          const std::filesystem::path& path);
std::vector<double> load_component_csv(const std::filesystem::path& path, std::vector<std::string>* ids);

}  // namespace qcm
