#pragma once

#include "qcmorph/core.hpp"
#include "qcmorph/dissimilarity.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace qcm {

struct EmbeddingCoords {
    int dimension = 0;
    std::vector<double> coords;  // row-major n×dimension
    double stress = 0;           // Σ_{i<j} (‖xi−xj‖ − D(i,j))²

    int point_count() const { return dimension > 0 ? static_cast<int>(coords.size()) / dimension : 0; }
    Eigen::Map<const Eigen::VectorXd> point(int i) const {
        return {coords.data() + static_cast<std::ptrdiff_t>(i) * dimension, dimension};
    }
};

enum class Linkage { Single, Complete, Average };

struct ClusterLabels {
    std::vector<int> labels;  // each in [1, k]
    int k = 0;
    std::string method;
    std::uint64_t seed = 0;      // k-means only
    double wcss = -1;            // k-means only

    int size() const { return static_cast<int>(labels.size()); }
};

/// Classical MDS (double-centering eigendecomposition) refined by metric
/// stress majorization. Requires p <= n-1.
EmbeddingCoords mds(const DissimilarityMatrix& D, int p);

/// Minimal-stress placement of one extra point given its dissimilarity row.
std::vector<double> mds_insert_point(const EmbeddingCoords& emb, const std::vector<double>& dissim_row);

/// Agglomerative clustering cut at k clusters; ties break on the lowest
/// original-index pair. Labels are numbered by first appearance.
ClusterLabels hierarchical_cluster(const DissimilarityMatrix& D, int k, Linkage linkage = Linkage::Average);

/// Best-of-replicates Lloyd iterations with k-means++ seeding from the given
/// seed. Deterministic for a fixed seed and replicate count.
ClusterLabels kmeans(const EmbeddingCoords& points, int k, int replicates = 100, std::uint64_t seed = 0);

/// Fraction of specimen pairs whose same-cluster relation matches the truth.
double pairwise_accuracy(const ClusterLabels& labels, const ClusterLabels& truth);

struct LoocvParams {
    int k = 0;              // clusters; 0 means "number of truth classes"
    int mds_dimension = 2;
    int replicates = 100;
    std::uint64_t seed = 0;
};

/// Leave-one-out: fit MDS + k-means on n-1 specimens, place the held-out
/// point by stress-minimizing insertion, classify by the majority truth label
/// of the nearest centroid's cluster.
double loocv(const DissimilarityMatrix& D, const ClusterLabels& truth, const LoocvParams& params);

/// Full Procrustes residual between corresponding 3D landmark sets: both are
/// centered and scaled to unit RMS size, then the optimal rotation+scale is
/// removed; returns the RMS of the remaining distances (symmetric, in [0,1]).
double procrustes_baseline(const std::vector<Vec3>& landmarks1, const std::vector<Vec3>& landmarks2);

void export_coords_csv(const EmbeddingCoords& coords, const std::vector<std::string>& ids,
                       const std::filesystem::path& path);

}  // namespace qcm
