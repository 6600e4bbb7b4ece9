#pragma once

#include "qcmorph/clustering.hpp"
#include "qcmorph/dissimilarity.hpp"
#include "qcmorph/registration.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace qcm {

struct SpecimenRecord {
    std::string id;
    std::filesystem::path mesh_path;  // resolved against the manifest directory
    std::vector<int> landmarks;
    std::string class_label;  // optional ground truth
};

struct DatasetManifest {
    std::vector<SpecimenRecord> specimens;
    int landmark_count = 0;

    int size() const { return static_cast<int>(specimens.size()); }
    bool has_labels() const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);

enum class ClusterMethod { KMeans, Hierarchical };

struct PipelineConfig {
    std::filesystem::path manifest_path;
    std::filesystem::path out_dir;
    RegistrationConfig registration;
    std::optional<IndexWeights> weights;  // fixed weights; unset -> (1/3,1/3,1/3)
    bool sweep = false;
    double sweep_increment = 0.05;
    ClusterMethod cluster_method = ClusterMethod::KMeans;
    int k = 0;  // 0 -> number of truth classes
    Linkage linkage = Linkage::Average;
    int replicates = 100;
    int mds_dimension = 2;
    int workers = 0;  // 0 -> worker_count()
    std::uint64_t seed = 0;
    bool skip_failed = false;

    void validate() const;
};

struct PairFailure {
    int source = 0, target = 0;
    std::string message;
};

struct SweepEntry {
    IndexWeights weights;
    double accuracy = -1;
};

struct PipelineOutputs {
    std::filesystem::path out_dir;
    int specimen_count = 0;
    int registrations_executed = 0;
    int self_pairs_short_circuited = 0;
    double landmark_residual_rel_max = 0;
    std::vector<PairFailure> failures;
    DissimilarityMatrix matrix;        // at the selected (or best-sweep) weights
    ClusterLabels labels;
    double accuracy = -1;              // -1 when no truth labels
    double loocv_accuracy = -1;
    double procrustes_accuracy = -1;   // landmark-baseline accuracy, same protocol
    std::vector<SweepEntry> sweep;     // filled when sweeping
    IndexWeights selected_weights;
};

/// Ordered-pair components table: entry (i,j) holds the component for the
/// registration of specimen i onto specimen j.
struct ComponentTables {
    std::vector<std::string> ids;
    std::vector<double> mu, mean, gauss;  // row-major n×n; diagonal zero

    int size() const { return static_cast<int>(ids.size()); }
};

/// All-pairs registration, component caching, dissimilarity assembly,
/// clustering and reports. Writes JSON/CSV artifacts into config.out_dir;
/// every numeric output is reproducible bit-for-bit for a fixed config and
/// seed (wall-clock timings live only in the run summary's "timings" block).
PipelineOutputs run_pipeline(const PipelineConfig& config);

/// Accuracy per simplex grid point at the given increment, reusing the cached
/// component integrals (no re-registration).
std::vector<SweepEntry> sweep_weights(const ComponentTables& components, double increment,
                                      const PipelineConfig& config, const ClusterLabels& truth);

/// Clustering of one dissimilarity matrix per the pipeline parameters.
ClusterLabels cluster_matrix(const DissimilarityMatrix& D, const PipelineConfig& config);

/// Truth labels from the manifest's class strings (sorted unique -> 1..C).
ClusterLabels truth_labels(const DatasetManifest& manifest);

}  // namespace qcm
