#include "qcmorph/pipeline.hpp"

#include "qcmorph/parallel.hpp"

#include <nlohmann/json.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace qcm {

bool DatasetManifest::has_labels() const {
    return !specimens.empty() &&
           std::all_of(specimens.begin(), specimens.end(), [](const auto& s) { return !s.class_label.empty(); });
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("manifest " + path.string() + ": " + e.what());
    }
    if (!j.contains("specimens") || !j["specimens"].is_array() || j["specimens"].empty())
        throw InputError("manifest " + path.string() + ": missing or empty 'specimens' array");

    DatasetManifest manifest;
    std::set<std::string> seen;
    std::filesystem::path base = path.parent_path();
    for (const auto& item : j["specimens"]) {
        SpecimenRecord rec;
        if (!item.contains("id") || !item.contains("mesh") || !item.contains("landmarks"))
            throw InputError("manifest: each specimen needs 'id', 'mesh' and 'landmarks'");
        rec.id = item["id"].get<std::string>();
        if (!seen.insert(rec.id).second) throw InputError("manifest: duplicate specimen id '" + rec.id + "'");
        rec.mesh_path = base / item["mesh"].get<std::string>();
        rec.landmarks = item["landmarks"].get<std::vector<int>>();
        if (item.contains("class")) rec.class_label = item["class"].get<std::string>();
        manifest.specimens.push_back(std::move(rec));
    }
    manifest.landmark_count = static_cast<int>(manifest.specimens.front().landmarks.size());
    for (const auto& s : manifest.specimens) {
        if (static_cast<int>(s.landmarks.size()) != manifest.landmark_count)
            throw InputError("manifest: specimen '" + s.id + "' has a different landmark count");
        if (s.landmarks.empty()) throw InputError("manifest: specimen '" + s.id + "' has no landmarks");
    }
    return manifest;
}

void PipelineConfig::validate() const {
    registration.validate();
    if (manifest_path.empty()) throw InputError("pipeline: manifest path is required");
    if (out_dir.empty()) throw InputError("pipeline: output directory is required");
    if (workers < 0) throw InputError("pipeline: workers must be >= 1 (or 0 for the default)");
    if (replicates < 1) throw InputError("pipeline: replicates must be >= 1");
    if (mds_dimension < 1) throw InputError("pipeline: mds dimension must be >= 1");
    if (weights) weights->validate();
    if (sweep) {
        double n = 1.0 / sweep_increment;
        if (sweep_increment <= 0 || std::abs(n - std::round(n)) > 1e-9)
            throw InputError("pipeline: sweep increment must divide 1 evenly");
    }
}

ClusterLabels truth_labels(const DatasetManifest& manifest) {
    std::set<std::string> classes;
    for (const auto& s : manifest.specimens) classes.insert(s.class_label);
    std::map<std::string, int> index;
    int next = 1;
    for (const auto& c : classes) index[c] = next++;
    ClusterLabels truth;
    truth.method = "truth";
    truth.k = static_cast<int>(classes.size());
    for (const auto& s : manifest.specimens) truth.labels.push_back(index[s.class_label]);
    return truth;
}

ClusterLabels cluster_matrix(const DissimilarityMatrix& D, const PipelineConfig& config) {
    int k = config.k;
    if (k < 1) throw InputError("pipeline: cluster count k must be set");
    if (config.cluster_method == ClusterMethod::Hierarchical) return hierarchical_cluster(D, k, config.linkage);
    EmbeddingCoords emb = mds(D, std::min(config.mds_dimension, std::max(1, D.size() - 1)));
    return kmeans(emb, k, config.replicates, config.seed);
}

namespace {

std::vector<IndexWeights> simplex_grid(double increment) {
    int n = static_cast<int>(std::round(1.0 / increment));
    std::vector<IndexWeights> grid;
    for (int a = 0; a <= n; ++a)
        for (int b = 0; b <= n - a; ++b) {
            int c = n - a - b;
            grid.push_back({static_cast<double>(a) / n, static_cast<double>(b) / n, static_cast<double>(c) / n});
        }
    return grid;
}

DissimilarityMatrix matrix_from_components(const ComponentTables& tables, const IndexWeights& w) {
    const int n = tables.size();
    std::vector<double> delta(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j)
                delta[i * n + j] = w.alpha * tables.mu[i * n + j] + w.beta * tables.mean[i * n + j] +
                                   w.gamma * tables.gauss[i * n + j];
    return build_matrix(delta, tables.ids, w);
}

struct PreparedSpecimen {
    TriMesh mesh;
    PlanarEmbedding embedding;
    NormalizedField intensity;     // unit-normalized Gaussian curvature
    NormalizedField mean_signed;   // symmetric-normalized H
    NormalizedField gauss_signed;  // symmetric-normalized K
    std::vector<Vec3> landmark_positions;
};

}  // namespace

std::vector<SweepEntry> sweep_weights(const ComponentTables& components, double increment,
                                      const PipelineConfig& config, const ClusterLabels& truth) {
    if (components.size() == 0) throw InputError("sweep_weights: missing component cache");
    std::vector<SweepEntry> entries;
    for (const IndexWeights& w : simplex_grid(increment)) {
        DissimilarityMatrix D = matrix_from_components(components, w);
        ClusterLabels labels = cluster_matrix(D, config);
        entries.push_back({w, pairwise_accuracy(labels, truth)});
    }
    return entries;
}

PipelineOutputs run_pipeline(const PipelineConfig& config) {
    config.validate();
    using Clock = std::chrono::steady_clock;
    auto t_start = Clock::now();

    DatasetManifest manifest = load_manifest(config.manifest_path);
    const int n = manifest.size();
    if (manifest.landmark_count < 2)
        throw InputError("pipeline: at least 2 landmarks per specimen are required for registration");

    int workers = config.workers > 0 ? config.workers : worker_count();
    std::filesystem::create_directories(config.out_dir);

    PipelineOutputs out;
    out.out_dir = config.out_dir;
    out.specimen_count = n;

    // Load and validate every specimen up front; report all failures at once.
    std::vector<PreparedSpecimen> prep(n);
    std::vector<std::string> load_errors(n);
    parallel_for(n, [&](std::ptrdiff_t i) {
        const SpecimenRecord& rec = manifest.specimens[i];
        try {
            TriMesh mesh = load_mesh(rec.mesh_path);
            TopologyReport topo = validate_topology(mesh);
            if (!topo.is_simply_connected_open)
                throw InputError("not simply-connected open (chi=" + std::to_string(topo.euler_characteristic) +
                                 ", boundary loops=" + std::to_string(topo.boundary_loop_count) + ")");
            for (int lm : rec.landmarks)
                if (lm < 0 || lm >= mesh.vertex_count())
                    throw InputError("landmark vertex " + std::to_string(lm) + " out of range");
            prep[i].mesh = std::move(mesh);
        } catch (const std::exception& e) {
            load_errors[i] = e.what();
        }
    });
    {
        std::string all;
        for (int i = 0; i < n; ++i)
            if (!load_errors[i].empty())
                all += "\n  specimen '" + manifest.specimens[i].id + "' (" +
                       manifest.specimens[i].mesh_path.string() + "): " + load_errors[i];
        if (!all.empty()) throw InputError("pipeline: specimen validation failed:" + all);
    }

    // Per-specimen preprocessing: curvature fields and conformal flattening.
    std::vector<std::string> prep_errors(n);
    parallel_for(n, [&](std::ptrdiff_t i) {
        try {
            PreparedSpecimen& p = prep[i];
            CurvatureField curv = curvature_field(p.mesh, ExecMode::Serial);
            p.intensity = normalize_field(curv.gaussian, NormalizeRange::Unit);
            p.mean_signed = normalize_field(curv.mean, NormalizeRange::Symmetric);
            p.gauss_signed = normalize_field(curv.gaussian, NormalizeRange::Symmetric);
            p.embedding = lscm(p.mesh);
            for (int lm : manifest.specimens[i].landmarks) p.landmark_positions.push_back(p.mesh.vertices[lm]);
        } catch (const std::exception& e) {
            prep_errors[i] = e.what();
        }
    });
    for (int i = 0; i < n; ++i)
        if (!prep_errors[i].empty())
            throw NumericalError("pipeline: preprocessing failed for specimen '" + manifest.specimens[i].id +
                                 "': " + prep_errors[i]);
    auto t_prep = Clock::now();

    // All ordered pairs; self pairs short-circuit to delta components of zero.
    ComponentTables tables;
    tables.ids.reserve(n);
    for (const auto& s : manifest.specimens) tables.ids.push_back(s.id);
    tables.mu.assign(static_cast<std::size_t>(n) * n, 0.0);
    tables.mean.assign(static_cast<std::size_t>(n) * n, 0.0);
    tables.gauss.assign(static_cast<std::size_t>(n) * n, 0.0);

    struct PairTask {
        int i, j;
    };
    std::vector<PairTask> pairs;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) pairs.push_back({i, j});
    out.self_pairs_short_circuited = n;

    struct PairRecord {
        double lm_residual_rel = 0;
        double omega1_frac = 0, omega2_frac = 0;
        int iterations = 0;
        bool monotone = true;
        std::string error;
    };
    std::vector<PairRecord> records(pairs.size());

    const int total_pairs = static_cast<int>(pairs.size());
#pragma omp parallel for schedule(dynamic) num_threads(workers)
    for (int t = 0; t < total_pairs; ++t) {
        const auto& [i, j] = pairs[t];
        PairRecord& rec = records[t];
        try {
            LandmarkCorrespondence lm;
            lm.source_vertex_ids = manifest.specimens[i].landmarks;
            lm.target_vertex_ids = manifest.specimens[j].landmarks;
            // Per-pair work stays single-threaded; the pair loop is the
            // parallel axis, keeping numerics independent of the worker count.
            RegistrationResult reg = inconsistent_planar_register(
                prep[i].embedding, prep[j].embedding, prep[i].intensity, prep[j].intensity, lm,
                config.registration, ExecMode::Serial);
            DeltaComponents comp = delta_components(reg, prep[i].mesh, prep[i].mean_signed,
                                                    prep[i].gauss_signed, prep[j].mean_signed,
                                                    prep[j].gauss_signed);
            tables.mu[i * n + j] = comp.mu_term;
            tables.mean[i * n + j] = comp.mean_term;
            tables.gauss[i * n + j] = comp.gauss_term;

            rec.lm_residual_rel =
                reg.domain_diameter > 0 ? reg.landmark_residual_max / reg.domain_diameter : 0;
            rec.iterations = reg.iterations;
            for (std::size_t e = 1; e < reg.trace.size(); ++e)
                rec.monotone = rec.monotone && reg.trace[e].intensity <= reg.trace[e - 1].intensity;
            double a1 = 0, s1 = 0, a2 = 0, s2 = 0;
            for (int f = 0; f < prep[i].mesh.face_count(); ++f) {
                double a = prep[i].mesh.face_area(f);
                s1 += a;
                if (reg.overlap.omega1_faces[f]) a1 += a;
            }
            for (int f = 0; f < prep[j].mesh.face_count(); ++f) {
                double a = prep[j].mesh.face_area(f);
                s2 += a;
                if (reg.overlap.omega2_faces[f]) a2 += a;
            }
            rec.omega1_frac = a1 / s1;
            rec.omega2_frac = a2 / s2;
        } catch (const std::exception& e) {
            rec.error = e.what();
        }
    }
    out.registrations_executed = total_pairs;
    auto t_pairs = Clock::now();

    for (int t = 0; t < total_pairs; ++t) {
        if (!records[t].error.empty()) {
            out.failures.push_back({pairs[t].i, pairs[t].j, records[t].error});
            tables.mu[pairs[t].i * n + pairs[t].j] = std::nan("");
        }
        out.landmark_residual_rel_max = std::max(out.landmark_residual_rel_max, records[t].lm_residual_rel);
    }
    if (!out.failures.empty() && !config.skip_failed) {
        std::string msg = "pipeline: " + std::to_string(out.failures.size()) + " pair registrations failed:";
        for (const auto& f : out.failures)
            msg += "\n  (" + tables.ids[f.source] + " -> " + tables.ids[f.target] + "): " + f.message;
        throw NumericalError(msg);
    }
    if (config.skip_failed) {
        // A failed ordered pair borrows its transpose; both directions failing
        // is unrecoverable.
        for (const auto& f : out.failures) {
            int ij = f.source * n + f.target, ji = f.target * n + f.source;
            if (std::isnan(tables.mu[ji]))
                throw NumericalError("pipeline: pair (" + tables.ids[f.source] + ", " + tables.ids[f.target] +
                                     ") failed in both directions");
            tables.mu[ij] = tables.mu[ji];
            tables.mean[ij] = tables.mean[ji];
            tables.gauss[ij] = tables.gauss[ji];
        }
    }

    export_component_csv(tables.mu, tables.ids, config.out_dir / "components_mu.csv");
    export_component_csv(tables.mean, tables.ids, config.out_dir / "components_mean.csv");
    export_component_csv(tables.gauss, tables.ids, config.out_dir / "components_gauss.csv");

    {
        std::ofstream pairs_csv(config.out_dir / "pairs.csv");
        pairs_csv << "source,target,mu_term,mean_term,gauss_term,lm_residual_rel,omega1_frac,omega2_frac,"
                     "iterations,monotone\n";
        char buf[512];
        for (int t = 0; t < total_pairs; ++t) {
            const auto& [i, j] = pairs[t];
            const auto& r = records[t];
            std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n",
                          tables.ids[i].c_str(), tables.ids[j].c_str(), tables.mu[i * n + j],
                          tables.mean[i * n + j], tables.gauss[i * n + j], r.lm_residual_rel, r.omega1_frac,
                          r.omega2_frac, r.iterations, r.monotone ? 1 : 0);
            pairs_csv << buf;
        }
    }

    // Clustering / accuracy.
    bool have_truth = manifest.has_labels();
    ClusterLabels truth;
    PipelineConfig cluster_config = config;
    if (have_truth) {
        truth = truth_labels(manifest);
        if (cluster_config.k == 0) cluster_config.k = truth.k;
    }
    if (cluster_config.k == 0)
        throw InputError("pipeline: cluster count k must be given when the manifest has no class labels");

    IndexWeights selected = config.weights.value_or(IndexWeights{});
    if (config.sweep) {
        if (!have_truth) throw InputError("pipeline: weight sweep requires class labels in the manifest");
        out.sweep = sweep_weights(tables, config.sweep_increment, cluster_config, truth);
        double best = -1;
        for (const auto& entry : out.sweep) {
            if (entry.accuracy > best) {
                best = entry.accuracy;
                selected = entry.weights;
            }
        }
        std::ofstream sweep_csv(config.out_dir / "sweep.csv");
        sweep_csv << "alpha,beta,gamma,accuracy\n";
        char buf[256];
        for (const auto& entry : out.sweep) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", entry.weights.alpha,
                          entry.weights.beta, entry.weights.gamma, entry.accuracy);
            sweep_csv << buf;
        }
    }
    out.selected_weights = selected;

    out.matrix = matrix_from_components(tables, selected);
    export_matrix_csv(out.matrix, config.out_dir / "D.csv");

    EmbeddingCoords coords = mds(out.matrix, std::min(config.mds_dimension, std::max(1, n - 1)));
    export_coords_csv(coords, tables.ids, config.out_dir / "mds_coords.csv");
    out.labels = n == 1 ? ClusterLabels{{1}, 1, "trivial", 0, 0}
                        : cluster_matrix(out.matrix, cluster_config);

    if (have_truth && n >= 2) {
        out.accuracy = pairwise_accuracy(out.labels, truth);
        if (n >= 3) {
            LoocvParams lp;
            lp.k = cluster_config.k;
            lp.mds_dimension = config.mds_dimension;
            lp.replicates = config.replicates;
            lp.seed = config.seed + 1000;
            out.loocv_accuracy = loocv(out.matrix, truth, lp);
        }
        // Landmark Procrustes baseline on the same clustering protocol.
        if (manifest.landmark_count >= 3) {
            std::vector<double> res(static_cast<std::size_t>(n) * n, 0.0);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    if (i != j)
                        res[i * n + j] = std::min(
                            1.0, procrustes_baseline(prep[i].landmark_positions, prep[j].landmark_positions));
            DissimilarityMatrix pd = build_matrix(res, tables.ids, IndexWeights{});
            export_matrix_csv(pd, config.out_dir / "procrustes_D.csv");
            ClusterLabels plabels = cluster_matrix(pd, cluster_config);
            out.procrustes_accuracy = pairwise_accuracy(plabels, truth);
        }
    }
    auto t_end = Clock::now();

    // Labels + run summary.
    {
        nlohmann::ordered_json lj;
        lj["ids"] = tables.ids;
        lj["labels"] = out.labels.labels;
        lj["k"] = cluster_config.k;
        lj["method"] = config.cluster_method == ClusterMethod::KMeans ? "kmeans" : "hierarchical";
        lj["seed"] = config.seed;
        if (out.labels.wcss >= 0) lj["wcss"] = out.labels.wcss;
        lj["mds_stress"] = coords.stress;
        lj["replicates"] = config.replicates;
        std::ofstream lf(config.out_dir / "labels.json");
        lf << lj.dump(2) << "\n";
    }
    {
        auto ms = [](auto a, auto b) {
            return std::chrono::duration_cast<std::chrono::milliseconds>(b - a).count();
        };
        nlohmann::ordered_json sj;
        sj["manifest"] = config.manifest_path.string();
        sj["specimens"] = n;
        sj["workers"] = workers;
        sj["seed"] = config.seed;
        sj["registration"] = {{"n_iter", config.registration.n_iter},
                              {"lambda", config.registration.lambda},
                              {"demons_grid", config.registration.demons_grid},
                              {"demons_sigma", config.registration.demons_sigma},
                              {"demons_steps_per_outer", config.registration.demons_steps_per_outer},
                              {"mu_cap", config.registration.mu_cap}};
        sj["registrations_executed"] = out.registrations_executed;
        sj["self_pairs_short_circuited"] = out.self_pairs_short_circuited;
        sj["landmark_residual_rel_max"] = out.landmark_residual_rel_max;
        sj["selected_weights"] = {out.selected_weights.alpha, out.selected_weights.beta,
                                  out.selected_weights.gamma};
        sj["sweep"] = config.sweep;
        sj["accuracy"] = out.accuracy;
        sj["loocv_accuracy"] = out.loocv_accuracy;
        sj["procrustes_accuracy"] = out.procrustes_accuracy;
        nlohmann::ordered_json failures = nlohmann::ordered_json::array();
        for (const auto& f : out.failures)
            failures.push_back({{"source", tables.ids[f.source]}, {"target", tables.ids[f.target]},
                                {"error", f.message}});
        sj["failures"] = failures;
        // Wall-clock block: the one part of the summary excluded from the
        // bit-identical reproducibility contract.
        sj["timings"] = {{"preprocess_ms", ms(t_start, t_prep)},
                         {"pairs_ms", ms(t_prep, t_pairs)},
                         {"analysis_ms", ms(t_pairs, t_end)},
                         {"total_ms", ms(t_start, t_end)}};
        std::ofstream sf(config.out_dir / "run_summary.json");
        sf << sj.dump(2) << "\n";
    }
    return out;
}

}  // namespace qcm
