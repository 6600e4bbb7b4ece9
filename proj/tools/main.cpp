// qcmorph command-line front end: mesh validation, curvature export,
// conformal flattening, pairwise registration, the all-pairs pipeline,
// weight sweeps, clustering of precomputed matrices, and the synthetic
// dataset generator.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qcmorph/clustering.hpp"
#include "qcmorph/curvature.hpp"
#include "qcmorph/pipeline.hpp"
#include "qcmorph/registration.hpp"
#include "qcmorph/synthetic.hpp"

#include <cstdio>
#include <iostream>

using namespace qcm;

namespace {

struct CommonRegOptions {
    RegistrationConfig config;

    void attach(CLI::App* app) {
        app->add_option("--n-iter", config.n_iter, "outer iteration cap");
        app->add_option("--lambda", config.lambda, "weight of the |mu|^2 energy term");
        app->add_option("--grid", config.demons_grid, "raster resolution");
        app->add_option("--sigma", config.demons_sigma, "demons smoothing std (grid cells)");
        app->add_option("--demons-steps", config.demons_steps_per_outer, "inner demons steps per iteration");
        app->add_option("--mu-cap", config.mu_cap, "|mu| clip before map reconstruction");
    }
};

nlohmann::ordered_json topology_json(const std::filesystem::path& path) {
    TriMesh mesh = load_mesh(path);
    TopologyReport r = validate_topology(mesh);
    return {{"mesh", path.string()},
            {"vertices", mesh.vertex_count()},
            {"faces", mesh.face_count()},
            {"edges", r.edge_count},
            {"euler_characteristic", r.euler_characteristic},
            {"boundary_loops", r.boundary_loop_count},
            {"genus", r.genus},
            {"simply_connected_open", r.is_simply_connected_open}};
}

IndexWeights parse_weights(const std::vector<double>& w) {
    if (w.size() != 3) throw InputError("--weights needs exactly three values");
    IndexWeights out{w[0], w[1], w[2]};
    out.validate();
    return out;
}

ClusterMethod parse_method(const std::string& name) {
    if (name == "kmeans") return ClusterMethod::KMeans;
    if (name == "hierarchical") return ClusterMethod::Hierarchical;
    throw InputError("unknown clustering method '" + name + "'");
}

Linkage parse_linkage(const std::string& name) {
    if (name == "single") return Linkage::Single;
    if (name == "complete") return Linkage::Complete;
    if (name == "average") return Linkage::Average;
    throw InputError("unknown linkage '" + name + "'");
}

int run(int argc, char** argv) {
    CLI::App app{"quasi-conformal shape registration and clustering"};
    app.require_subcommand(1);
    int workers = 0;
    app.add_option("--workers", workers, "worker threads (default: QCMORPH_WORKERS or hardware)");

    // validate
    auto* validate = app.add_subcommand("validate", "topology-check meshes");
    std::vector<std::string> validate_paths;
    validate->add_option("meshes", validate_paths, "mesh files (off/obj/ply)")->required();

    // curvature
    auto* curvature = app.add_subcommand("curvature", "per-vertex curvature of a mesh");
    std::string curv_mesh, curv_csv;
    double curv_clip = 0.0;
    curvature->add_option("mesh", curv_mesh)->required();
    curvature->add_option("--csv", curv_csv, "write vertex,H,K,k1,k2,area CSV");
    curvature->add_option("--clip", curv_clip, "percentile clipping for the normalization report");

    // flatten
    auto* flatten = app.add_subcommand("flatten", "free-boundary conformal flattening");
    std::string flat_mesh, flat_uv_csv, flat_mu_csv;
    flatten->add_option("mesh", flat_mesh)->required();
    flatten->add_option("--uv-csv", flat_uv_csv, "write vertex,u,v CSV");
    flatten->add_option("--mu-csv", flat_mu_csv, "write face,re_mu,im_mu CSV of the flattening residual");

    // register
    auto* reg_cmd = app.add_subcommand("register", "register one mesh pair");
    std::string reg_source, reg_target, reg_landmarks, reg_report = "registration_report.json";
    CommonRegOptions reg_opts;
    reg_cmd->add_option("--source", reg_source)->required();
    reg_cmd->add_option("--target", reg_target)->required();
    reg_cmd->add_option("--landmarks", reg_landmarks, "text file of 'src_index target_index' lines")->required();
    reg_cmd->add_option("--report", reg_report, "output report JSON path");
    reg_opts.attach(reg_cmd);

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "all-pairs registration, dissimilarity and clustering");
    PipelineConfig pipe_cfg;
    std::vector<double> pipe_weights;
    std::string pipe_method = "kmeans", pipe_linkage = "average";
    bool pipe_sweep = false;
    CommonRegOptions pipe_reg;
    pipe->add_option("--manifest", pipe_cfg.manifest_path)->required();
    pipe->add_option("--out", pipe_cfg.out_dir)->required();
    pipe->add_option("--weights", pipe_weights, "alpha beta gamma (default 1/3 each)")->expected(3);
    pipe->add_flag("--sweep", pipe_sweep, "sweep the weight simplex instead of fixing weights");
    pipe->add_option("--sweep-increment", pipe_cfg.sweep_increment, "simplex grid increment");
    pipe->add_option("--method", pipe_method, "kmeans | hierarchical");
    pipe->add_option("--k", pipe_cfg.k, "cluster count (default: number of classes)");
    pipe->add_option("--linkage", pipe_linkage, "single | complete | average");
    pipe->add_option("--replicates", pipe_cfg.replicates, "k-means replicates");
    pipe->add_option("--mds-dim", pipe_cfg.mds_dimension, "MDS dimension");
    pipe->add_option("--seed", pipe_cfg.seed, "RNG seed");
    pipe->add_flag("--skip-failed", pipe_cfg.skip_failed, "record pair failures instead of aborting");
    pipe_reg.attach(pipe);

    // sweep (from cached components)
    auto* sweep_cmd = app.add_subcommand("sweep", "weight sweep over cached component tables");
    std::string sweep_components, sweep_manifest, sweep_out = "sweep.csv";
    double sweep_inc = 0.05;
    std::string sweep_method = "kmeans";
    int sweep_k = 0, sweep_replicates = 100;
    std::uint64_t sweep_seed = 0;
    sweep_cmd->add_option("--components", sweep_components, "directory holding components_*.csv")->required();
    sweep_cmd->add_option("--manifest", sweep_manifest, "manifest with class labels")->required();
    sweep_cmd->add_option("--out", sweep_out, "output CSV");
    sweep_cmd->add_option("--increment", sweep_inc);
    sweep_cmd->add_option("--method", sweep_method);
    sweep_cmd->add_option("--k", sweep_k);
    sweep_cmd->add_option("--replicates", sweep_replicates);
    sweep_cmd->add_option("--seed", sweep_seed);

    // cluster (from a matrix CSV)
    auto* cluster_cmd = app.add_subcommand("cluster", "cluster a dissimilarity matrix CSV");
    std::string cl_matrix, cl_method = "kmeans", cl_linkage = "average", cl_truth, cl_labels_json,
                cl_coords_csv;
    int cl_k = 0, cl_replicates = 100, cl_mds = 2;
    std::uint64_t cl_seed = 0;
    bool cl_loocv = false;
    cluster_cmd->add_option("--matrix", cl_matrix)->required();
    cluster_cmd->add_option("--method", cl_method);
    cluster_cmd->add_option("--k", cl_k)->required();
    cluster_cmd->add_option("--linkage", cl_linkage);
    cluster_cmd->add_option("--replicates", cl_replicates);
    cluster_cmd->add_option("--mds-dim", cl_mds);
    cluster_cmd->add_option("--seed", cl_seed);
    cluster_cmd->add_option("--truth", cl_truth, "manifest with class labels for accuracy");
    cluster_cmd->add_flag("--loocv", cl_loocv, "also run leave-one-out cross-validation");
    cluster_cmd->add_option("--labels-json", cl_labels_json);
    cluster_cmd->add_option("--coords-csv", cl_coords_csv);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic landmark dataset");
    SyntheticParams synth_params;
    std::string synth_out;
    synth->add_option("--classes", synth_params.class_count);
    synth->add_option("--per-class", synth_params.per_class);
    synth->add_option("--resolution", synth_params.resolution);
    synth->add_option("--seed", synth_params.seed);
    synth->add_option("--out", synth_out)->required();

    CLI11_PARSE(app, argc, argv);
    if (workers > 0) set_worker_count(workers);

    if (*validate) {
        bool all_ok = true;
        for (const auto& p : validate_paths) {
            nlohmann::ordered_json j = topology_json(p);
            std::cout << j.dump(2) << "\n";
            all_ok = all_ok && j["simply_connected_open"].get<bool>();
        }
        return 0;
    }
    if (*curvature) {
        TriMesh mesh = load_mesh(curv_mesh);
        CurvatureField field = curvature_field(mesh);
        if (!curv_csv.empty()) export_curvature_csv(field, curv_csv);
        NormalizedField intensity = normalize_field(field.gaussian, NormalizeRange::Unit, curv_clip);
        std::printf("vertices %d  K range [%.6g, %.6g]%s\n", mesh.vertex_count(), intensity.input_min,
                    intensity.input_max, intensity.degenerate_range ? "  (degenerate)" : "");
        return 0;
    }
    if (*flatten) {
        TriMesh mesh = load_mesh(flat_mesh);
        PlanarEmbedding emb = lscm(mesh);
        if (!flat_uv_csv.empty()) export_embedding_csv(emb, flat_uv_csv);
        if (!flat_mu_csv.empty()) export_mu_csv(beltrami_from_map(emb, emb.uv), flat_mu_csv);
        std::printf("flattened %d vertices, %zu flipped faces\n", emb.vertex_count(),
                    emb.flipped_faces.size());
        return 0;
    }
    if (*reg_cmd) {
        TriMesh source = load_mesh(reg_source);
        TriMesh target = load_mesh(reg_target);
        LandmarkCorrespondence lm = load_landmarks(reg_landmarks, source, target);
        PlanarEmbedding e1 = lscm(source), e2 = lscm(target);
        NormalizedField i1 = normalize_field(curvature_field(source).gaussian, NormalizeRange::Unit);
        NormalizedField i2 = normalize_field(curvature_field(target).gaussian, NormalizeRange::Unit);
        RegistrationResult reg = inconsistent_planar_register(e1, e2, i1, i2, lm, reg_opts.config);
        write_registration_report(reg, source, target, reg_opts.config, reg_report);
        std::printf("iterations %d  landmark residual %.3g (rel %.3g)  report %s\n", reg.iterations,
                    reg.landmark_residual_max, reg.landmark_residual_max / reg.domain_diameter,
                    reg_report.c_str());
        return 0;
    }
    if (*pipe) {
        if (!pipe_weights.empty()) pipe_cfg.weights = parse_weights(pipe_weights);
        pipe_cfg.sweep = pipe_sweep;
        pipe_cfg.cluster_method = parse_method(pipe_method);
        pipe_cfg.linkage = parse_linkage(pipe_linkage);
        pipe_cfg.registration = pipe_reg.config;
        pipe_cfg.workers = workers;
        PipelineOutputs out = run_pipeline(pipe_cfg);
        std::printf("specimens %d  registrations %d  accuracy %.6g  loocv %.6g  procrustes %.6g\n",
                    out.specimen_count, out.registrations_executed, out.accuracy, out.loocv_accuracy,
                    out.procrustes_accuracy);
        std::printf("selected weights (%.3g, %.3g, %.3g)  outputs in %s\n", out.selected_weights.alpha,
                    out.selected_weights.beta, out.selected_weights.gamma, out.out_dir.string().c_str());
        return 0;
    }
    if (*sweep_cmd) {
        std::filesystem::path dir = sweep_components;
        ComponentTables tables;
        tables.mu = load_component_csv(dir / "components_mu.csv", &tables.ids);
        std::vector<std::string> ids2, ids3;
        tables.mean = load_component_csv(dir / "components_mean.csv", &ids2);
        tables.gauss = load_component_csv(dir / "components_gauss.csv", &ids3);
        if (ids2 != tables.ids || ids3 != tables.ids)
            throw InputError("component tables disagree on specimen ids");
        DatasetManifest manifest = load_manifest(sweep_manifest);
        if (!manifest.has_labels()) throw InputError("sweep requires class labels in the manifest");
        ClusterLabels truth = truth_labels(manifest);
        PipelineConfig cfg;
        cfg.cluster_method = parse_method(sweep_method);
        cfg.k = sweep_k > 0 ? sweep_k : truth.k;
        cfg.replicates = sweep_replicates;
        cfg.seed = sweep_seed;
        auto entries = sweep_weights(tables, sweep_inc, cfg, truth);
        std::FILE* out = std::fopen(sweep_out.c_str(), "w");
        if (!out) throw InputError("cannot open " + sweep_out);
        std::fprintf(out, "alpha,beta,gamma,accuracy\n");
        const SweepEntry* best = nullptr;
        for (const auto& e : entries) {
            std::fprintf(out, "%.17g,%.17g,%.17g,%.17g\n", e.weights.alpha, e.weights.beta, e.weights.gamma,
                         e.accuracy);
            if (!best || e.accuracy > best->accuracy) best = &e;
        }
        std::fclose(out);
        std::printf("%zu grid points, best accuracy %.6g at (%.3g, %.3g, %.3g)\n", entries.size(),
                    best->accuracy, best->weights.alpha, best->weights.beta, best->weights.gamma);
        return 0;
    }
    if (*cluster_cmd) {
        DissimilarityMatrix D = load_matrix_csv(cl_matrix);
        PipelineConfig cfg;
        cfg.cluster_method = parse_method(cl_method);
        cfg.linkage = parse_linkage(cl_linkage);
        cfg.k = cl_k;
        cfg.replicates = cl_replicates;
        cfg.mds_dimension = cl_mds;
        cfg.seed = cl_seed;
        ClusterLabels labels = cluster_matrix(D, cfg);
        EmbeddingCoords coords = mds(D, std::min(cl_mds, std::max(1, D.size() - 1)));
        if (!cl_coords_csv.empty()) export_coords_csv(coords, D.ids, cl_coords_csv);

        nlohmann::ordered_json j;
        j["ids"] = D.ids;
        j["labels"] = labels.labels;
        j["k"] = cl_k;
        j["method"] = cl_method;
        j["seed"] = cl_seed;
        if (labels.wcss >= 0) j["wcss"] = labels.wcss;
        j["mds_stress"] = coords.stress;
        if (!cl_truth.empty()) {
            DatasetManifest manifest = load_manifest(cl_truth);
            if (!manifest.has_labels()) throw InputError("--truth manifest has no class labels");
            ClusterLabels truth = truth_labels(manifest);
            j["accuracy"] = pairwise_accuracy(labels, truth);
            if (cl_loocv) {
                LoocvParams lp;
                lp.k = cl_k;
                lp.mds_dimension = cl_mds;
                lp.replicates = cl_replicates;
                lp.seed = cl_seed + 1000;
                j["loocv_accuracy"] = loocv(D, truth, lp);
            }
        }
        if (!cl_labels_json.empty()) {
            std::ofstream out(cl_labels_json);
            out << j.dump(2) << "\n";
        }
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    if (*synth) {
        auto manifest = generate_synthetic(synth_params, synth_out);
        std::printf("wrote %d specimens, manifest %s\n", synth_params.class_count * synth_params.per_class,
                    manifest.string().c_str());
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
