#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qcmorph/curvature.hpp"
#include "qcmorph/pipeline.hpp"
#include "qcmorph/synthetic.hpp"

#include <filesystem>
#include <fstream>

using namespace qcm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

PipelineConfig small_config(const fs::path& manifest, const fs::path& out) {
    PipelineConfig cfg;
    cfg.manifest_path = manifest;
    cfg.out_dir = out;
    cfg.registration.demons_grid = 96;
    cfg.registration.n_iter = 6;
    cfg.replicates = 20;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("generate_synthetic: single specimen is simply-connected with apex landmarks") {
    SyntheticParams params;
    params.class_count = 1;
    params.per_class = 1;
    params.resolution = 40;
    params.seed = 7;
    auto specs = generate_synthetic_specimens(params);
    REQUIRE(specs.size() == 1);
    const auto& spec = specs[0];

    TopologyReport topo = validate_topology(spec.mesh);
    CHECK(topo.is_simply_connected_open);
    CHECK(spec.landmarks.size() == 4);

    // each landmark is a local maximum of z
    MeshConnectivity conn = build_connectivity(spec.mesh);
    for (int lm : spec.landmarks) {
        double z = spec.mesh.vertices[lm].z();
        for (int f : conn.vertex_faces[lm])
            for (int c = 0; c < 3; ++c) CHECK(spec.mesh.vertices[spec.mesh.faces[f][c]].z() <= z);
    }
    CHECK(spec.mesh.vertex_count() > 0.6 * 40 * 40);
}

TEST_CASE("generate_synthetic: same seed gives byte-identical output") {
    SyntheticParams params;
    params.class_count = 2;
    params.per_class = 5;
    params.resolution = 40;
    params.seed = 7;
    fs::path a = fresh_dir("qcm_synth_a"), b = fresh_dir("qcm_synth_b");
    generate_synthetic(params, a);
    generate_synthetic(params, b);
    for (const auto& entry : fs::directory_iterator(a)) {
        fs::path other = b / entry.path().filename();
        REQUIRE(fs::exists(other));
        CHECK(slurp(entry.path()) == slurp(other));
    }
}

TEST_CASE("generate_synthetic: different resolutions stay simply-connected") {
    for (int res : {16, 24, 33, 52}) {
        SyntheticParams params;
        params.class_count = 1;
        params.per_class = 1;
        params.resolution = res;
        auto spec = generate_synthetic_specimens(params)[0];
        CHECK(validate_topology(spec.mesh).is_simply_connected_open);
    }
}

TEST_CASE("generate_synthetic: class-wise curvature profiles separate") {
    // Frozen generator-calibration oracle: taller and narrower cusps raise the
    // apex Gaussian curvature, so the class-mean apex curvature must increase
    // strictly with the class index, with a wide margin over jitter.
    SyntheticParams params;
    params.class_count = 3;
    params.per_class = 3;
    params.resolution = 32;
    auto specs = generate_synthetic_specimens(params);
    std::vector<double> class_mean(3, 0.0);
    for (const auto& spec : specs) {
        auto K = gaussian_curvature(spec.mesh);
        double apex = 0;
        for (int lm : spec.landmarks) apex += K[lm] / spec.landmarks.size();
        class_mean[spec.class_label.back() - '0'] += apex / params.per_class;
    }
    CHECK(class_mean[1] > 1.5 * class_mean[0]);
    CHECK(class_mean[2] > 1.5 * class_mean[1]);
}

TEST_CASE("load_manifest validates structure") {
    fs::path dir = fresh_dir("qcm_manifest");
    {
        std::ofstream out(dir / "bad.json");
        out << "{\"specimens\": []}";
    }
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), InputError);
    {
        std::ofstream out(dir / "dup.json");
        out << R"({"specimens": [
            {"id": "a", "mesh": "a.off", "landmarks": [0, 1]},
            {"id": "a", "mesh": "b.off", "landmarks": [0, 1]}]})";
    }
    CHECK_THROWS_WITH_AS(load_manifest(dir / "dup.json"), doctest::Contains("duplicate"), InputError);
    CHECK_THROWS_AS(load_manifest(dir / "missing.json"), InputError);
}

TEST_CASE("run_pipeline: single-specimen manifest gives the trivial result") {
    SyntheticParams params;
    params.class_count = 1;
    params.per_class = 1;
    params.resolution = 20;
    fs::path data = fresh_dir("qcm_pipe1_data");
    fs::path manifest = generate_synthetic(params, data);

    PipelineConfig cfg = small_config(manifest, fresh_dir("qcm_pipe1_out"));
    cfg.k = 1;
    PipelineOutputs out = run_pipeline(cfg);
    CHECK(out.specimen_count == 1);
    CHECK(out.matrix.size() == 1);
    CHECK(out.matrix(0, 0) == 0.0);
    CHECK(out.labels.labels == std::vector<int>{1});
    CHECK(fs::exists(cfg.out_dir / "D.csv"));
    CHECK(fs::exists(cfg.out_dir / "run_summary.json"));
}

TEST_CASE("run_pipeline: missing mesh file aborts with the path in the message") {
    fs::path dir = fresh_dir("qcm_pipe_missing");
    {
        std::ofstream out(dir / "manifest.json");
        out << R"({"specimens": [{"id": "a", "mesh": "nowhere.off", "landmarks": [0, 1]}]})";
    }
    PipelineConfig cfg = small_config(dir / "manifest.json", dir / "out");
    cfg.k = 1;
    CHECK_THROWS_WITH_AS(run_pipeline(cfg), doctest::Contains("nowhere.off"), InputError);
}

TEST_CASE("run_pipeline: two separable classes cluster perfectly") {
    SyntheticParams params;
    params.class_count = 2;
    params.per_class = 2;
    params.resolution = 20;
    fs::path data = fresh_dir("qcm_pipe2_data");
    fs::path manifest = generate_synthetic(params, data);

    PipelineConfig cfg = small_config(manifest, fresh_dir("qcm_pipe2_out"));
    PipelineOutputs out = run_pipeline(cfg);
    CHECK(out.accuracy == 1.0);
    CHECK(out.landmark_residual_rel_max <= 1e-8);
    CHECK(out.registrations_executed == 12);
    CHECK(out.self_pairs_short_circuited == 4);
    for (int i = 0; i < out.matrix.size(); ++i) CHECK(out.matrix(i, i) == 0.0);
    CHECK(out.loocv_accuracy >= 0.0);
    CHECK(out.procrustes_accuracy >= 0.0);
}

TEST_CASE("sweep grid at increment 0.5 enumerates the six simplex points") {
    ComponentTables tables;
    tables.ids = {"a", "b"};
    tables.mu = {0, 0.2, 0.2, 0};
    tables.mean = {0, 0.4, 0.4, 0};
    tables.gauss = {0, 0.6, 0.6, 0};
    PipelineConfig cfg;
    cfg.k = 1;
    cfg.replicates = 5;
    ClusterLabels truth;
    truth.labels = {1, 1};
    truth.k = 1;
    auto entries = sweep_weights(tables, 0.5, cfg, truth);
    CHECK(entries.size() == 6);
    // every entry sums to one and lies on the half-grid
    for (const auto& e : entries) {
        CHECK(e.weights.alpha + e.weights.beta + e.weights.gamma == doctest::Approx(1.0).epsilon(1e-12));
        for (double w : {e.weights.alpha, e.weights.beta, e.weights.gamma})
            CHECK((w == 0.0 || w == 0.5 || w == 1.0));
    }
}

TEST_CASE("run_pipeline: worker count does not change numeric outputs") {
    SyntheticParams params;
    params.class_count = 2;
    params.per_class = 2;
    params.resolution = 16;
    fs::path data = fresh_dir("qcm_workers_data");
    fs::path manifest = generate_synthetic(params, data);

    PipelineConfig cfg1 = small_config(manifest, fresh_dir("qcm_workers_1"));
    cfg1.registration.n_iter = 4;
    cfg1.workers = 1;
    PipelineConfig cfg4 = cfg1;
    cfg4.out_dir = fresh_dir("qcm_workers_4");
    cfg4.workers = 4;
    run_pipeline(cfg1);
    run_pipeline(cfg4);

    for (const char* file : {"D.csv", "components_mu.csv", "components_mean.csv", "components_gauss.csv",
                             "mds_coords.csv", "labels.json"})
        CHECK(slurp(cfg1.out_dir / file) == slurp(cfg4.out_dir / file));
}

TEST_CASE("pipeline config validation") {
    PipelineConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), InputError);  // no manifest
    cfg.manifest_path = "m.json";
    cfg.out_dir = "out";
    CHECK_NOTHROW(cfg.validate());
    cfg.sweep = true;
    cfg.sweep_increment = 0.3;  // does not divide 1
    CHECK_THROWS_AS(cfg.validate(), InputError);
    cfg.sweep_increment = 0.25;
    CHECK_NOTHROW(cfg.validate());
}
