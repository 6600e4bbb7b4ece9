// Timing comparison of the serial reference kernels against their OpenMP
// counterparts: curvature evaluation, intensity rasterization, one demons
// phase, and a small all-pairs registration batch.

#include "qcmorph/curvature.hpp"
#include "qcmorph/parallel.hpp"
#include "qcmorph/pipeline.hpp"
#include "qcmorph/registration.hpp"
#include "qcmorph/synthetic.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>

using namespace qcm;

namespace {

template <typename Fn>
double time_ms(Fn&& fn, int repeats = 3) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

void report(const char* name, double serial_ms, double omp_ms) {
    std::printf("%-28s serial %8.2f ms   openmp %8.2f ms   speedup %.2fx\n", name, serial_ms, omp_ms,
                serial_ms / omp_ms);
}

}  // namespace

int main() {
    std::printf("workers: %d\n", worker_count());

    SyntheticParams params;
    params.class_count = 1;
    params.per_class = 1;
    params.resolution = 96;
    auto specimens = generate_synthetic_specimens(params);
    const TriMesh& mesh = specimens[0].mesh;
    std::printf("mesh: %d vertices, %d faces\n\n", mesh.vertex_count(), mesh.face_count());

    report("curvature_field",
           time_ms([&] { curvature_field(mesh, ExecMode::Serial); }),
           time_ms([&] { curvature_field(mesh, ExecMode::OpenMP); }));

    PlanarEmbedding emb = lscm(mesh);
    CurvatureField curv = curvature_field(mesh);
    NormalizedField intensity = normalize_field(curv.gaussian, NormalizeRange::Unit);
    report("rasterize_intensity 512",
           time_ms([&] { rasterize_intensity(emb, intensity, 512, ExecMode::Serial); }),
           time_ms([&] { rasterize_intensity(emb, intensity, 512, ExecMode::OpenMP); }));

    RegistrationConfig reg_cfg;
    reg_cfg.demons_grid = 512;
    IntensityImage img = rasterize_intensity(emb, intensity, 512);
    auto demons_once = [&](ExecMode mode) {
        DisplacementField disp;
        demons_update(img, img, disp, reg_cfg, mode);
    };
    report("demons phase 512",
           time_ms([&] { demons_once(ExecMode::Serial); }),
           time_ms([&] { demons_once(ExecMode::OpenMP); }));

    // Pair batch: the pipeline parallelizes across ordered pairs.
    SyntheticParams batch;
    batch.class_count = 2;
    batch.per_class = 2;
    batch.resolution = 32;
    auto dir = std::filesystem::temp_directory_path() / "qcmorph_bench";
    auto manifest = generate_synthetic(batch, dir);
    PipelineConfig cfg;
    cfg.manifest_path = manifest;
    cfg.registration.demons_grid = 128;
    cfg.registration.n_iter = 6;
    cfg.k = 2;
    cfg.replicates = 20;
    double serial_ms = time_ms(
        [&] {
            cfg.out_dir = dir / "serial";
            cfg.workers = 1;
            run_pipeline(cfg);
        },
        1);
    double omp_ms = time_ms(
        [&] {
            cfg.out_dir = dir / "parallel";
            cfg.workers = worker_count();
            run_pipeline(cfg);
        },
        1);
    report("pipeline 12 pairs", serial_ms, omp_ms);
    return 0;
}
