#include "qcmorph/parallel.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <thread>

namespace qcm {

namespace {
ExecMode g_mode = ExecMode::OpenMP;

int env_default_workers() {
    if (const char* env = std::getenv("QCMORPH_WORKERS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

int g_workers = env_default_workers();
}  // namespace

ExecMode default_exec_mode() { return g_mode; }
void set_default_exec_mode(ExecMode mode) { g_mode = mode; }

int worker_count() { return g_workers; }
void set_worker_count(int workers) { g_workers = std::max(1, workers); }

namespace detail {

void parallel_for_impl(std::ptrdiff_t n, ExecMode mode, void (*body)(std::ptrdiff_t, void*), void* ctx) {
    if (mode == ExecMode::Serial || g_workers == 1 || n < 2) {
        for (std::ptrdiff_t i = 0; i < n; ++i) body(i, ctx);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(g_workers)
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i, ctx);
}

}  // namespace detail
}  // namespace qcm
