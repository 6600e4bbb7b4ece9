#pragma once

#include <cstddef>

namespace qcm {

/// Execution mode for the data-parallel kernels. Every kernel has a serial
/// reference path; the OpenMP path must produce bit-identical results (loops
/// only write disjoint slots, reductions are done serially in index order).
enum class ExecMode { Serial, OpenMP };

/// Process-wide default used by kernels that are not passed a mode explicitly.
ExecMode default_exec_mode();
void set_default_exec_mode(ExecMode mode);

/// Worker cap for OpenMP regions (≥ 1). Defaults to the hardware count,
/// overridable via the QCMORPH_WORKERS environment variable.
int worker_count();
void set_worker_count(int workers);

namespace detail {
void parallel_for_impl(std::ptrdiff_t n, ExecMode mode, void (*body)(std::ptrdiff_t, void*), void* ctx);
}

/// Runs fn(i) for i in [0, n). With ExecMode::OpenMP iterations run across
/// worker_count() threads; fn must only write state owned by iteration i.
template <typename Fn>
void parallel_for(std::ptrdiff_t n, Fn&& fn, ExecMode mode = default_exec_mode()) {
    auto body = [](std::ptrdiff_t i, void* ctx) { (*static_cast<Fn*>(ctx))(i); };
    detail::parallel_for_impl(n, mode, body, &fn);
}

}  // namespace qcm
