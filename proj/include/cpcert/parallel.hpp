#pragma once

#include <cstddef>

namespace cpcert {

/// Thread budget for the OpenMP kernels. Defaults to the OpenMP runtime's
/// choice; the CP_CERTIFY_THREADS environment variable caps it. Returns 1 in
/// builds without OpenMP.
int thread_cap();

/// Overrides the cap for the current process (0 restores the default).
void set_thread_cap(int threads);

/// Selects between the OpenMP kernels and their serial reference versions.
enum class Execution { serial, parallel };

}  // namespace cpcert
