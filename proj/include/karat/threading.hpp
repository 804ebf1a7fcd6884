#pragma once

namespace karat {

// Thin wrappers over the OpenMP runtime so callers never include <omp.h>.
void set_num_threads(int n);
int max_threads();

/// Applies KARAT_THREADS from the environment, if set. Returns the thread cap in effect.
int configure_threads_from_env();

}  // namespace karat
