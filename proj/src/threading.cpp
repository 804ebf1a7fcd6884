#include "karat/threading.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace karat {

void set_num_threads(int n) { omp_set_num_threads(n < 1 ? 1 : n); }

int max_threads() { return omp_get_max_threads(); }

int configure_threads_from_env() {
  if (const char* env = std::getenv("KARAT_THREADS")) {
    try {
      set_num_threads(std::stoi(env));
    } catch (const std::exception&) {
      // ignore malformed values and keep the runtime default
    }
  }
  return max_threads();
}

}  // namespace karat
