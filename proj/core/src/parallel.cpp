#include "bae/parallel.hpp"

#include <cstdlib>
#include <string>

namespace bae {

std::size_t default_worker_count() {
  if (const char* env = std::getenv("BAE_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (...) {
      // fall through to hardware concurrency
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace bae
