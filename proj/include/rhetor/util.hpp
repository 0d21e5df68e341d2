#pragma once

#include <cstddef>
#include <functional>
#include <string>

namespace rhetor {

// Runs fn(0..n-1) across up to max_threads workers. Blocks until done; the
// first exception (if any) is rethrown on the calling thread. fn must be
// safe to call concurrently for distinct indices.
void parallel_for(size_t n, int max_threads,
                  const std::function<void(size_t)>& fn);

// Shortest decimal string that round-trips the value (to_chars). Keeps CSV
// and JSON output byte-stable across runs.
std::string format_double(double value);

}  // namespace rhetor
