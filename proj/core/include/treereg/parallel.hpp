#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace treereg::parallel {

// Process-wide cap on worker threads. 0 means hardware concurrency.
inline std::atomic<unsigned>& max_threads_slot() {
  static std::atomic<unsigned> slot{0};
  return slot;
}

inline void set_max_threads(unsigned n) { max_threads_slot().store(n); }

inline unsigned max_threads() {
  const unsigned cap = max_threads_slot().load();
  if (cap != 0) return cap;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

constexpr std::size_t kChunkSize = 4096;

// Partitions [0, count) into fixed-size chunks and calls
// body(chunk_index, begin, end) for each. Chunk boundaries depend only on
// count, never on the worker count, so per-chunk partial results merged in
// chunk-index order give bit-identical totals on any machine.
template <typename Body>
void for_chunks(std::size_t count, const Body& body) {
  if (count == 0) return;
  const std::size_t n_chunks = (count + kChunkSize - 1) / kChunkSize;
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(max_threads(), n_chunks));
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) {
      body(c, c * kChunkSize, std::min(count, (c + 1) * kChunkSize));
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        body(c, c * kChunkSize, std::min(count, (c + 1) * kChunkSize));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::size_t chunk_count(std::size_t count) {
  return (count + kChunkSize - 1) / kChunkSize;
}

}  // namespace treereg::parallel
