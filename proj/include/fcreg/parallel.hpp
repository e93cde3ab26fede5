#pragma once

// Chunked parallel loops with results that do not depend on the worker
// count: work is split into fixed-size chunks and per-chunk partials are
// reduced in chunk-index order, so reductions are bitwise reproducible.

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace fcreg {

namespace detail {
inline int& worker_count_ref() {
  static int count = [] {
    if (const char* env = std::getenv("FCREG_THREADS")) {
      const int n = std::atoi(env);
      if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return count;
}
}  // namespace detail

inline int worker_count() { return detail::worker_count_ref(); }

/// Overrides the FCREG_THREADS / hardware default (n >= 1).
inline void set_worker_count(int n) {
  if (n >= 1) detail::worker_count_ref() = n;
}

/// Runs fn(chunk_index, begin, end) over [0, n) split into fixed-size
/// chunks. Chunk boundaries depend only on `chunk`, never on the worker
/// count; each chunk is processed by exactly one worker.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t chunk, Fn&& fn) {
  if (n == 0) return;
  if (chunk == 0) chunk = 1;
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  const int workers = std::min<std::size_t>(worker_count(), n_chunks);

  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(begin + chunk, n);
    fn(c, begin, end);
  };

  if (workers <= 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t c = next.fetch_add(1);
        if (c >= n_chunks) break;
        run_chunk(c);
      }
    });
  }
  for (auto& t : pool) t.join();
}

/// Deterministic parallel sum: fn(begin, end) -> partial over the chunk;
/// partials are added in chunk order regardless of scheduling.
template <typename Fn>
double parallel_sum(std::size_t n, std::size_t chunk, Fn&& fn) {
  if (n == 0) return 0.0;
  if (chunk == 0) chunk = 1;
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  std::vector<double> partials(n_chunks, 0.0);
  parallel_chunks(n, chunk, [&](std::size_t c, std::size_t b, std::size_t e) {
    partials[c] = fn(b, e);
  });
  double total = 0.0;
  for (double p : partials) total += p;
  return total;
}

}  // namespace fcreg
