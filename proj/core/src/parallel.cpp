#include "lrnet/parallel.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lrnet {

namespace {
std::size_t g_threads = 0;
}

void set_thread_count(std::size_t n) { g_threads = n; }

std::size_t thread_count() {
  if (g_threads > 0) return g_threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

void parallel_chunks(std::size_t items, std::size_t chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
  if (items == 0) return;
  if (chunks == 0) chunks = 1;
  if (chunks > items) chunks = items;

  const std::size_t workers = std::min(thread_count(), chunks);
  auto chunk_range = [&](std::size_t c) {
    const std::size_t base = items / chunks, rem = items % chunks;
    const std::size_t begin = c * base + std::min(c, rem);
    return std::pair<std::size_t, std::size_t>{begin, begin + base + (c < rem ? 1 : 0)};
  };

  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) {
      auto [b, e] = chunk_range(c);
      body(c, b, e);
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      auto [b, e] = chunk_range(c);
      try {
        body(c, b, e);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace lrnet
