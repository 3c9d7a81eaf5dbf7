#pragma once

#include <cstddef>
#include <functional>

namespace lrnet {

/// Global worker count for copy evaluation (defaults to hardware concurrency).
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Runs body(chunk_index, begin, end) over `items` split into `chunks`
/// fixed ranges. Chunk boundaries depend only on (items, chunks), never on
/// the worker count, so reductions done per chunk and folded in chunk order
/// are bit-identical for any thread count.
void parallel_chunks(std::size_t items, std::size_t chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

}  // namespace lrnet
