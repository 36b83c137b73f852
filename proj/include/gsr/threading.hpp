#pragma once

#include <cstddef>
#include <functional>

namespace gsr {

// Process-wide cap on worker threads. 0 restores the hardware default.
void set_max_threads(int n);
int max_threads();

// Runs fn(chunk) for chunk = 0..nchunks-1 on the shared pool. Chunking is a
// property of the work, not of the thread count, so callers that write one
// output slot per chunk (or merge chunk results in index order) get identical
// results at any thread count.
void parallel_chunks(std::size_t nchunks, const std::function<void(std::size_t)>& fn);

// Convenience: splits [0, n) into contiguous ranges of at most grain elements
// and calls fn(chunk_index, begin, end).
void parallel_ranges(std::size_t n, std::size_t grain,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

} // namespace gsr
