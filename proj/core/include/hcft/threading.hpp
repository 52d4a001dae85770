#pragma once

#include <cstddef>
#include <functional>

namespace hcft {

// Worker budget for internal parallelism. Reads HCFT_THREADS once; falls back
// to the hardware concurrency. Always >= 1.
std::size_t thread_budget();

// Splits [0, n) into contiguous chunks and runs body(begin, end) on each,
// using at most thread_budget() threads. Chunks never overlap, so the result
// is identical for any thread count as long as body only writes locations
// derived from its own index range. Runs inline when a single chunk suffices.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

// Tunes the process allocator to keep large freed buffers cached for reuse
// instead of returning them to the kernel page by page. Training and
// inference allocate and release the same huge activation blocks every step;
// without this the allocator round-trips them through mmap each time. Safe
// to call more than once; a no-op on non-glibc platforms.
void retain_large_allocations();

} // namespace hcft
