#include "hcft/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hcft {

std::size_t thread_budget() {
    static const std::size_t budget = [] {
        if (const char* env = std::getenv("HCFT_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return static_cast<std::size_t>(v);
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return static_cast<std::size_t>(hw > 0 ? hw : 1);
    }();
    return budget;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    const std::size_t workers = std::min(thread_budget(), n);
    if (workers <= 1) {
        body(0, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    std::size_t begin = chunk; // chunk 0 runs on this thread
    for (std::size_t w = 1; w < workers && begin < n; ++w) {
        const std::size_t end = std::min(begin + chunk, n);
        threads.emplace_back(body, begin, end);
        begin = end;
    }
    body(0, std::min(chunk, n));
    for (auto& t : threads) t.join();
}

void retain_large_allocations() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

} // namespace hcft
