#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace msdn {

// Worker count for kernel-level parallelism; MSDN_THREADS overrides the
// hardware count. Results are bitwise independent of this value: workers own
// disjoint output slices and the per-element summation order never changes.
inline int worker_count() {
    static const int n = [] {
        if (const char* env = std::getenv("MSDN_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1 && v <= 64) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc > 8 ? 8 : hc);
    }();
    return n;
}

// Runs f(begin, end) over a contiguous partition of [0, n).
template <class F>
void parallel_for(std::int64_t n, F&& f) {
    const int workers = worker_count();
    if (n <= 1 || workers <= 1) {
        if (n > 0) f(std::int64_t{0}, n);
        return;
    }
    const int used = static_cast<int>(n < workers ? n : workers);
    const std::int64_t chunk = (n + used - 1) / used;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(used - 1));
    for (int w = 1; w < used; ++w) {
        const std::int64_t begin = w * chunk;
        const std::int64_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back([&f, begin, end] { f(begin, end); });
    }
    f(std::int64_t{0}, std::min(n, chunk));
    for (auto& t : threads) t.join();
}

}  // namespace msdn
