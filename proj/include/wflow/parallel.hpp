#pragma once

// Minimal data-parallel loop. Worker count is capped by WFLOW_THREADS; results
// must not depend on the number of workers (callers use per-item RNG streams
// and disjoint writes).

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace wflow {

inline int worker_count() {
    if (const char* env = std::getenv("WFLOW_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

template <typename F>
void parallel_for(int64_t begin, int64_t end, F&& body) {
    const int64_t count = end - begin;
    const int workers = static_cast<int>(
        std::min<int64_t>(worker_count(), std::max<int64_t>(count, 1)));
    if (workers <= 1 || count < 1024) {
        for (int64_t i = begin; i < end; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    const int64_t chunk = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int64_t lo = begin + w * chunk;
        const int64_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (int64_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace wflow
