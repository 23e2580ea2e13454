#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tcorres {

// Worker count for data-parallel loops. Reads TCORRES_THREADS once; defaults
// to 1 so runs are sequential unless explicitly widened.
inline int thread_count() {
    static int n = [] {
        const char* env = std::getenv("TCORRES_THREADS");
        if (!env || !*env) return 1;
        int v = std::atoi(env);
        if (v < 1) throw std::runtime_error("TCORRES_THREADS must be a positive integer, got '" +
                                            std::string(env) + "'");
        return v;
    }();
    return n;
}

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one per
// worker, so results land in disjoint slots and the outcome does not depend
// on scheduling. Only safe for bodies with no cross-iteration writes.
template <class Fn>
void parallel_for(int64_t n, Fn&& fn) {
    const int workers = thread_count();
    if (workers == 1 || n < 2) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int used = static_cast<int>(std::min<int64_t>(workers, n));
    const int64_t chunk = (n + used - 1) / used;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(used));
    for (int w = 0; w < used; ++w) {
        const int64_t lo = w * chunk;
        const int64_t hi = std::min<int64_t>(lo + chunk, n);
        pool.emplace_back([lo, hi, &fn] {
            for (int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace tcorres
