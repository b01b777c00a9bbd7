#pragma once

#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace fallfuse {

// Worker count for parallel_for. FALLFUSE_THREADS overrides; 1 disables.
inline int worker_count() {
    static const int n = [] {
        if (const char* env = std::getenv("FALLFUSE_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc > 8 ? 8 : hc);
    }();
    return n;
}

// Static partition of [0, n) across workers. Every worker writes disjoint
// output ranges and iterates its chunk in index order, so results are
// bit-identical for any worker count.
template <typename F>
void parallel_for(std::int64_t n, F&& body) {
    const int workers = worker_count();
    if (n <= 0) return;
    if (workers == 1 || n == 1) {
        body(static_cast<std::int64_t>(0), n);
        return;
    }
    const int used = static_cast<int>(n < workers ? n : workers);
    const std::int64_t chunk = (n + used - 1) / used;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(used) - 1);
    for (int w = 1; w < used; ++w) {
        std::int64_t begin = w * chunk;
        std::int64_t end = begin + chunk < n ? begin + chunk : n;
        if (begin >= end) break;
        threads.emplace_back([&body, begin, end] { body(begin, end); });
    }
    body(static_cast<std::int64_t>(0), chunk < n ? chunk : n);
    for (auto& t : threads) t.join();
}

}  // namespace fallfuse
