#pragma once

// Tiny fork-join helper. Work items write only to their own index, so the
// result never depends on the worker count; KTLAB_WORKERS overrides the
// hardware default (useful for pinning CI runs to one thread).

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace ktlab {

inline unsigned worker_count() {
    if (const char* env = std::getenv("KTLAB_WORKERS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Atomic work
// stealing by index keeps load balanced; fn must be safe to run concurrently
// for distinct i.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const unsigned workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto drain = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const unsigned nt = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    pool.reserve(nt - 1);
    for (unsigned t = 0; t + 1 < nt; ++t) pool.emplace_back(drain);
    drain();
    for (auto& th : pool) th.join();
}

}  // namespace ktlab
