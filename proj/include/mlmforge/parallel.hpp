#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace mlmforge {

// Worker cap: MLMFORGE_THREADS if set, otherwise hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Splits [0, n) into contiguous chunks and runs fn(begin, end) on each.
// Callers only write disjoint outputs per index, so results do not depend on
// the number of workers.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t min_chunk, Fn&& fn) {
    const std::size_t workers =
        std::min(thread_count(), min_chunk == 0 ? n : n / std::max<std::size_t>(min_chunk, 1));
    if (workers <= 1 || n == 0) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    fn(std::size_t{0}, std::min(n, chunk));
    for (auto& t : pool) {
        t.join();
    }
}

}  // namespace mlmforge
