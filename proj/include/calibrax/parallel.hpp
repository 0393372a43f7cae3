#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace calibrax {

// Runs fn(t) for t in [0, n). Task t goes to worker t % workers; callers write
// results into slots indexed by t, so output never depends on scheduling.
// The exception of the lowest failing task index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    if (workers < 1) workers = 1;
    if (static_cast<std::size_t>(workers) > n) workers = static_cast<int>(n);
    if (workers <= 1) {
        for (std::size_t t = 0; t < n; ++t) fn(t);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t t = static_cast<std::size_t>(w); t < n; t += static_cast<std::size_t>(workers)) {
                try {
                    fn(t);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace calibrax
