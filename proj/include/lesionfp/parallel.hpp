#pragma once

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lesionfp {

// Runs fn(i) for i in [0, n) on up to `threads` workers with a static
// round-robin assignment. Callers write results by index. The exception of
// the lowest failing index is rethrown after all workers finish.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::exception_ptr first;
    int first_index = n;
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += threads) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (i < first_index) {
                        first_index = i;
                        first = std::current_exception();
                    }
                    return;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (first) std::rethrow_exception(first);
}

}  // namespace lesionfp
