#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "deepafl/matrix.hpp"

namespace deepafl {

/// Worker cap: DEEPAFL_THREADS when set (>= 1), hardware concurrency otherwise.
inline int max_threads() {
    static const int cached = [] {
        if (const char* env = std::getenv("DEEPAFL_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return cached;
}

/// Run fn(0..n-1) across worker threads. Callers must make iterations
/// independent; results may not depend on the interleaving.
template <typename Fn>
void parallel_for(Index n, Fn&& fn) {
    const Index workers = std::min<Index>(n, max_threads());
    if (workers <= 1) {
        for (Index i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<Index> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            const Index i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (Index w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace deepafl
