#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ismeta {

/// Number of worker threads used when a caller passes jobs = 0.
inline std::size_t default_jobs() noexcept { return std::max(1u, std::thread::hardware_concurrency()); }

/// Calls fn(i) for i in [0, n) on up to `jobs` threads. Each index runs
/// exactly once; callers write results into per-index slots, so the outcome
/// does not depend on scheduling. The first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    if (jobs == 0) jobs = default_jobs();
    jobs = std::min(jobs, n);
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n);
            }
        }
    };
    std::vector<std::jthread> threads;
    threads.reserve(jobs - 1);
    for (std::size_t t = 0; t + 1 < jobs; ++t) threads.emplace_back(worker);
    worker();
    threads.clear();
    if (error) std::rethrow_exception(error);
}

}  // namespace ismeta
