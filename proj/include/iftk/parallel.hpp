#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace iftk {

/// Run fn(0..n_jobs-1) on up to `workers` threads. Results must be written
/// to per-index slots by the callers so output is independent of scheduling.
/// The first exception wins and is rethrown after all threads join.
inline void parallel_for(int n_jobs, int workers, const std::function<void(int)>& fn) {
    if (n_jobs <= 0) return;
    workers = std::max(1, std::min(workers, n_jobs));
    if (workers == 1) {
        for (int i = 0; i < n_jobs; ++i) fn(i);
        return;
    }

    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n_jobs) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace iftk
