#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ndf {

/// Number of workers used when a caller passes 0.
inline unsigned default_thread_count() {
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for every i in [begin, end) split into contiguous chunks.
/// Each index is processed exactly once, so results written per index do not
/// depend on the worker count. The first exception thrown is rethrown.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, Fn&& fn, unsigned threads = 0) {
    if (end <= begin) return;
    const std::size_t count = end - begin;
    std::size_t workers = threads == 0 ? default_thread_count() : threads;
    workers = std::min<std::size_t>(workers, count);
    if (workers <= 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }

    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = begin + w * chunk;
        const std::size_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

} // namespace ndf
