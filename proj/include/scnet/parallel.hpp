#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace scnet {

namespace detail {
inline std::atomic<unsigned> g_num_threads{1};
}

/// Worker count used by the GEMM-style kernels. Defaults to 1.
inline void set_num_threads(unsigned n) { detail::g_num_threads.store(std::max(1u, n)); }
inline unsigned num_threads() { return detail::g_num_threads.load(); }

/// Splits [0, count) into one contiguous range per worker and calls
/// fn(lo, hi) for each. Every item is handled by exactly one thread, so
/// results never depend on the worker count.
template <class Fn>
void parallel_ranges(std::size_t count, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(num_threads(), count);
    if (workers <= 1) {
        if (count > 0) fn(std::size_t{0}, count);
        return;
    }
    const std::size_t chunk = (count + workers - 1) / workers;
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t lo = chunk; lo < count; lo += chunk) {
        const std::size_t hi = std::min(count, lo + chunk);
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    fn(std::size_t{0}, std::min(chunk, count));
}

template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    parallel_ranges(count, [&fn](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
}

}  // namespace scnet
