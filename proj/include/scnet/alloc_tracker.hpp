#pragma once

// Byte accounting for every tensor / scratch buffer allocated by the library.
// The benchmark and the fusion tests read the peak to tell whether a kernel
// materialized a full-size intermediate.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>

namespace scnet {

class AllocTracker {
public:
    static void on_alloc(std::size_t bytes) noexcept {
        const std::int64_t now = current_.fetch_add(static_cast<std::int64_t>(bytes)) +
                                 static_cast<std::int64_t>(bytes);
        std::int64_t seen = peak_.load();
        while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
        }
    }

    static void on_free(std::size_t bytes) noexcept {
        current_.fetch_sub(static_cast<std::int64_t>(bytes));
    }

    static std::int64_t current() noexcept { return current_.load(); }
    static std::int64_t peak() noexcept { return peak_.load(); }

    /// Restart peak tracking from the bytes live right now.
    static void reset_peak() noexcept { peak_.store(current_.load()); }

private:
    static inline std::atomic<std::int64_t> current_{0};
    static inline std::atomic<std::int64_t> peak_{0};
};

/// Measures the peak bytes allocated above the level live at construction.
class TransientScope {
public:
    TransientScope() noexcept : baseline_(AllocTracker::current()) { AllocTracker::reset_peak(); }
    std::int64_t peak_transient() const noexcept { return AllocTracker::peak() - baseline_; }

private:
    std::int64_t baseline_;
};

template <class T>
struct TrackingAllocator {
    using value_type = T;

    TrackingAllocator() noexcept = default;
    template <class U>
    TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        T* p = std::allocator<T>{}.allocate(n);
        AllocTracker::on_alloc(n * sizeof(T));
        return p;
    }

    void deallocate(T* p, std::size_t n) noexcept {
        AllocTracker::on_free(n * sizeof(T));
        std::allocator<T>{}.deallocate(p, n);
    }

    template <class U>
    bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

}  // namespace scnet
