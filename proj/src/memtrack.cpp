#include "gsr/memtrack.hpp"

#include <atomic>

namespace gsr::memtrack {
namespace {

std::atomic<std::uint64_t> g_current{0};
std::atomic<std::uint64_t> g_peak{0};
std::atomic<bool> g_enabled{false};

} // namespace

bool enabled() { return g_enabled.load(std::memory_order_relaxed); }

std::uint64_t current_bytes() { return g_current.load(std::memory_order_relaxed); }

std::uint64_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }

std::uint64_t reset_peak() {
    const std::uint64_t cur = g_current.load(std::memory_order_relaxed);
    g_peak.store(cur, std::memory_order_relaxed);
    return cur;
}

namespace detail {

void mark_enabled() { g_enabled.store(true, std::memory_order_relaxed); }

void on_alloc(std::size_t bytes) {
    const std::uint64_t cur =
        g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::uint64_t peak = g_peak.load(std::memory_order_relaxed);
    while (cur > peak &&
           !g_peak.compare_exchange_weak(peak, cur, std::memory_order_relaxed)) {
    }
}

void on_free(std::size_t bytes) {
    g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

} // namespace detail
} // namespace gsr::memtrack
