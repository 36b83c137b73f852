#pragma once

#include <cstddef>
#include <cstdint>

namespace gsr::memtrack {

// Heap accounting backed by global operator new/delete overrides. The
// overrides live in memtrack_newdelete.cpp and are linked only into binaries
// that need the measurement (the CLI and the acceptance suite); when they are
// absent every query returns 0.
bool enabled();
std::uint64_t current_bytes();
std::uint64_t peak_bytes();
// Resets the peak to the current live size and returns the new baseline.
std::uint64_t reset_peak();

namespace detail {
void on_alloc(std::size_t bytes);
void on_free(std::size_t bytes);
void mark_enabled();
} // namespace detail

} // namespace gsr::memtrack
