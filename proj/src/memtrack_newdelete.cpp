// Global allocation hooks for peak working-set measurement. Compiled directly
// into the binaries that report memory (not into the library) so that every
// translation unit in those binaries sees the same operator new.

#include <cstdlib>
#include <new>

#include "gsr/memtrack.hpp"

namespace {

constexpr std::size_t kHeaderSize = 2 * sizeof(std::size_t);

struct Initializer {
    Initializer() { gsr::memtrack::detail::mark_enabled(); }
};
Initializer g_init;

// Layout: [padding][orig_ptr][size][payload...]; payload aligned to `align`.
void* tracked_alloc(std::size_t size, std::size_t align) {
    if (align < alignof(std::max_align_t)) align = alignof(std::max_align_t);
    const std::size_t total = size + kHeaderSize + align;
    void* raw = std::malloc(total);
    if (!raw) return nullptr;
    auto base = reinterpret_cast<std::uintptr_t>(raw) + kHeaderSize;
    const std::uintptr_t payload = (base + align - 1) / align * align;
    auto* header = reinterpret_cast<std::size_t*>(payload) - 2;
    header[0] = reinterpret_cast<std::size_t>(raw);
    header[1] = size;
    gsr::memtrack::detail::on_alloc(size);
    return reinterpret_cast<void*>(payload);
}

void tracked_free(void* p) noexcept {
    if (!p) return;
    auto* header = reinterpret_cast<std::size_t*>(p) - 2;
    gsr::memtrack::detail::on_free(header[1]);
    std::free(reinterpret_cast<void*>(header[0]));
}

} // namespace

void* operator new(std::size_t size) {
    void* p = tracked_alloc(size, alignof(std::max_align_t));
    if (!p) throw std::bad_alloc();
    return p;
}

void* operator new[](std::size_t size) { return ::operator new(size); }

void* operator new(std::size_t size, std::align_val_t align) {
    void* p = tracked_alloc(size, static_cast<std::size_t>(align));
    if (!p) throw std::bad_alloc();
    return p;
}

void* operator new[](std::size_t size, std::align_val_t align) {
    return ::operator new(size, align);
}

void* operator new(std::size_t size, const std::nothrow_t&) noexcept {
    return tracked_alloc(size, alignof(std::max_align_t));
}

void* operator new[](std::size_t size, const std::nothrow_t&) noexcept {
    return tracked_alloc(size, alignof(std::max_align_t));
}

void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete(void* p, std::align_val_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { tracked_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
