// Global operator-new override that feeds grq::alloc_probe. Link this TU into
// a binary to make steady-state allocation counts observable; binaries without
// it still build and simply report the probe as inactive.

#include <atomic>
#include <cstdlib>
#include <new>

#include <grq/alloc_counter.hpp>

namespace {

std::atomic<std::uint64_t> g_count{0};

std::uint64_t read_count() { return g_count.load(std::memory_order_relaxed); }

struct Install {
    Install() { grq::alloc_probe::reader = &read_count; }
} g_install;

void* counted_alloc(std::size_t n) {
    g_count.fetch_add(1, std::memory_order_relaxed);
    if (n == 0) n = 1;
    void* p = std::malloc(n);
    if (!p) throw std::bad_alloc();
    return p;
}

void* counted_alloc_aligned(std::size_t n, std::size_t align) {
    g_count.fetch_add(1, std::memory_order_relaxed);
    if (n == 0) n = 1;
    void* p = std::aligned_alloc(align, (n + align - 1) / align * align);
    if (!p) throw std::bad_alloc();
    return p;
}

}  // namespace

void* operator new(std::size_t n) { return counted_alloc(n); }
void* operator new[](std::size_t n) { return counted_alloc(n); }
void* operator new(std::size_t n, std::align_val_t a) { return counted_alloc_aligned(n, std::size_t(a)); }
void* operator new[](std::size_t n, std::align_val_t a) { return counted_alloc_aligned(n, std::size_t(a)); }

void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
void operator delete(void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }
