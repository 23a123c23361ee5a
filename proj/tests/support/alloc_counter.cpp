#include "support/alloc_counter.hpp"

#include <atomic>
#include <cstdlib>
#include <new>

namespace {

std::atomic<uint64_t> g_count{0};
std::atomic<uint64_t> g_bytes{0};

// Trace buffer managed with malloc so recording does not recurse into new.
bool g_tracing = false;
size_t* g_trace = nullptr;
size_t g_trace_len = 0, g_trace_cap = 0;

void record(size_t size) {
    g_count.fetch_add(1, std::memory_order_relaxed);
    g_bytes.fetch_add(size, std::memory_order_relaxed);
    if (g_tracing) {
        if (g_trace_len == g_trace_cap) {
            g_trace_cap = g_trace_cap ? g_trace_cap * 2 : 1024;
            g_trace = static_cast<size_t*>(std::realloc(g_trace, g_trace_cap * sizeof(size_t)));
        }
        g_trace[g_trace_len++] = size;
    }
}

} // namespace

void* operator new(size_t size) {
    record(size);
    void* p = std::malloc(size ? size : 1);
    if (!p) throw std::bad_alloc();
    return p;
}

void* operator new[](size_t size) { return ::operator new(size); }

void operator delete(void* p) noexcept { std::free(p); }
void operator delete(void* p, size_t) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete[](void* p, size_t) noexcept { std::free(p); }

namespace nqtest {

AllocStats alloc_stats() { return {g_count.load(), g_bytes.load()}; }

void start_alloc_trace() {
    g_trace_len = 0;
    g_tracing = true;
}

std::vector<size_t> stop_alloc_trace() {
    g_tracing = false;
    return std::vector<size_t>(g_trace, g_trace + g_trace_len);
}

} // namespace nqtest
