// Global operator new/delete instrumentation. Linking alloc_counter.cpp into
// a test binary makes every heap allocation observable.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace nqtest {

struct AllocStats {
    uint64_t count = 0;
    uint64_t bytes = 0;
};

AllocStats alloc_stats();

// Records the size of each allocation while active (single-threaded use).
void start_alloc_trace();
std::vector<size_t> stop_alloc_trace();

} // namespace nqtest
