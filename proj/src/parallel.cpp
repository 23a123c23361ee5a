#include "nq/parallel.hpp"

#include <algorithm>
#include <thread>

namespace nq {

void parallel_for(int64_t n, int threads, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int64_t workers = std::clamp<int64_t>(threads, 1, n);
    if (workers == 1) {
        fn(0, n);
        return;
    }
    const int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers - 1));
    for (int64_t w = 1; w < workers; ++w) {
        int64_t begin = w * chunk;
        int64_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    fn(0, std::min(n, chunk));
    for (auto& t : pool) t.join();
}

Arena::Arena(size_t initial_bytes) {
    if (initial_bytes > 0) {
        chunks_.push_back({std::make_unique<std::byte[]>(initial_bytes), initial_bytes, 0});
    }
}

void* Arena::alloc_bytes(size_t bytes) {
    constexpr size_t kAlign = 64;
    bytes = (bytes + kAlign - 1) / kAlign * kAlign;
    while (cursor_ < chunks_.size()) {
        Chunk& c = chunks_[cursor_];
        size_t aligned = (c.used + kAlign - 1) / kAlign * kAlign;
        if (aligned + bytes <= c.size) {
            c.used = aligned + bytes;
            return c.mem.get() + aligned;
        }
        ++cursor_;
    }
    size_t chunk_size = std::max<size_t>(bytes, chunks_.empty() ? (1u << 20) : chunks_.back().size * 2);
    chunks_.push_back({std::make_unique<std::byte[]>(chunk_size), chunk_size, bytes});
    cursor_ = chunks_.size() - 1;
    return chunks_.back().mem.get();
}

float* Arena::alloc_f32(size_t count) { return static_cast<float*>(alloc_bytes(count * sizeof(float))); }
int32_t* Arena::alloc_i32(size_t count) { return static_cast<int32_t*>(alloc_bytes(count * sizeof(int32_t))); }
int8_t* Arena::alloc_i8(size_t count) { return static_cast<int8_t*>(alloc_bytes(count * sizeof(int8_t))); }

void Arena::reset() {
    for (auto& c : chunks_) c.used = 0;
    cursor_ = 0;
}

size_t Arena::capacity_bytes() const {
    size_t total = 0;
    for (const auto& c : chunks_) total += c.size;
    return total;
}

} // namespace nq
