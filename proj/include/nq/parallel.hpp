#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace nq {

/// Runs fn(begin, end) over a static contiguous partition of [0, n).
/// Workers write to disjoint ranges only, so the result must not depend on
/// the worker count; threads <= 1 runs inline.
void parallel_for(int64_t n, int threads, const std::function<void(int64_t, int64_t)>& fn);

/// Bump allocator for per-token scratch. Chunks are kept across reset(), so a
/// generation loop stops allocating once the first token has sized the arena.
class Arena {
public:
    explicit Arena(size_t initial_bytes = 0);

    /// 64-byte aligned, zero-initialized on first use of a chunk only.
    float* alloc_f32(size_t count);
    int32_t* alloc_i32(size_t count);
    int8_t* alloc_i8(size_t count);

    /// Invalidates prior allocations, keeps the memory.
    void reset();

    size_t capacity_bytes() const;

private:
    void* alloc_bytes(size_t bytes);

    struct Chunk {
        std::unique_ptr<std::byte[]> mem;
        size_t size = 0;
        size_t used = 0;
    };
    std::vector<Chunk> chunks_;
    size_t cursor_ = 0; // chunk currently being filled
};

} // namespace nq
