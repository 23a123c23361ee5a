#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nq/error.hpp"

namespace nq {

/// Read-only window over one layer's cached keys or values, token-major:
/// position t lives at data + t * heads * head_dim.
struct KvView {
    const float* data = nullptr;
    int64_t len = 0;
    int64_t heads = 0;
    int64_t head_dim = 0;

    const float* token(int64_t t) const { return data + t * heads * head_dim; }
    const float* head(int64_t t, int64_t h) const { return token(t) + h * head_dim; }
};

/// Pre-allocated per-layer K/V storage with an append-only cursor. The whole
/// buffer is allocated once in the constructor; appends never move data, so
/// views over the valid prefix stay stable.
class KvCache {
public:
    KvCache(int64_t layers, int64_t heads, int64_t head_dim, int64_t capacity);

    /// Writes the next slot of one layer; k and v are heads*head_dim floats.
    /// Returns the position written. Throws CapacityExceeded when full.
    int64_t append(int64_t layer, std::span<const float> k, std::span<const float> v);

    KvView k_view(int64_t layer) const;
    KvView v_view(int64_t layer) const;

    /// Tokens for which every layer has been appended.
    int64_t len() const;

    int64_t layers() const { return layers_; }
    int64_t heads() const { return heads_; }
    int64_t head_dim() const { return head_dim_; }
    int64_t capacity() const { return capacity_; }

private:
    void check_layer(int64_t layer) const;
    float* k_slot(int64_t layer, int64_t pos);
    float* v_slot(int64_t layer, int64_t pos);

    int64_t layers_, heads_, head_dim_, capacity_;
    int64_t token_floats_; // heads * head_dim
    int64_t layer_stride_; // 2 * capacity * token_floats
    std::vector<float> storage_; // layers * layer_stride, K then V per layer
    std::vector<int64_t> fill_;  // per-layer cursor
};

/// Reference cache matching Figure-less textbook behavior: every append
/// reallocates and copies all previous tokens. Only used to cross-check
/// KvCache; same API so the forward pass can run on either.
class NaiveKvCache {
public:
    NaiveKvCache(int64_t layers, int64_t heads, int64_t head_dim, int64_t capacity);

    int64_t append(int64_t layer, std::span<const float> k, std::span<const float> v);
    KvView k_view(int64_t layer) const;
    KvView v_view(int64_t layer) const;
    int64_t len() const;

    int64_t layers() const { return layers_; }
    int64_t heads() const { return heads_; }
    int64_t head_dim() const { return head_dim_; }
    int64_t capacity() const { return capacity_; }

private:
    int64_t layers_, heads_, head_dim_, capacity_;
    std::vector<std::vector<float>> k_, v_;
    std::vector<int64_t> fill_;
};

} // namespace nq
