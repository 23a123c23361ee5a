#include "nq/kvcache.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace nq {

KvCache::KvCache(int64_t layers, int64_t heads, int64_t head_dim, int64_t capacity)
    : layers_(layers), heads_(heads), head_dim_(head_dim), capacity_(capacity) {
    if (layers <= 0 || heads <= 0 || head_dim <= 0 || capacity <= 0)
        throw InvalidConfig("kv cache dimensions must all be positive");
    token_floats_ = heads_ * head_dim_;
    layer_stride_ = 2 * capacity_ * token_floats_;
    storage_.resize(static_cast<size_t>(layers_ * layer_stride_));
    fill_.assign(static_cast<size_t>(layers_), 0);
}

void KvCache::check_layer(int64_t layer) const {
    if (layer < 0 || layer >= layers_)
        throw IndexError("kv cache layer " + std::to_string(layer) + " out of range");
}

float* KvCache::k_slot(int64_t layer, int64_t pos) {
    return storage_.data() + layer * layer_stride_ + pos * token_floats_;
}

float* KvCache::v_slot(int64_t layer, int64_t pos) {
    return storage_.data() + layer * layer_stride_ + capacity_ * token_floats_ + pos * token_floats_;
}

int64_t KvCache::append(int64_t layer, std::span<const float> k, std::span<const float> v) {
    check_layer(layer);
    if (static_cast<int64_t>(k.size()) != token_floats_ ||
        static_cast<int64_t>(v.size()) != token_floats_)
        throw ShapeError("kv append: expected heads*head_dim floats");
    const int64_t pos = fill_[static_cast<size_t>(layer)];
    if (pos >= capacity_)
        throw CapacityExceeded("kv cache full at capacity " + std::to_string(capacity_));
    std::memcpy(k_slot(layer, pos), k.data(), static_cast<size_t>(token_floats_) * sizeof(float));
    std::memcpy(v_slot(layer, pos), v.data(), static_cast<size_t>(token_floats_) * sizeof(float));
    fill_[static_cast<size_t>(layer)] = pos + 1;
    return pos;
}

KvView KvCache::k_view(int64_t layer) const {
    check_layer(layer);
    return {storage_.data() + layer * layer_stride_, fill_[static_cast<size_t>(layer)], heads_,
            head_dim_};
}

KvView KvCache::v_view(int64_t layer) const {
    check_layer(layer);
    return {storage_.data() + layer * layer_stride_ + capacity_ * token_floats_,
            fill_[static_cast<size_t>(layer)], heads_, head_dim_};
}

int64_t KvCache::len() const {
    return *std::min_element(fill_.begin(), fill_.end());
}

NaiveKvCache::NaiveKvCache(int64_t layers, int64_t heads, int64_t head_dim, int64_t capacity)
    : layers_(layers), heads_(heads), head_dim_(head_dim), capacity_(capacity) {
    if (layers <= 0 || heads <= 0 || head_dim <= 0 || capacity <= 0)
        throw InvalidConfig("kv cache dimensions must all be positive");
    k_.resize(static_cast<size_t>(layers));
    v_.resize(static_cast<size_t>(layers));
    fill_.assign(static_cast<size_t>(layers), 0);
}

int64_t NaiveKvCache::append(int64_t layer, std::span<const float> k, std::span<const float> v) {
    if (layer < 0 || layer >= layers_)
        throw IndexError("kv cache layer " + std::to_string(layer) + " out of range");
    const int64_t tf = heads_ * head_dim_;
    if (static_cast<int64_t>(k.size()) != tf || static_cast<int64_t>(v.size()) != tf)
        throw ShapeError("kv append: expected heads*head_dim floats");
    const int64_t pos = fill_[static_cast<size_t>(layer)];
    if (pos >= capacity_)
        throw CapacityExceeded("kv cache full at capacity " + std::to_string(capacity_));

    // Fresh buffers each time: the reallocation cost this type exists to show.
    auto grow = [tf, pos](std::vector<float>& old, std::span<const float> tok) {
        std::vector<float> next(static_cast<size_t>((pos + 1) * tf));
        std::copy(old.begin(), old.end(), next.begin());
        std::copy(tok.begin(), tok.end(), next.begin() + pos * tf);
        old = std::move(next);
    };
    grow(k_[static_cast<size_t>(layer)], k);
    grow(v_[static_cast<size_t>(layer)], v);
    fill_[static_cast<size_t>(layer)] = pos + 1;
    return pos;
}

KvView NaiveKvCache::k_view(int64_t layer) const {
    if (layer < 0 || layer >= layers_)
        throw IndexError("kv cache layer " + std::to_string(layer) + " out of range");
    return {k_[static_cast<size_t>(layer)].data(), fill_[static_cast<size_t>(layer)], heads_,
            head_dim_};
}

KvView NaiveKvCache::v_view(int64_t layer) const {
    if (layer < 0 || layer >= layers_)
        throw IndexError("kv cache layer " + std::to_string(layer) + " out of range");
    return {v_[static_cast<size_t>(layer)].data(), fill_[static_cast<size_t>(layer)], heads_,
            head_dim_};
}

int64_t NaiveKvCache::len() const {
    return *std::min_element(fill_.begin(), fill_.end());
}

} // namespace nq
