#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nq/kernels.hpp"
#include "nq/kvcache.hpp"
#include "nq/model.hpp"

namespace nq {

/// In-place rotary embedding over heads*head_dim values. Pair i of each head
/// is rotated by angle position / theta^(2i/head_dim).
void rope_apply(std::span<float> qk, int64_t n_heads, int64_t head_dim, int64_t position,
                float theta);

/// Scaled dot-product attention for one query over a cached prefix, all heads.
/// Softmax is max-subtracted; during decode the query attends to every cached
/// position, causality being enforced by the views' length.
std::vector<float> attention(std::span<const float> q, const KvView& k, const KvView& v);

// Forward passes. Every linear layer goes through the qlinear dispatcher (or
// its fp32-weight twin). Prefill requires an empty cache and fills one slot
// per prompt token per layer; decode appends exactly one slot per layer.

/// Logits of the last prompt position, shape 1 x vocab.
Mat forward_prefill(const ModelWeights& m, std::span<const int32_t> tokens, KvCache& cache,
                    const KernelConfig& cfg = {});
Mat forward_prefill(const ModelWeights& m, std::span<const int32_t> tokens, NaiveKvCache& cache,
                    const KernelConfig& cfg = {});

/// Logits at every prompt position (teacher-forcing evaluation), n x vocab.
Mat forward_prefill_all(const ModelWeights& m, std::span<const int32_t> tokens, KvCache& cache,
                        const KernelConfig& cfg = {});

Mat forward_decode(const ModelWeights& m, int32_t token, KvCache& cache,
                   const KernelConfig& cfg = {});
Mat forward_decode(const ModelWeights& m, int32_t token, NaiveKvCache& cache,
                   const KernelConfig& cfg = {});

enum class SamplingKind : uint8_t { Greedy = 0, TopK = 1, TopP = 2 };

struct GenParams {
    int64_t max_new_tokens = 32;
    SamplingKind sampling = SamplingKind::Greedy;
    int64_t top_k = 1;
    double top_p = 1.0;
    uint64_t seed = 0;
    float temperature = 1.0f;
};

struct GenResult {
    std::vector<int32_t> tokens;
    double first_token_ms = 0.0;    // prefill + first sample
    std::vector<double> decode_ms;  // subsequent tokens
};

/// Greedy mode is a pure function of (weights, prompt); sampling modes are
/// pure functions of (weights, prompt, seed).
GenResult generate(const ModelWeights& m, std::span<const int32_t> prompt, const GenParams& params,
                   const KernelConfig& cfg = {});

/// Index of the maximum; ties break toward the lower index.
int64_t argmax_lowest(std::span<const float> v);

// Byte-level identity tokenizer: byte value == token id. Ids >= 256 are
// reserved for specials and render to nothing.
std::vector<int32_t> bytes_to_tokens(std::string_view text);
std::string tokens_to_bytes(std::span<const int32_t> tokens);

} // namespace nq
