#include "nq/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "nq/error.hpp"
#include "nq/parallel.hpp"

namespace nq {

namespace {

void apply_norm(const Mat& x, const NormWeights& nw, NormKind kind, Mat& out) {
    const int64_t n = x.cols;
    for (int64_t r = 0; r < x.rows; ++r) {
        const float* src = x.row_ptr(r);
        float* dst = out.row_ptr(r);
        if (kind == NormKind::RMSNorm) {
            float ms = 0.0f;
            for (int64_t i = 0; i < n; ++i) ms += src[i] * src[i];
            const float inv = 1.0f / std::sqrt(ms / n + kNormEps);
            for (int64_t i = 0; i < n; ++i) dst[i] = src[i] * inv * nw.weight[i];
        } else {
            float mean = 0.0f;
            for (int64_t i = 0; i < n; ++i) mean += src[i];
            mean /= n;
            float var = 0.0f;
            for (int64_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
            var /= n;
            const float inv = 1.0f / std::sqrt(var + kNormEps);
            for (int64_t i = 0; i < n; ++i)
                dst[i] = (src[i] - mean) * inv * nw.weight[i] + nw.bias[i];
        }
    }
}

inline float gelu(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f));
}

inline float silu(float x) {
    return x / (1.0f + std::exp(-x));
}

void attention_into(std::span<const float> q, const KvView& k, const KvView& v, float* out,
                    float* scores) {
    const int64_t hd = k.head_dim;
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(hd));
    for (int64_t h = 0; h < k.heads; ++h) {
        const float* qh = q.data() + h * hd;
        for (int64_t t = 0; t < k.len; ++t) {
            const float* kh = k.head(t, h);
            float dot = 0.0f;
            for (int64_t d = 0; d < hd; ++d) dot += qh[d] * kh[d];
            scores[t] = dot * inv_sqrt_d;
        }
        float mx = scores[0];
        for (int64_t t = 1; t < k.len; ++t) mx = std::max(mx, scores[t]);
        float sum = 0.0f;
        for (int64_t t = 0; t < k.len; ++t) {
            scores[t] = std::exp(scores[t] - mx);
            sum += scores[t];
        }
        const float inv_sum = 1.0f / sum;
        float* oh = out + h * hd;
        for (int64_t d = 0; d < hd; ++d) oh[d] = 0.0f;
        for (int64_t t = 0; t < k.len; ++t) {
            const float p = scores[t] * inv_sum;
            const float* vh = v.head(t, h);
            for (int64_t d = 0; d < hd; ++d) oh[d] += p * vh[d];
        }
    }
}

// Shared prefill/decode body. Positions are assigned from the cache cursor;
// attention for row p sees cached positions [0, base+p].
template <class Cache>
Mat forward_tokens(const ModelWeights& m, std::span<const int32_t> tokens, Cache& cache,
                   const KernelConfig& cfg, bool all_logits) {
    const ModelConfig& c = m.config;
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (n == 0) throw InvalidInput("forward: empty token sequence");
    const int64_t base = cache.len();
    if (base + n > cache.capacity())
        throw CapacityExceeded("forward: cache capacity " + std::to_string(cache.capacity()) +
                               " exceeded at position " + std::to_string(base + n));
    if (base + n > c.max_seq_len)
        throw CapacityExceeded("forward: model max_seq_len " + std::to_string(c.max_seq_len) +
                               " exceeded at position " + std::to_string(base + n));
    for (int32_t t : tokens)
        if (t < 0 || t >= c.vocab_size)
            throw InvalidInput("forward: token id " + std::to_string(t) + " outside vocab");

    Mat x(n, c.hidden_dim);
    for (int64_t p = 0; p < n; ++p) {
        const float* e = m.tok_embed.row_ptr(tokens[static_cast<size_t>(p)]);
        std::copy(e, e + c.hidden_dim, x.row_ptr(p));
    }

    Arena scratch;
    float* scores = scratch.alloc_f32(static_cast<size_t>(base + n));
    Mat normed(n, c.hidden_dim);
    for (int64_t l = 0; l < c.n_layers; ++l) {
        const LayerWeights& L = m.layers[static_cast<size_t>(l)];

        apply_norm(x, L.attn_norm, c.norm_kind, normed);
        Mat q = apply_linear(L.wq, normed, cfg);
        Mat k = apply_linear(L.wk, normed, cfg);
        Mat v = apply_linear(L.wv, normed, cfg);
        for (int64_t p = 0; p < n; ++p) {
            rope_apply(q.row(p), c.n_heads, c.head_dim, base + p, c.rope_theta);
            rope_apply(k.row(p), c.n_heads, c.head_dim, base + p, c.rope_theta);
        }
        for (int64_t p = 0; p < n; ++p) cache.append(l, k.row(p), v.row(p));

        Mat ctx(n, c.hidden_dim);
        KvView kv = cache.k_view(l);
        KvView vv = cache.v_view(l);
        for (int64_t p = 0; p < n; ++p) {
            KvView kp = kv, vp = vv;
            kp.len = vp.len = base + p + 1;
            attention_into(q.row(p), kp, vp, ctx.row_ptr(p), scores);
        }
        Mat attn_out = apply_linear(L.wo, ctx, cfg);
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn_out.data[i];

        apply_norm(x, L.ffn_norm, c.norm_kind, normed);
        Mat ffn_out;
        if (c.activation_kind == ActivationKind::Gelu) {
            Mat hidden = apply_linear(L.w1, normed, cfg);
            for (float& f : hidden.data) f = gelu(f);
            ffn_out = apply_linear(L.w2, hidden, cfg);
        } else {
            Mat up = apply_linear(L.w1, normed, cfg);
            Mat gate = apply_linear(L.w3, normed, cfg);
            for (size_t i = 0; i < up.data.size(); ++i) up.data[i] = silu(up.data[i]) * gate.data[i];
            ffn_out = apply_linear(L.w2, up, cfg);
        }
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += ffn_out.data[i];
    }

    if (!all_logits) {
        Mat last(1, c.hidden_dim);
        std::copy(x.row_ptr(n - 1), x.row_ptr(n - 1) + c.hidden_dim, last.row_ptr(0));
        Mat final_normed(1, c.hidden_dim);
        apply_norm(last, m.final_norm, c.norm_kind, final_normed);
        return apply_linear(m.lm_head, final_normed, cfg);
    }
    Mat final_normed(n, c.hidden_dim);
    apply_norm(x, m.final_norm, c.norm_kind, final_normed);
    return apply_linear(m.lm_head, final_normed, cfg);
}

template <class Cache>
Mat prefill_impl(const ModelWeights& m, std::span<const int32_t> tokens, Cache& cache,
                 const KernelConfig& cfg, bool all_logits) {
    if (cache.len() != 0) throw InvalidInput("forward_prefill: cache must be empty");
    return forward_tokens(m, tokens, cache, cfg, all_logits);
}

template <class Cache>
Mat decode_impl(const ModelWeights& m, int32_t token, Cache& cache, const KernelConfig& cfg) {
    if (cache.len() < 1) throw InvalidInput("forward_decode: prefill the cache first");
    const int32_t toks[1] = {token};
    return forward_tokens(m, std::span<const int32_t>(toks, 1), cache, cfg, false);
}

} // namespace

void rope_apply(std::span<float> qk, int64_t n_heads, int64_t head_dim, int64_t position,
                float theta) {
    if (head_dim % 2 != 0) throw InvalidConfig("rope: head_dim must be even");
    if (static_cast<int64_t>(qk.size()) != n_heads * head_dim)
        throw ShapeError("rope: expected heads*head_dim values");
    for (int64_t h = 0; h < n_heads; ++h) {
        float* base = qk.data() + h * head_dim;
        for (int64_t i = 0; i < head_dim / 2; ++i) {
            const double freq =
                std::pow(static_cast<double>(theta), -2.0 * static_cast<double>(i) / head_dim);
            const double angle = static_cast<double>(position) * freq;
            const float cs = static_cast<float>(std::cos(angle));
            const float sn = static_cast<float>(std::sin(angle));
            const float x0 = base[2 * i];
            const float x1 = base[2 * i + 1];
            base[2 * i] = x0 * cs - x1 * sn;
            base[2 * i + 1] = x0 * sn + x1 * cs;
        }
    }
}

std::vector<float> attention(std::span<const float> q, const KvView& k, const KvView& v) {
    if (k.len != v.len || k.heads != v.heads || k.head_dim != v.head_dim)
        throw ShapeError("attention: K and V views disagree");
    if (static_cast<int64_t>(q.size()) != k.heads * k.head_dim)
        throw ShapeError("attention: query size != heads*head_dim");
    if (k.len < 1) throw ShapeError("attention: empty cache view");
    std::vector<float> out(static_cast<size_t>(k.heads * k.head_dim));
    std::vector<float> scores(static_cast<size_t>(k.len));
    attention_into(q, k, v, out.data(), scores.data());
    return out;
}

Mat forward_prefill(const ModelWeights& m, std::span<const int32_t> tokens, KvCache& cache,
                    const KernelConfig& cfg) {
    return prefill_impl(m, tokens, cache, cfg, false);
}

Mat forward_prefill(const ModelWeights& m, std::span<const int32_t> tokens, NaiveKvCache& cache,
                    const KernelConfig& cfg) {
    return prefill_impl(m, tokens, cache, cfg, false);
}

Mat forward_prefill_all(const ModelWeights& m, std::span<const int32_t> tokens, KvCache& cache,
                        const KernelConfig& cfg) {
    return prefill_impl(m, tokens, cache, cfg, true);
}

Mat forward_decode(const ModelWeights& m, int32_t token, KvCache& cache, const KernelConfig& cfg) {
    return decode_impl(m, token, cache, cfg);
}

Mat forward_decode(const ModelWeights& m, int32_t token, NaiveKvCache& cache,
                   const KernelConfig& cfg) {
    return decode_impl(m, token, cache, cfg);
}

int64_t argmax_lowest(std::span<const float> v) {
    int64_t best = 0;
    for (int64_t i = 1; i < static_cast<int64_t>(v.size()); ++i)
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
    return best;
}

namespace {

double next_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int32_t sample_token(std::span<const float> logits, const GenParams& p, std::mt19937_64& rng) {
    if (p.sampling == SamplingKind::Greedy)
        return static_cast<int32_t>(argmax_lowest(logits));

    const int64_t vocab = static_cast<int64_t>(logits.size());
    std::vector<int32_t> order(static_cast<size_t>(vocab));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        const float la = logits[static_cast<size_t>(a)];
        const float lb = logits[static_cast<size_t>(b)];
        if (la != lb) return la > lb;
        return a < b;
    });

    int64_t keep;
    if (p.sampling == SamplingKind::TopK) {
        keep = std::min<int64_t>(p.top_k, vocab);
    } else {
        // Nucleus: smallest prefix of the sorted distribution reaching top_p.
        std::vector<double> probs(static_cast<size_t>(vocab));
        double mx = logits[static_cast<size_t>(order[0])] / p.temperature;
        double sum = 0.0;
        for (int64_t i = 0; i < vocab; ++i) {
            probs[static_cast<size_t>(i)] =
                std::exp(static_cast<double>(logits[static_cast<size_t>(order[i])]) / p.temperature - mx);
            sum += probs[static_cast<size_t>(i)];
        }
        double cum = 0.0;
        keep = vocab;
        for (int64_t i = 0; i < vocab; ++i) {
            cum += probs[static_cast<size_t>(i)] / sum;
            if (cum >= p.top_p) {
                keep = i + 1;
                break;
            }
        }
    }

    // Softmax over the kept candidates and inverse-CDF draw.
    std::vector<double> w(static_cast<size_t>(keep));
    const double mx = static_cast<double>(logits[static_cast<size_t>(order[0])]) / p.temperature;
    double sum = 0.0;
    for (int64_t i = 0; i < keep; ++i) {
        w[static_cast<size_t>(i)] =
            std::exp(static_cast<double>(logits[static_cast<size_t>(order[i])]) / p.temperature - mx);
        sum += w[static_cast<size_t>(i)];
    }
    const double u = next_uniform(rng) * sum;
    double cum = 0.0;
    for (int64_t i = 0; i < keep; ++i) {
        cum += w[static_cast<size_t>(i)];
        if (u < cum) return order[static_cast<size_t>(i)];
    }
    return order[static_cast<size_t>(keep - 1)];
}

} // namespace

GenResult generate(const ModelWeights& m, std::span<const int32_t> prompt, const GenParams& params,
                   const KernelConfig& cfg) {
    if (prompt.empty()) throw InvalidInput("generate: empty prompt");
    if (params.top_k < 1) throw InvalidConfig("generate: top_k must be >= 1");
    if (!(params.top_p > 0.0 && params.top_p <= 1.0))
        throw InvalidConfig("generate: top_p must be in (0, 1]");
    if (!(params.temperature > 0.0f)) throw InvalidConfig("generate: temperature must be positive");

    GenResult res;
    if (params.max_new_tokens == 0) return res;

    const ModelConfig& c = m.config;
    const int64_t capacity =
        std::min<int64_t>(c.max_seq_len, static_cast<int64_t>(prompt.size()) + params.max_new_tokens);
    KvCache cache(c.n_layers, c.n_heads, c.head_dim, capacity);
    std::mt19937_64 rng(params.seed);

    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };

    auto t0 = clock::now();
    Mat logits = forward_prefill(m, prompt, cache, cfg);
    int32_t tok = sample_token(logits.row(0), params, rng);
    res.first_token_ms = ms_since(t0);
    res.tokens.push_back(tok);

    for (int64_t i = 1; i < params.max_new_tokens; ++i) {
        auto td = clock::now();
        logits = forward_decode(m, tok, cache, cfg);
        tok = sample_token(logits.row(0), params, rng);
        res.decode_ms.push_back(ms_since(td));
        res.tokens.push_back(tok);
    }
    return res;
}

std::vector<int32_t> bytes_to_tokens(std::string_view text) {
    std::vector<int32_t> out;
    out.reserve(text.size());
    for (unsigned char ch : text) out.push_back(static_cast<int32_t>(ch));
    return out;
}

std::string tokens_to_bytes(std::span<const int32_t> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int32_t t : tokens)
        if (t >= 0 && t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    return out;
}

} // namespace nq
