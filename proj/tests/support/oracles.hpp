// Test-only oracles, independent of the library implementation paths they
// check: fp64 re-implementations and exhaustive searches.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "nq/kvcache.hpp"
#include "nq/model.hpp"
#include "nq/quant.hpp"
#include "nq/tensor.hpp"

namespace nqtest {

// Per-element best achievable |dequant - v| for the given scale/zero-point,
// found by trying all 16 codes.
inline double nearest_code_error(float v, float scale, int offset) {
    double best = std::abs(static_cast<double>(scale) * (0 - offset) - v);
    for (int code = 1; code < 16; ++code) {
        const double err = std::abs(static_cast<double>(scale) * (code - offset) - v);
        best = std::min(best, err);
    }
    return best;
}

inline int group_offset(const nq::GroupQuant& gq, nq::QuantScheme scheme) {
    return scheme == nq::QuantScheme::Asymmetric ? gq.zero_point : 8;
}

// Plain fp64 triple loop.
inline std::vector<double> gemm_f64(const nq::Mat& a, const nq::Mat& b) {
    std::vector<double> c(static_cast<size_t>(a.rows * b.cols), 0.0);
    for (int64_t i = 0; i < a.rows; ++i)
        for (int64_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < a.cols; ++k)
                acc += static_cast<double>(a.at(i, k)) * static_cast<double>(b.at(k, j));
            c[static_cast<size_t>(i * b.cols + j)] = acc;
        }
    return c;
}

// fp64 softmax attention for one query, all heads.
inline std::vector<double> attention_f64(std::span<const float> q, const nq::KvView& k,
                                         const nq::KvView& v) {
    std::vector<double> out(static_cast<size_t>(k.heads * k.head_dim), 0.0);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(k.head_dim));
    for (int64_t h = 0; h < k.heads; ++h) {
        std::vector<double> scores(static_cast<size_t>(k.len));
        for (int64_t t = 0; t < k.len; ++t) {
            double dot = 0.0;
            for (int64_t d = 0; d < k.head_dim; ++d)
                dot += static_cast<double>(q[static_cast<size_t>(h * k.head_dim + d)]) *
                       static_cast<double>(k.head(t, h)[d]);
            scores[static_cast<size_t>(t)] = dot * inv_sqrt_d;
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double sum = 0.0;
        for (double& s : scores) {
            s = std::exp(s - mx);
            sum += s;
        }
        for (int64_t t = 0; t < k.len; ++t)
            for (int64_t d = 0; d < k.head_dim; ++d)
                out[static_cast<size_t>(h * k.head_dim + d)] +=
                    scores[static_cast<size_t>(t)] / sum * static_cast<double>(v.head(t, h)[d]);
    }
    return out;
}

// Straight-line fp64 forward of the decoder for all-fp32 weights: no cache,
// attention recomputed over the full prefix per position. Returns the
// last-position logits.
std::vector<double> ref_forward_f64(const nq::ModelWeights& m, std::span<const int32_t> tokens);

// Random helpers (seeded, test-local).
inline std::vector<float> random_floats(std::mt19937_64& rng, size_t n, float lo, float hi) {
    std::uniform_real_distribution<float> dist(lo, hi);
    std::vector<float> v(n);
    for (float& f : v) f = dist(rng);
    return v;
}

inline nq::Mat random_mat(std::mt19937_64& rng, int64_t rows, int64_t cols, float lo, float hi) {
    nq::Mat m(rows, cols);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& f : m.data) f = dist(rng);
    return m;
}

} // namespace nqtest
