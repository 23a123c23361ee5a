#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "nq/model.hpp"

namespace nq {

/// Latency measurement setup; defaults mirror the 32-in/32-out proxy
/// configuration benchmark reports use.
struct BenchConfig {
    int64_t in_tokens = 32;
    int64_t out_tokens = 32;
    int warmup = 1;
    int iters = 3;
    uint64_t seed = 0;
    KernelConfig kernel;
};

struct TokenSample {
    int iter = 0;          // measured iteration index, warmup excluded
    int64_t token_index = 0;
    double ms = 0.0;
    bool prefill = false;  // first generated token comes out of the prefill
};

struct BenchResult {
    std::vector<TokenSample> samples; // iters * out_tokens entries
    double first_token_mean_ms = 0.0;
    double decode_mean_ms = 0.0;
    double decode_median_ms = 0.0;
};

/// Greedy generation timed per token; warmup iterations run but are dropped
/// from samples and stats. The prompt is a seeded token sequence.
BenchResult run_bench(const ModelWeights& m, const BenchConfig& cfg);

/// CSV with header "iter,token_index,ms,phase".
void write_bench_csv(const BenchResult& result, std::ostream& out);

} // namespace nq
