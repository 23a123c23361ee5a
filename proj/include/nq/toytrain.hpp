#pragma once

#include <cstdint>
#include <vector>

#include "nq/model.hpp"

namespace nq {

/// Deterministic byte-level corpus: a single 256-cycle permutation walked
/// from a fixed start, so the next token is always a function of the current
/// one and a converged model predicts it near-perfectly.
std::vector<int32_t> make_chain_corpus(uint64_t seed, int64_t length);

/// Hyperparameters for the desk-scale trainer. The architecture is fixed to
/// RMSNorm + GELU.
struct ToyTrainConfig {
    uint64_t seed = 1;
    int64_t vocab = 256;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t head_dim = 16; // hidden = 64
    int64_t ffn_dim = 128;
    // Train at full context: window == max_seq_len keeps every evaluation
    // position and prefix length inside the training distribution.
    int64_t max_seq_len = 256;
    int64_t window = 256;
    int batch = 2;
    int steps = 200;
    float lr = 4e-3f;
    int64_t corpus_len = 4096; // training slice; callers hold out their own tail
    int threads = 2;
};

struct ToyTrainResult {
    ModelWeights model;
    std::vector<float> losses; // mean cross-entropy per step
};

/// Adam-trained tiny decoder on the chain corpus. Forward semantics match
/// the runtime exactly (same norm, activation, rope and masking), so the
/// returned weights evaluate through the engine as trained.
ToyTrainResult train_toy_model(const ToyTrainConfig& cfg);

/// Seeded random-init fp32 model for any config; norm gains start at one.
/// Useful as a latency benchmark subject, untrained weights predict nothing.
ModelWeights random_model(const ModelConfig& config, uint64_t seed);

} // namespace nq
