#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nq/model.hpp"
#include "nq/runtime.hpp"

namespace nq {

enum class EvalMetric : uint8_t { NextTokenAccuracy = 0, Perplexity = 1 };

/// Fraction of teacher-forced positions where argmax(logits at t) equals
/// token t+1. Ties break toward the lower token id.
double eval_next_token_accuracy(const ModelWeights& m, std::span<const int32_t> tokens,
                                const KernelConfig& cfg = {});

/// exp(mean negative log-likelihood of the next token), natural log.
double eval_perplexity(const ModelWeights& m, std::span<const int32_t> tokens,
                       const KernelConfig& cfg = {});

struct TuneConfig {
    double target_relative_loss = 0.01;
    std::vector<QuantRecipe> recipe_order; // tried in order, first pass wins
    std::vector<int32_t> eval_tokens;
    EvalMetric metric = EvalMetric::NextTokenAccuracy;
    KernelConfig kernel;
};

/// One tuning attempt. relative_loss is (baseline-candidate)/baseline for
/// accuracy-type metrics and (candidate-baseline)/baseline for perplexity;
/// passed <=> relative_loss <= target. A recipe the model cannot take (e.g.
/// indivisible group size) is recorded with `error` set and passed=false.
struct EvalReport {
    QuantRecipe recipe;
    double baseline_metric = 0.0;
    double candidate_metric = 0.0;
    double relative_loss = 0.0;
    bool passed = false;
    std::string error;
    double wall_ms = 0.0;
};

struct TuneResult {
    ModelWeights model;      // quantized with the chosen recipe
    EvalReport chosen;
    std::vector<EvalReport> trail; // every attempt, in evaluation order
    bool no_recipe_met = false;    // best-effort result, nothing hit the target
};

/// Recipes in the order the flow tries them by default: small-group
/// asymmetric first, then symmetric, the fp32 compute path, and finally the
/// channel-wise fallbacks.
std::vector<QuantRecipe> default_recipe_order();

/// The quantize -> evaluate -> compare loop: measures the fp32 baseline once,
/// walks recipe_order, stops at the first recipe within the target relative
/// loss. If none passes, returns the best-scoring attempt with
/// no_recipe_met=true.
TuneResult tune(const ModelWeights& fp32_model, const TuneConfig& cfg);

/// Line-delimited trail log, one JSON object per attempt. Timing is the only
/// non-deterministic field; include_timing=false drops it.
std::string trail_to_jsonl(std::span<const EvalReport> trail, bool include_timing = true);

} // namespace nq
