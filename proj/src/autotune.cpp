#include "nq/autotune.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "nq/error.hpp"

namespace nq {

namespace {

Mat teacher_forced_logits(const ModelWeights& m, std::span<const int32_t> tokens,
                          const KernelConfig& cfg) {
    if (tokens.size() < 2)
        throw InvalidInput("evaluation needs at least 2 tokens, got " +
                           std::to_string(tokens.size()));
    KvCache cache(m.config.n_layers, m.config.n_heads, m.config.head_dim,
                  static_cast<int64_t>(tokens.size()));
    // Logits at the last position are never scored (no next token to compare),
    // so only the first n-1 positions go through the model.
    return forward_prefill_all(m, tokens.subspan(0, tokens.size() - 1), cache, cfg);
}

} // namespace

double eval_next_token_accuracy(const ModelWeights& m, std::span<const int32_t> tokens,
                                const KernelConfig& cfg) {
    Mat logits = teacher_forced_logits(m, tokens, cfg);
    int64_t hits = 0;
    for (int64_t t = 0; t < logits.rows; ++t)
        if (argmax_lowest(logits.row(t)) == tokens[static_cast<size_t>(t + 1)]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(logits.rows);
}

double eval_perplexity(const ModelWeights& m, std::span<const int32_t> tokens,
                       const KernelConfig& cfg) {
    Mat logits = teacher_forced_logits(m, tokens, cfg);
    double nll = 0.0;
    for (int64_t t = 0; t < logits.rows; ++t) {
        const auto row = logits.row(t);
        double mx = row[0];
        for (float l : row) mx = std::max(mx, static_cast<double>(l));
        double sum = 0.0;
        for (float l : row) sum += std::exp(static_cast<double>(l) - mx);
        const double target = row[static_cast<size_t>(tokens[static_cast<size_t>(t + 1)])];
        nll += std::log(sum) + mx - target;
    }
    return std::exp(nll / static_cast<double>(logits.rows));
}

std::vector<QuantRecipe> default_recipe_order() {
    auto r = [](QuantScheme s, QuantGranularity g, ComputePath p) {
        return QuantRecipe{s, g, p};
    };
    const auto asym = QuantScheme::Asymmetric;
    const auto sym = QuantScheme::Symmetric;
    const auto int8 = ComputePath::Int8Compute;
    const auto fp32 = ComputePath::Fp32Compute;
    return {
        r(asym, QuantGranularity::grouped(32), int8),
        r(asym, QuantGranularity::grouped(64), int8),
        r(asym, QuantGranularity::grouped(128), int8),
        r(sym, QuantGranularity::grouped(32), int8),
        r(asym, QuantGranularity::grouped(32), fp32),
        r(asym, QuantGranularity::per_channel(), int8),
        r(sym, QuantGranularity::per_channel(), int8),
    };
}

TuneResult tune(const ModelWeights& fp32_model, const TuneConfig& cfg) {
    if (cfg.recipe_order.empty()) throw InvalidConfig("tune: empty recipe list");
    if (!(cfg.target_relative_loss >= 0.0 && cfg.target_relative_loss <= 1.0))
        throw InvalidConfig("tune: target relative loss must be in [0, 1]");

    auto measure = [&](const ModelWeights& m) {
        return cfg.metric == EvalMetric::NextTokenAccuracy
                   ? eval_next_token_accuracy(m, cfg.eval_tokens, cfg.kernel)
                   : eval_perplexity(m, cfg.eval_tokens, cfg.kernel);
    };
    const double baseline = measure(fp32_model);

    using clock = std::chrono::steady_clock;
    TuneResult result;
    int64_t best = -1;
    for (const QuantRecipe& recipe : cfg.recipe_order) {
        EvalReport rep;
        rep.recipe = recipe;
        rep.baseline_metric = baseline;
        const auto t0 = clock::now();
        ModelWeights candidate;
        try {
            candidate = quantize_model(fp32_model, recipe);
            rep.candidate_metric = measure(candidate);
            rep.relative_loss = cfg.metric == EvalMetric::Perplexity
                                    ? (rep.candidate_metric - baseline) / baseline
                                    : (baseline - rep.candidate_metric) / baseline;
            rep.passed = rep.relative_loss <= cfg.target_relative_loss;
        } catch (const Error& e) {
            rep.error = e.what();
            rep.candidate_metric = std::numeric_limits<double>::quiet_NaN();
            rep.relative_loss = std::numeric_limits<double>::infinity();
            rep.passed = false;
        }
        rep.wall_ms =
            std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        result.trail.push_back(rep);

        if (rep.passed) {
            result.chosen = rep;
            result.model = std::move(candidate);
            result.no_recipe_met = false;
            return result;
        }
        if (rep.error.empty() &&
            (best < 0 || rep.relative_loss < result.trail[static_cast<size_t>(best)].relative_loss))
            best = static_cast<int64_t>(result.trail.size()) - 1;
    }

    if (best < 0) throw InvalidConfig("tune: no recipe in the list applies to this model");
    result.chosen = result.trail[static_cast<size_t>(best)];
    result.model = quantize_model(fp32_model, result.chosen.recipe);
    result.no_recipe_met = true;
    return result;
}

namespace {

std::string fmt_double(double v) {
    if (std::isnan(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string json_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        if (ch == '"' || ch == '\\') {
            out.push_back('\\');
            out.push_back(ch);
        } else if (static_cast<unsigned char>(ch) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\u%04x", ch);
            out += buf;
        } else {
            out.push_back(ch);
        }
    }
    return out;
}

} // namespace

std::string trail_to_jsonl(std::span<const EvalReport> trail, bool include_timing) {
    std::string out;
    for (const EvalReport& r : trail) {
        out += "{\"recipe\":\"" + r.recipe.to_string() + "\"";
        out += ",\"baseline\":" + fmt_double(r.baseline_metric);
        out += ",\"candidate\":" + fmt_double(r.candidate_metric);
        out += ",\"relative_loss\":" +
               (std::isinf(r.relative_loss) ? std::string("\"inf\"") : fmt_double(r.relative_loss));
        out += std::string(",\"passed\":") + (r.passed ? "true" : "false");
        if (!r.error.empty()) out += ",\"error\":\"" + json_escape(r.error) + "\"";
        if (include_timing) out += ",\"wall_ms\":" + fmt_double(r.wall_ms);
        out += "}\n";
    }
    return out;
}

} // namespace nq
