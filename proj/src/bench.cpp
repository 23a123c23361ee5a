#include "nq/bench.hpp"

#include <algorithm>
#include <random>

#include "nq/error.hpp"
#include "nq/runtime.hpp"

namespace nq {

BenchResult run_bench(const ModelWeights& m, const BenchConfig& cfg) {
    if (cfg.in_tokens < 1 || cfg.out_tokens < 1)
        throw InvalidConfig("bench: token counts must be positive");
    if (cfg.iters < 1 || cfg.warmup < 0)
        throw InvalidConfig("bench: need iters >= 1 and warmup >= 0");

    std::mt19937_64 rng(cfg.seed);
    std::vector<int32_t> prompt(static_cast<size_t>(cfg.in_tokens));
    const int64_t draw_max = std::min<int64_t>(m.config.vocab_size, 256);
    for (auto& t : prompt) t = static_cast<int32_t>(rng() % static_cast<uint64_t>(draw_max));

    GenParams gp;
    gp.max_new_tokens = cfg.out_tokens;
    gp.sampling = SamplingKind::Greedy;
    gp.seed = cfg.seed;

    BenchResult res;
    std::vector<double> first_ms, decode_ms;
    for (int it = -cfg.warmup; it < cfg.iters; ++it) {
        GenResult g = generate(m, prompt, gp, cfg.kernel);
        if (it < 0) continue; // warmup
        res.samples.push_back({it, 0, g.first_token_ms, true});
        first_ms.push_back(g.first_token_ms);
        for (size_t i = 0; i < g.decode_ms.size(); ++i) {
            res.samples.push_back({it, static_cast<int64_t>(i + 1), g.decode_ms[i], false});
            decode_ms.push_back(g.decode_ms[i]);
        }
    }

    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    res.first_token_mean_ms = mean(first_ms);
    res.decode_mean_ms = mean(decode_ms);
    if (!decode_ms.empty()) {
        std::vector<double> sorted = decode_ms;
        std::sort(sorted.begin(), sorted.end());
        const size_t n = sorted.size();
        res.decode_median_ms = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    }
    return res;
}

void write_bench_csv(const BenchResult& result, std::ostream& out) {
    out << "iter,token_index,ms,phase\n";
    for (const TokenSample& s : result.samples) {
        out << s.iter << ',' << s.token_index << ',' << s.ms << ','
            << (s.prefill ? "prefill" : "decode") << '\n';
    }
}

} // namespace nq
