// nq: INT4 weight-only CPU inference engine CLI.
// Exit codes: 0 success, 2 usage or input error, 3 tuning finished best-effort
// without hitting the accuracy target, 1 internal error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "nq/autotune.hpp"
#include "nq/bench.hpp"
#include "nq/error.hpp"
#include "nq/modelio.hpp"
#include "nq/runtime.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNoRecipe = 3;
constexpr int kExitInternal = 1;

std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw nq::InvalidInput("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<int32_t> load_tokens(const std::string& path, int64_t limit) {
    std::vector<int32_t> tokens = nq::bytes_to_tokens(read_file_bytes(path));
    if (limit > 0 && static_cast<int64_t>(tokens.size()) > limit)
        tokens.resize(static_cast<size_t>(limit));
    return tokens;
}

void print_memory_report(const nq::MemoryReport& rep) {
    std::cout << "memory report (bytes):\n";
    for (const auto& t : rep.tensors)
        std::cout << "  " << t.name << "  fp32=" << t.fp32_bytes << "  stored=" << t.stored_bytes
                  << "\n";
    std::cout << "  total fp32=" << rep.fp32_total << "  stored=" << rep.stored_total
              << "  ratio=" << rep.ratio << "\n";
}

struct CommonArgs {
    std::string model_path;
    int threads = 1;

    nq::KernelConfig kernel() const {
        nq::KernelConfig cfg;
        cfg.threads = threads;
        return cfg;
    }
};

int cmd_quantize(const CommonArgs& common, const std::string& recipe_str,
                 const std::string& out_path) {
    const nq::QuantRecipe recipe = nq::QuantRecipe::parse(recipe_str);
    std::cout << "config: command=quantize model=" << common.model_path << " recipe="
              << recipe.to_string() << " out=" << out_path << "\n";
    nq::ModelWeights model = nq::load_model(common.model_path);
    nq::ModelWeights quantized = nq::quantize_model(model, recipe);
    nq::save_model(quantized, out_path);
    print_memory_report(nq::memory_report(quantized));
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

int cmd_tune(const CommonArgs& common, const std::string& tokens_path, double target,
             const std::string& recipes_csv, const std::string& metric_name,
             const std::string& trail_path, const std::string& out_path) {
    nq::TuneConfig cfg;
    cfg.target_relative_loss = target;
    cfg.kernel = common.kernel();
    if (metric_name == "accuracy") cfg.metric = nq::EvalMetric::NextTokenAccuracy;
    else if (metric_name == "perplexity") cfg.metric = nq::EvalMetric::Perplexity;
    else throw nq::InvalidInput("metric must be accuracy or perplexity");

    if (recipes_csv.empty()) {
        cfg.recipe_order = nq::default_recipe_order();
    } else {
        std::stringstream ss(recipes_csv);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) cfg.recipe_order.push_back(nq::QuantRecipe::parse(item));
    }

    nq::ModelWeights model = nq::load_model(common.model_path);
    cfg.eval_tokens = load_tokens(tokens_path, model.config.max_seq_len);

    std::cout << "config: command=tune model=" << common.model_path << " eval-tokens="
              << tokens_path << " n-tokens=" << cfg.eval_tokens.size() << " target=" << target
              << " metric=" << metric_name << " recipes=";
    for (size_t i = 0; i < cfg.recipe_order.size(); ++i)
        std::cout << (i ? "," : "") << cfg.recipe_order[i].to_string();
    std::cout << " threads=" << common.threads << "\n";

    nq::TuneResult result = nq::tune(model, cfg);

    if (!trail_path.empty()) {
        std::ofstream tf(trail_path, std::ios::trunc);
        if (!tf) throw nq::InvalidInput("cannot open '" + trail_path + "' for writing");
        tf << nq::trail_to_jsonl(result.trail, true);
    }
    std::cout << "trail:\n" << nq::trail_to_jsonl(result.trail, false);

    if (!out_path.empty()) nq::save_model(result.model, out_path);

    const auto& chosen = result.chosen;
    if (result.no_recipe_met) {
        std::cout << "no recipe met target " << target << "; best-effort recipe="
                  << chosen.recipe.to_string() << " relative_loss=" << chosen.relative_loss << "\n";
        return kExitNoRecipe;
    }
    std::cout << "chosen recipe=" << chosen.recipe.to_string() << " baseline="
              << chosen.baseline_metric << " candidate=" << chosen.candidate_metric
              << " relative_loss=" << chosen.relative_loss << "\n";
    return kExitOk;
}

int cmd_run(const CommonArgs& common, const std::string& prompt, const nq::GenParams& params,
            const std::string& sampling_name) {
    std::cout << "config: command=run model=" << common.model_path << " prompt-bytes="
              << prompt.size() << " max-new=" << params.max_new_tokens << " sampling="
              << sampling_name << " top-k=" << params.top_k << " top-p=" << params.top_p
              << " temperature=" << params.temperature << " seed=" << params.seed
              << " threads=" << common.threads << "\n";
    nq::ModelWeights model = nq::load_model(common.model_path);
    const std::vector<int32_t> prompt_tokens = nq::bytes_to_tokens(prompt);
    if (prompt_tokens.empty()) throw nq::InvalidInput("prompt must not be empty");

    nq::GenResult gen = nq::generate(model, prompt_tokens, params, common.kernel());
    std::cout << prompt << nq::tokens_to_bytes(gen.tokens) << "\n";

    if (!gen.tokens.empty()) {
        double mean = 0.0, median = 0.0;
        if (!gen.decode_ms.empty()) {
            std::vector<double> d = gen.decode_ms;
            std::sort(d.begin(), d.end());
            for (double v : d) mean += v;
            mean /= static_cast<double>(d.size());
            median = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
        }
        std::cout << "latency: first_token_ms=" << gen.first_token_ms << " decode_mean_ms=" << mean
                  << " decode_median_ms=" << median << " decode_tokens=" << gen.decode_ms.size()
                  << "\n";
    }
    return kExitOk;
}

int cmd_eval(const CommonArgs& common, const std::string& tokens_path,
             const std::string& metric_name) {
    std::cout << "config: command=eval model=" << common.model_path << " tokens=" << tokens_path
              << " metric=" << metric_name << " threads=" << common.threads << "\n";
    nq::ModelWeights model = nq::load_model(common.model_path);
    const std::vector<int32_t> tokens = load_tokens(tokens_path, model.config.max_seq_len);
    if (metric_name == "accuracy") {
        std::cout << "accuracy=" << nq::eval_next_token_accuracy(model, tokens, common.kernel())
                  << " positions=" << tokens.size() - 1 << "\n";
    } else if (metric_name == "perplexity") {
        std::cout << "perplexity=" << nq::eval_perplexity(model, tokens, common.kernel())
                  << " positions=" << tokens.size() - 1 << "\n";
    } else {
        throw nq::InvalidInput("metric must be accuracy or perplexity");
    }
    return kExitOk;
}

int cmd_bench(const CommonArgs& common, const nq::BenchConfig& bcfg, const std::string& csv_path) {
    std::cout << "config: command=bench model=" << common.model_path << " in-tokens="
              << bcfg.in_tokens << " out-tokens=" << bcfg.out_tokens << " warmup=" << bcfg.warmup
              << " iters=" << bcfg.iters << " seed=" << bcfg.seed << " threads=" << common.threads
              << "\n";
    nq::ModelWeights model = nq::load_model(common.model_path);
    nq::BenchResult result = nq::run_bench(model, bcfg);
    if (!csv_path.empty()) {
        std::ofstream cf(csv_path, std::ios::trunc);
        if (!cf) throw nq::InvalidInput("cannot open '" + csv_path + "' for writing");
        nq::write_bench_csv(result, cf);
    }
    std::cout << "latency: first_token_mean_ms=" << result.first_token_mean_ms
              << " decode_mean_ms=" << result.decode_mean_ms << " decode_median_ms="
              << result.decode_median_ms << " samples=" << result.samples.size() << "\n";
    return kExitOk;
}

int cmd_inspect(const CommonArgs& common) {
    std::cout << "config: command=inspect model=" << common.model_path << "\n";
    nq::NqfContents contents = nq::read_nqf(common.model_path);
    std::cout << nq::config_to_text(contents.config);
    std::cout << "tensors: " << contents.table.size() << "\n";
    uint64_t stored = 0, fp32 = 0;
    for (const auto& info : contents.table) {
        std::cout << "  " << info.name << "  " << (info.quantized ? "int4" : "fp32") << "  "
                  << info.rows << "x" << info.cols;
        if (info.quantized) std::cout << "  recipe=" << info.recipe;
        std::cout << "  bytes=" << info.size << "\n";
        stored += info.size;
        fp32 += nq::fp32_tensor_bytes(info.rows, info.cols);
    }
    if (stored > 0)
        std::cout << "total stored=" << stored << " fp32-equivalent=" << fp32
                  << " ratio=" << static_cast<double>(fp32) / static_cast<double>(stored) << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nq: INT4 weight-only transformer inference on CPU"};
    app.require_subcommand(1);

    CommonArgs common;

    auto add_common = [&common](CLI::App* sub, bool with_threads = true) {
        sub->add_option("--model", common.model_path, "NQF model file")->required();
        if (with_threads) sub->add_option("--threads", common.threads, "kernel thread budget");
    };

    // quantize
    std::string recipe_str = "rtn-asym-g32-int8", out_path;
    CLI::App* quantize = app.add_subcommand("quantize", "quantize an fp32 model to INT4");
    add_common(quantize, false);
    quantize->add_option("--recipe", recipe_str, "quantization recipe string");
    quantize->add_option("--out", out_path, "output NQF path")->required();

    // tune
    std::string tokens_path, recipes_csv, metric_name = "accuracy", trail_path, tuned_out;
    double target = 0.01;
    CLI::App* tune = app.add_subcommand("tune", "search recipes until the accuracy target holds");
    add_common(tune);
    tune->add_option("--eval-tokens", tokens_path, "token file for evaluation")->required();
    tune->add_option("--target", target, "max relative loss vs the fp32 baseline");
    tune->add_option("--recipes", recipes_csv, "comma-separated recipe strings");
    tune->add_option("--metric", metric_name, "accuracy|perplexity");
    tune->add_option("--trail-out", trail_path, "write the tuning trail (JSONL)");
    tune->add_option("--out", tuned_out, "save the chosen quantized model");

    // run
    std::string prompt, sampling_name = "greedy";
    nq::GenParams gen_params;
    CLI::App* run = app.add_subcommand("run", "generate text from a prompt");
    add_common(run);
    run->add_option("--prompt", prompt, "prompt text (byte-level tokens)")->required();
    run->add_option("--max-new", gen_params.max_new_tokens, "tokens to generate");
    run->add_option("--sampling", sampling_name, "greedy|topk|topp");
    run->add_option("--top-k", gen_params.top_k, "k for topk sampling");
    run->add_option("--top-p", gen_params.top_p, "p for topp sampling");
    run->add_option("--temperature", gen_params.temperature, "sampling temperature");
    run->add_option("--seed", gen_params.seed, "RNG seed; all randomness flows from it");

    // eval
    std::string eval_tokens_path, eval_metric = "accuracy";
    CLI::App* eval = app.add_subcommand("eval", "measure a model on a token file");
    add_common(eval);
    eval->add_option("--tokens", eval_tokens_path, "token file")->required();
    eval->add_option("--metric", eval_metric, "accuracy|perplexity");

    // bench
    nq::BenchConfig bench_cfg;
    std::string csv_path;
    CLI::App* bench = app.add_subcommand("bench", "per-token latency measurement");
    add_common(bench);
    bench->add_option("--in-tokens", bench_cfg.in_tokens, "prompt length");
    bench->add_option("--out-tokens", bench_cfg.out_tokens, "generated tokens per iteration");
    bench->add_option("--warmup", bench_cfg.warmup, "unmeasured iterations");
    bench->add_option("--iters", bench_cfg.iters, "measured iterations");
    bench->add_option("--seed", bench_cfg.seed, "prompt seed");
    bench->add_option("--csv", csv_path, "write per-token samples as CSV");

    // inspect
    CLI::App* inspect = app.add_subcommand("inspect", "print header and tensor table");
    add_common(inspect, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << "run with --help for usage\n";
        return kExitUsage;
    }

    try {
        if (quantize->parsed()) return cmd_quantize(common, recipe_str, out_path);
        if (tune->parsed())
            return cmd_tune(common, tokens_path, target, recipes_csv, metric_name, trail_path,
                            tuned_out);
        if (run->parsed()) {
            if (sampling_name == "greedy") gen_params.sampling = nq::SamplingKind::Greedy;
            else if (sampling_name == "topk") gen_params.sampling = nq::SamplingKind::TopK;
            else if (sampling_name == "topp") gen_params.sampling = nq::SamplingKind::TopP;
            else throw nq::InvalidInput("sampling must be greedy, topk or topp");
            return cmd_run(common, prompt, gen_params, sampling_name);
        }
        if (eval->parsed()) return cmd_eval(common, eval_tokens_path, eval_metric);
        if (bench->parsed()) return cmd_bench(common, bench_cfg, csv_path);
        if (inspect->parsed()) return cmd_inspect(common);
        std::cerr << "error: no subcommand\n";
        return kExitUsage;
    } catch (const nq::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
