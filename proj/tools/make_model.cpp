// nq-make-model: produces NQF model files the main CLI can consume.
//   --preset chain   trains the tiny byte-chain model (default)
//   --preset random  random weights for a config given with --config
// The chain corpus can be dumped alongside for eval/tune input.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "nq/error.hpp"
#include "nq/modelio.hpp"
#include "nq/toytrain.hpp"

int main(int argc, char** argv) {
    CLI::App app{"nq-make-model: build toy NQF models"};

    std::string out_path, preset = "chain", config_path, corpus_out;
    uint64_t seed = 1;
    int steps = 350;
    int threads = 2;
    int64_t corpus_len = 8192;

    app.add_option("--out", out_path, "output NQF path")->required();
    app.add_option("--preset", preset, "chain|random");
    app.add_option("--config", config_path, "model config (key = value) for --preset random");
    app.add_option("--seed", seed, "seed for corpus, init and training order");
    app.add_option("--steps", steps, "training steps for --preset chain");
    app.add_option("--threads", threads, "trainer thread budget");
    app.add_option("--corpus-out", corpus_out, "also write the chain corpus bytes");
    app.add_option("--corpus-len", corpus_len, "corpus bytes to write");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        nq::ModelWeights model;
        if (preset == "chain") {
            nq::ToyTrainConfig cfg;
            cfg.seed = seed;
            cfg.steps = steps;
            cfg.threads = threads;
            std::cout << "training chain model (seed=" << seed << ", steps=" << steps << ")...\n";
            nq::ToyTrainResult result = nq::train_toy_model(cfg);
            std::cout << "final training loss: " << result.losses.back() << "\n";
            model = std::move(result.model);
        } else if (preset == "random") {
            if (config_path.empty())
                throw nq::InvalidInput("--preset random needs --config");
            std::ifstream f(config_path);
            if (!f) throw nq::InvalidInput("cannot open '" + config_path + "'");
            std::ostringstream ss;
            ss << f.rdbuf();
            model = nq::random_model(nq::parse_config_text(ss.str()), seed);
        } else {
            throw nq::InvalidInput("preset must be chain or random");
        }

        nq::save_model(model, out_path);
        std::cout << "wrote " << out_path << "\n";

        if (!corpus_out.empty()) {
            const auto corpus = nq::make_chain_corpus(seed, corpus_len);
            std::ofstream cf(corpus_out, std::ios::binary | std::ios::trunc);
            if (!cf) throw nq::InvalidInput("cannot open '" + corpus_out + "' for writing");
            for (int32_t t : corpus) cf.put(static_cast<char>(static_cast<unsigned char>(t)));
            std::cout << "wrote " << corpus_out << " (" << corpus.size() << " bytes)\n";
        }
        return 0;
    } catch (const nq::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
