#include "nq/model.hpp"

#include <string>

#include "nq/error.hpp"

namespace nq {

void ModelConfig::validate() const {
    auto positive = [](int64_t v, const char* what) {
        if (v <= 0) throw InvalidConfig(std::string(what) + " must be positive");
    };
    positive(vocab_size, "vocab_size");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(head_dim, "head_dim");
    positive(hidden_dim, "hidden_dim");
    positive(ffn_dim, "ffn_dim");
    positive(max_seq_len, "max_seq_len");
    if (hidden_dim != n_heads * head_dim)
        throw InvalidConfig("hidden_dim must equal n_heads * head_dim");
    if (!(rope_theta > 0.0f)) throw InvalidConfig("rope_theta must be positive");
}

Mat apply_linear(const LinearWeight& w, const Mat& x, const KernelConfig& cfg) {
    if (w.is_quantized()) return qlinear(x, w.quantized(), {}, cfg);
    return linear_fp32(x, w.fp32(), {}, cfg);
}

namespace {

void check_norm(const NormWeights& n, int64_t dim, NormKind kind, const std::string& name) {
    if (static_cast<int64_t>(n.weight.size()) != dim)
        throw ShapeError(name + ".weight has length " + std::to_string(n.weight.size()) +
                         ", expected " + std::to_string(dim));
    const size_t want_bias = kind == NormKind::LayerNorm ? static_cast<size_t>(dim) : 0;
    if (n.bias.size() != want_bias)
        throw ShapeError(name + ".bias has length " + std::to_string(n.bias.size()) +
                         ", expected " + std::to_string(want_bias));
}

void check_linear(const LinearWeight& w, int64_t rows, int64_t cols, const std::string& name) {
    if (w.rows() != rows || w.cols() != cols)
        throw ShapeError(name + " is " + std::to_string(w.rows()) + "x" +
                         std::to_string(w.cols()) + ", expected " + std::to_string(rows) + "x" +
                         std::to_string(cols));
}

} // namespace

void ModelWeights::validate() const {
    config.validate();
    const int64_t h = config.hidden_dim;
    if (tok_embed.rows != config.vocab_size || tok_embed.cols != h)
        throw ShapeError("tok_embed shape mismatch");
    if (static_cast<int64_t>(layers.size()) != config.n_layers)
        throw ShapeError("layer count mismatch");
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        check_norm(L.attn_norm, h, config.norm_kind, p + "attn_norm");
        check_linear(L.wq, h, h, p + "wq");
        check_linear(L.wk, h, h, p + "wk");
        check_linear(L.wv, h, h, p + "wv");
        check_linear(L.wo, h, h, p + "wo");
        check_norm(L.ffn_norm, h, config.norm_kind, p + "ffn_norm");
        check_linear(L.w1, config.ffn_dim, h, p + "w1");
        check_linear(L.w2, h, config.ffn_dim, p + "w2");
        if (config.activation_kind == ActivationKind::SiluGated) {
            check_linear(L.w3, config.ffn_dim, h, p + "w3");
        }
    }
    check_norm(final_norm, h, config.norm_kind, "final_norm");
    check_linear(lm_head, config.vocab_size, h, "lm_head");
}

ModelWeights quantize_model(const ModelWeights& fp32_model, const QuantRecipe& recipe) {
    ModelWeights out;
    out.config = fp32_model.config;
    out.tok_embed = fp32_model.tok_embed;
    out.final_norm = fp32_model.final_norm;

    auto quantize = [&](const LinearWeight& w, const std::string& name) {
        if (w.is_quantized())
            throw InvalidInput("quantize_model: " + name + " is already quantized");
        return LinearWeight(quantize_tensor(w.fp32(), recipe, name));
    };

    out.layers.reserve(fp32_model.layers.size());
    for (size_t l = 0; l < fp32_model.layers.size(); ++l) {
        const auto& src = fp32_model.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        LayerWeights dst;
        dst.attn_norm = src.attn_norm;
        dst.ffn_norm = src.ffn_norm;
        dst.wq = quantize(src.wq, p + "wq");
        dst.wk = quantize(src.wk, p + "wk");
        dst.wv = quantize(src.wv, p + "wv");
        dst.wo = quantize(src.wo, p + "wo");
        dst.w1 = quantize(src.w1, p + "w1");
        dst.w2 = quantize(src.w2, p + "w2");
        if (fp32_model.config.activation_kind == ActivationKind::SiluGated)
            dst.w3 = quantize(src.w3, p + "w3");
        out.layers.push_back(std::move(dst));
    }
    out.lm_head = quantize(fp32_model.lm_head, "lm_head");
    return out;
}

namespace {

TensorRef ref_fp32(std::string name, const float* data, int64_t rows, int64_t cols) {
    TensorRef r;
    r.name = std::move(name);
    r.data = data;
    r.rows = rows;
    r.cols = cols;
    return r;
}

TensorRef ref_linear(std::string name, const LinearWeight& w) {
    if (w.is_quantized()) {
        TensorRef r;
        r.name = std::move(name);
        r.quantized = true;
        r.q = &w.quantized();
        r.rows = r.q->rows;
        r.cols = r.q->cols;
        return r;
    }
    return ref_fp32(std::move(name), w.fp32().data.data(), w.fp32().rows, w.fp32().cols);
}

} // namespace

void for_each_tensor(const ModelWeights& m, const std::function<void(const TensorRef&)>& fn) {
    const int64_t h = m.config.hidden_dim;
    fn(ref_fp32("tok_embed", m.tok_embed.data.data(), m.tok_embed.rows, m.tok_embed.cols));
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const auto& L = m.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        fn(ref_fp32(p + "attn_norm.weight", L.attn_norm.weight.data(), 1, h));
        if (!L.attn_norm.bias.empty())
            fn(ref_fp32(p + "attn_norm.bias", L.attn_norm.bias.data(), 1, h));
        fn(ref_linear(p + "wq", L.wq));
        fn(ref_linear(p + "wk", L.wk));
        fn(ref_linear(p + "wv", L.wv));
        fn(ref_linear(p + "wo", L.wo));
        fn(ref_fp32(p + "ffn_norm.weight", L.ffn_norm.weight.data(), 1, h));
        if (!L.ffn_norm.bias.empty())
            fn(ref_fp32(p + "ffn_norm.bias", L.ffn_norm.bias.data(), 1, h));
        fn(ref_linear(p + "w1", L.w1));
        fn(ref_linear(p + "w2", L.w2));
        if (m.config.activation_kind == ActivationKind::SiluGated)
            fn(ref_linear(p + "w3", L.w3));
    }
    fn(ref_fp32("final_norm.weight", m.final_norm.weight.data(), 1, h));
    if (!m.final_norm.bias.empty())
        fn(ref_fp32("final_norm.bias", m.final_norm.bias.data(), 1, h));
    fn(ref_linear("lm_head", m.lm_head));
}

} // namespace nq
