#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "nq/kernels.hpp"
#include "nq/quant.hpp"
#include "nq/tensor.hpp"

namespace nq {

enum class NormKind : uint8_t { LayerNorm = 0, RMSNorm = 1 };
enum class ActivationKind : uint8_t { Gelu = 0, SiluGated = 1 };

/// Variance floor shared by both norm kinds (and the trainer).
inline constexpr float kNormEps = 1e-5f;

/// Decoder-only transformer hyperparameters. Pre-norm blocks with rotary
/// position embedding; norm kind and MLP activation select the family.
struct ModelConfig {
    int64_t vocab_size = 0;
    int64_t n_layers = 0;
    int64_t n_heads = 0;
    int64_t head_dim = 0;
    int64_t hidden_dim = 0; // must equal n_heads * head_dim
    int64_t ffn_dim = 0;
    int64_t max_seq_len = 0;
    NormKind norm_kind = NormKind::RMSNorm;
    ActivationKind activation_kind = ActivationKind::Gelu;
    float rope_theta = 10000.0f;

    void validate() const; // throws InvalidConfig
};

/// A linear layer's weight: plain fp32 or packed INT4. Norms, embeddings and
/// biases never take this type; only linear projections are quantizable.
struct LinearWeight {
    std::variant<Mat, QuantizedTensor> w;

    LinearWeight() : w(Mat{}) {}
    explicit LinearWeight(Mat m) : w(std::move(m)) {}
    explicit LinearWeight(QuantizedTensor q) : w(std::move(q)) {}

    bool is_quantized() const { return std::holds_alternative<QuantizedTensor>(w); }
    const Mat& fp32() const { return std::get<Mat>(w); }
    const QuantizedTensor& quantized() const { return std::get<QuantizedTensor>(w); }

    int64_t rows() const {
        return is_quantized() ? quantized().rows : fp32().rows;
    }
    int64_t cols() const {
        return is_quantized() ? quantized().cols : fp32().cols;
    }
};

/// y = x * w^T + bias through whichever path the weight carries.
Mat apply_linear(const LinearWeight& w, const Mat& x, const KernelConfig& cfg);

struct NormWeights {
    std::vector<float> weight;
    std::vector<float> bias; // LayerNorm only, empty for RMSNorm
};

struct LayerWeights {
    NormWeights attn_norm;
    LinearWeight wq, wk, wv, wo; // hidden x hidden
    NormWeights ffn_norm;
    LinearWeight w1; // ffn x hidden
    LinearWeight w2; // hidden x ffn
    LinearWeight w3; // ffn x hidden, SiluGated only
};

struct ModelWeights {
    ModelConfig config;
    Mat tok_embed; // vocab x hidden, always fp32
    std::vector<LayerWeights> layers;
    NormWeights final_norm;
    LinearWeight lm_head; // vocab x hidden

    void validate() const; // throws ShapeError / InvalidConfig
};

/// Quantizes every linear projection (lm_head included) with one recipe;
/// norms and embeddings stay fp32. Weight-only: activations are untouched
/// here and handled per-call by the int8 kernel path.
ModelWeights quantize_model(const ModelWeights& fp32_model, const QuantRecipe& recipe);

/// Lightweight handle for one named tensor during enumeration. Fp32 tensors
/// (embeddings, norms, unquantized linears) expose a raw view; quantized
/// linears expose the QuantizedTensor.
struct TensorRef {
    std::string name;
    bool quantized = false;
    const float* data = nullptr; // fp32 only
    int64_t rows = 0, cols = 0;  // fp32 only
    const QuantizedTensor* q = nullptr;
};

/// Canonical tensor enumeration (fixed order) used by the file format and
/// the memory report.
void for_each_tensor(const ModelWeights& m, const std::function<void(const TensorRef&)>& fn);

} // namespace nq
