#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nq/error.hpp"
#include "nq/tensor.hpp"

namespace nq {

/// Weight quantization scheme. Symmetric codes are stored offset-by-8 and
/// carry no zero-point; asymmetric stores one zero-point byte per group.
enum class QuantScheme : uint8_t {
    Symmetric = 0,
    Asymmetric = 1,
};

/// Group layout along the input-channel dimension of each output row.
/// PerChannel is a single group spanning the whole row.
struct QuantGranularity {
    enum class Kind : uint8_t { PerChannel = 0, Grouped = 1 };

    Kind kind = Kind::Grouped;
    int64_t group_size = 32; // meaningful for Grouped only

    static QuantGranularity per_channel() { return {Kind::PerChannel, 0}; }
    static QuantGranularity grouped(int64_t gs); // gs must be one of {32,64,128,256,512,1024}

    int64_t effective_group_size(int64_t cols) const {
        return kind == Kind::PerChannel ? cols : group_size;
    }

    bool operator==(const QuantGranularity& o) const {
        return kind == o.kind && (kind == Kind::PerChannel || group_size == o.group_size);
    }
};

/// Which kernel evaluates a quantized linear layer.
enum class ComputePath : uint8_t {
    Fp32Compute = 0, // dequantize groups on the fly, fp32 multiply-accumulate
    Int8Compute = 1, // dynamic int8 activations, integer dots, per-group rescale
};

/// One complete quantization configuration; the unit the tuner searches over.
/// Canonical string form: "rtn-asym-g32-int8", "rtn-sym-pc-fp32", ...
struct QuantRecipe {
    QuantScheme scheme = QuantScheme::Asymmetric;
    QuantGranularity granularity = QuantGranularity{QuantGranularity::Kind::Grouped, 32};
    ComputePath compute_path = ComputePath::Int8Compute;

    std::string to_string() const;
    static QuantRecipe parse(std::string_view text); // throws FormatError

    bool operator==(const QuantRecipe& o) const {
        return scheme == o.scheme && granularity == o.granularity && compute_path == o.compute_path;
    }
};

/// Quantized form of one group: nearest-code under scale (and zero-point).
/// Codes are unsigned nibbles; symmetric values are stored with +8 offset.
struct GroupQuant {
    float scale = 1.0f;
    uint8_t zero_point = 0; // asymmetric only
    std::vector<uint8_t> codes;
};

/// Packed INT4 weight matrix: two codes per byte, one scale per group per
/// row, one zero-point byte per group per row when asymmetric.
struct QuantizedTensor {
    int64_t rows = 0;
    int64_t cols = 0;
    QuantRecipe recipe;
    std::vector<uint8_t> packed;       // rows * cols / 2
    std::vector<float> scales;         // rows * groups_per_row
    std::vector<uint8_t> zero_points;  // rows * groups_per_row, asymmetric only

    int64_t effective_group_size() const { return recipe.granularity.effective_group_size(cols); }
    int64_t groups_per_row() const { return cols / effective_group_size(); }
};

/// Dynamically quantized activations: per-group symmetric int8 with the
/// group layout matching the weight groups along the input channel.
struct DynQuantActivation {
    int64_t rows = 0;
    int64_t cols = 0;
    int64_t group_size = 0;
    std::vector<int8_t> codes;  // rows * cols
    std::vector<float> scales;  // rows * (cols / group_size)
};

// Round-to-nearest quantization of one group. Rounding is half-away-from-zero.
// Asymmetric: scale = (max-min)/15, zp = clamp(round(-min/scale), 0, 15),
//             code = clamp(round(v/scale) + zp, 0, 15).
// Symmetric:  scale = absmax/7, code = clamp(round(v/scale), -8, 7) + 8.
// A constant group (scale would be 0) uses scale = 1, zero_point = 0.
GroupQuant quantize_group(std::span<const float> values, QuantScheme scheme);

// Inverse mapping: asym v = scale * (code - zp); sym v = scale * (stored - 8).
std::vector<float> dequantize_group(const GroupQuant& gq, QuantScheme scheme);

// Quantizes each output row group-by-group along the input dimension.
// `name` is used in error messages only.
QuantizedTensor quantize_tensor(const Mat& weights, const QuantRecipe& recipe,
                                std::string_view name = "tensor");

Mat dequantize_tensor(const QuantizedTensor& qt);

// byte k = codes[2k] | codes[2k+1] << 4; the low nibble holds the even index.
std::vector<uint8_t> pack_nibbles(std::span<const uint8_t> codes);
std::vector<uint8_t> unpack_nibbles(std::span<const uint8_t> bytes);

// Per-group symmetric int8: scale = absmax/127 (1 for an all-zero group),
// code = clamp(round(x/scale), -127, 127).
DynQuantActivation quantize_activations(const Mat& x, int64_t group_size);

} // namespace nq
