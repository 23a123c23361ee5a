#pragma once

#include <cstdint>
#include <span>

#include "nq/quant.hpp"
#include "nq/tensor.hpp"

namespace nq {

/// Blocking and thread budget for the dispatching qlinear entry point.
/// tile_rows tiles the batch dimension, tile_cols the output features,
/// reduction_block the input channels (rounded up internally to a multiple
/// of the weight's group size so groups never straddle a block).
struct KernelConfig {
    int64_t tile_rows = 8;
    int64_t tile_cols = 64;
    int64_t reduction_block = 1024;
    int threads = 1;
};

/// Naive triple-loop product, row-major with innermost k ascending.
/// Bit-exact across runs; this is the correctness oracle for everything else.
Mat gemm_ref(const Mat& a, const Mat& b);

// Quantized linear layers compute y = x * dequant(w)^T + bias with weights in
// output-row-major layout, so every output element reduces over the
// contiguous groups of one weight row. Accumulation order is fixed: ascending
// k within a group, groups in ascending index, bias added last.

/// Dequantize-on-the-fly fp32 path; one group is materialized at a time.
Mat qlinear_fp32(const Mat& x, const QuantizedTensor& w, std::span<const float> bias = {});

/// Integer path: activations are dynamically quantized per group, each group
/// contributes scale_a * scale_w * (dot - zero_point * sum(codes_a)).
Mat qlinear_int8(const Mat& x, const QuantizedTensor& w, std::span<const float> bias = {});

/// Dispatches on w.recipe.compute_path; blocked, tiled and threaded per cfg.
/// Result is bit-identical to the direct same-path call above.
Mat qlinear(const Mat& x, const QuantizedTensor& w, std::span<const float> bias,
            const KernelConfig& cfg);

/// Plain fp32 weights, same blocked loop structure and determinism contract.
Mat linear_fp32(const Mat& x, const Mat& w, std::span<const float> bias, const KernelConfig& cfg);

} // namespace nq
