#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nq/model.hpp"

namespace nq {

// NQF container: magic "NQF1", little-endian fixed-width header (the
// ModelConfig fields plus a tensor count), a tensor table, 64-byte-aligned
// payload blobs, and a trailing CRC32 over every preceding byte. An INT4 blob
// is packed codes, then scales, then zero-points (asymmetric only).

struct NamedTensor {
    std::string name;
    std::variant<Mat, QuantizedTensor> tensor;
};

struct NqfTensorInfo {
    std::string name;
    bool quantized = false;
    std::string recipe; // empty for fp32
    int64_t rows = 0, cols = 0;
    uint64_t offset = 0, size = 0;
};

struct NqfContents {
    ModelConfig config;
    std::vector<NamedTensor> tensors;
    std::vector<NqfTensorInfo> table;
};

// Format-level interface (a file may hold any tensor set, including none).
std::string write_nqf_bytes(const ModelConfig& config, std::span<const NamedTensor> tensors);
NqfContents read_nqf_bytes(std::span<const uint8_t> bytes);
void write_nqf(const std::string& path, const ModelConfig& config,
               std::span<const NamedTensor> tensors);
NqfContents read_nqf(const std::string& path);

// Model-level interface; load validates magic, bounds and size formulas
// before touching payload, then the checksum, then assembles by tensor name.
void save_model(const ModelWeights& m, const std::string& path);
ModelWeights load_model(const std::string& path);

/// Serialized byte counts per tensor; quantized bytes follow
/// rows*cols/2 + rows*groups*4 (+ rows*groups for asymmetric zero-points).
uint64_t fp32_tensor_bytes(int64_t rows, int64_t cols);
uint64_t quantized_tensor_bytes(int64_t rows, int64_t cols, const QuantRecipe& recipe);

struct TensorMemory {
    std::string name;
    uint64_t fp32_bytes = 0;
    uint64_t stored_bytes = 0;
};

struct MemoryReport {
    std::vector<TensorMemory> tensors;
    uint64_t fp32_total = 0;
    uint64_t stored_total = 0;
    double ratio = 1.0; // fp32_total / stored_total
};

MemoryReport memory_report(const ModelWeights& m);

// Plain-text "key = value" config format; '#' starts a comment.
ModelConfig parse_config_text(const std::string& text);
std::string config_to_text(const ModelConfig& config);

} // namespace nq
