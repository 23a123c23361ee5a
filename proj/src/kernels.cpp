#include "nq/kernels.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "nq/error.hpp"
#include "nq/parallel.hpp"

namespace nq {

namespace {

void check_linear_shapes(int64_t x_cols, int64_t w_rows, int64_t w_cols,
                         std::span<const float> bias, const char* op) {
    if (x_cols != w_cols) {
        throw ShapeError(std::string(op) + ": x has " + std::to_string(x_cols) +
                         " columns but weight expects " + std::to_string(w_cols));
    }
    if (!bias.empty() && static_cast<int64_t>(bias.size()) != w_rows) {
        throw ShapeError(std::string(op) + ": bias length " + std::to_string(bias.size()) +
                         " != output features " + std::to_string(w_rows));
    }
}

// Dequantizes codes [k0, k0+count) of weight row j into dst. k0 and count are
// group-aligned. Also usable for a single group.
void dequant_row_span(const QuantizedTensor& w, int64_t j, int64_t k0, int64_t count, float* dst) {
    const int64_t gs = w.effective_group_size();
    const int64_t groups = w.groups_per_row();
    const uint8_t* row_bytes = w.packed.data() + j * w.cols / 2;
    const bool asym = w.recipe.scheme == QuantScheme::Asymmetric;
    for (int64_t g = k0 / gs; g < (k0 + count) / gs; ++g) {
        const float scale = w.scales[static_cast<size_t>(j * groups + g)];
        const int offset = asym ? w.zero_points[static_cast<size_t>(j * groups + g)] : 8;
        for (int64_t k = 0; k < gs; ++k) {
            const int64_t e = g * gs + k;
            const uint8_t byte = row_bytes[e >> 1];
            const int code = (e & 1) ? (byte >> 4) : (byte & 0x0F);
            dst[e - k0] = scale * (code - offset);
        }
    }
}

// Unpacks codes [k0, k0+count) of weight row j as signed int8: raw nibbles for
// asymmetric, nibble-8 for symmetric.
void unpack_row_span_i8(const QuantizedTensor& w, int64_t j, int64_t k0, int64_t count, int8_t* dst) {
    const uint8_t* row_bytes = w.packed.data() + j * w.cols / 2;
    const int sub = w.recipe.scheme == QuantScheme::Asymmetric ? 0 : 8;
    for (int64_t e = k0; e < k0 + count; ++e) {
        const uint8_t byte = row_bytes[e >> 1];
        const int code = (e & 1) ? (byte >> 4) : (byte & 0x0F);
        dst[e - k0] = static_cast<int8_t>(code - sub);
    }
}

// Per-(row, group) sums of activation codes, the asymmetric correction term.
std::vector<int32_t> activation_code_sums(const DynQuantActivation& act) {
    const int64_t groups = act.cols / act.group_size;
    std::vector<int32_t> sums(static_cast<size_t>(act.rows * groups), 0);
    for (int64_t i = 0; i < act.rows; ++i) {
        const int8_t* codes = act.codes.data() + i * act.cols;
        for (int64_t g = 0; g < groups; ++g) {
            int32_t s = 0;
            for (int64_t k = 0; k < act.group_size; ++k) s += codes[g * act.group_size + k];
            sums[static_cast<size_t>(i * groups + g)] = s;
        }
    }
    return sums;
}

} // namespace

Mat gemm_ref(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) {
        throw ShapeError("gemm_ref: inner dimensions " + std::to_string(a.cols) + " and " +
                         std::to_string(b.rows) + " disagree");
    }
    Mat c(a.rows, b.cols);
    for (int64_t i = 0; i < a.rows; ++i) {
        for (int64_t j = 0; j < b.cols; ++j) {
            float acc = 0.0f;
            for (int64_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    }
    return c;
}

Mat qlinear_fp32(const Mat& x, const QuantizedTensor& w, std::span<const float> bias) {
    check_linear_shapes(x.cols, w.rows, w.cols, bias, "qlinear_fp32");
    const int64_t gs = w.effective_group_size();
    const int64_t groups = w.groups_per_row();
    Mat out(x.rows, w.rows);
    std::vector<float> wbuf(static_cast<size_t>(gs));
    for (int64_t j = 0; j < w.rows; ++j) {
        for (int64_t g = 0; g < groups; ++g) {
            dequant_row_span(w, j, g * gs, gs, wbuf.data());
            for (int64_t i = 0; i < x.rows; ++i) {
                const float* xr = x.row_ptr(i) + g * gs;
                float part = 0.0f;
                for (int64_t k = 0; k < gs; ++k) part += xr[k] * wbuf[k];
                out.at(i, j) += part;
            }
        }
        if (!bias.empty())
            for (int64_t i = 0; i < x.rows; ++i) out.at(i, j) += bias[j];
    }
    return out;
}

Mat qlinear_int8(const Mat& x, const QuantizedTensor& w, std::span<const float> bias) {
    check_linear_shapes(x.cols, w.rows, w.cols, bias, "qlinear_int8");
    const int64_t gs = w.effective_group_size();
    const int64_t groups = w.groups_per_row();
    const bool asym = w.recipe.scheme == QuantScheme::Asymmetric;

    const DynQuantActivation act = quantize_activations(x, gs);
    const std::vector<int32_t> asums = asym ? activation_code_sums(act) : std::vector<int32_t>{};

    Mat out(x.rows, w.rows);
    std::vector<int8_t> wcode(static_cast<size_t>(gs));
    for (int64_t j = 0; j < w.rows; ++j) {
        for (int64_t g = 0; g < groups; ++g) {
            unpack_row_span_i8(w, j, g * gs, gs, wcode.data());
            const float wscale = w.scales[static_cast<size_t>(j * groups + g)];
            const int32_t zp = asym ? w.zero_points[static_cast<size_t>(j * groups + g)] : 0;
            for (int64_t i = 0; i < x.rows; ++i) {
                const int8_t* ac = act.codes.data() + i * x.cols + g * gs;
                int32_t idot = 0;
                for (int64_t k = 0; k < gs; ++k)
                    idot += static_cast<int32_t>(ac[k]) * static_cast<int32_t>(wcode[k]);
                if (asym) idot -= zp * asums[static_cast<size_t>(i * groups + g)];
                const float ascale = act.scales[static_cast<size_t>(i * groups + g)];
                out.at(i, j) += (ascale * wscale) * static_cast<float>(idot);
            }
        }
        if (!bias.empty())
            for (int64_t i = 0; i < x.rows; ++i) out.at(i, j) += bias[j];
    }
    return out;
}

namespace {

// Blocked fp32 path. Per output element the float op sequence is identical to
// qlinear_fp32: group parts in ascending group order, then bias.
void qlinear_fp32_blocked(const Mat& x, const QuantizedTensor& w, std::span<const float> bias,
                          const KernelConfig& cfg, int64_t kblock, Mat& out) {
    const int64_t gs = w.effective_group_size();
    const int64_t n_jtiles = (w.rows + cfg.tile_cols - 1) / cfg.tile_cols;
    parallel_for(n_jtiles, cfg.threads, [&](int64_t t0, int64_t t1) {
        std::vector<float> wbuf(static_cast<size_t>(kblock));
        for (int64_t jt = t0; jt < t1; ++jt) {
            const int64_t j0 = jt * cfg.tile_cols;
            const int64_t j1 = std::min(w.rows, j0 + cfg.tile_cols);
            for (int64_t j = j0; j < j1; ++j) {
                for (int64_t kb = 0; kb < w.cols; kb += kblock) {
                    const int64_t kcount = std::min(kblock, w.cols - kb);
                    dequant_row_span(w, j, kb, kcount, wbuf.data());
                    for (int64_t i0 = 0; i0 < x.rows; i0 += cfg.tile_rows) {
                        const int64_t i1 = std::min(x.rows, i0 + cfg.tile_rows);
                        for (int64_t i = i0; i < i1; ++i) {
                            const float* xr = x.row_ptr(i) + kb;
                            float acc = out.at(i, j);
                            for (int64_t g = 0; g < kcount; g += gs) {
                                float part = 0.0f;
                                for (int64_t k = 0; k < gs; ++k) part += xr[g + k] * wbuf[g + k];
                                acc += part;
                            }
                            out.at(i, j) = acc;
                        }
                    }
                }
                if (!bias.empty())
                    for (int64_t i = 0; i < x.rows; ++i) out.at(i, j) += bias[j];
            }
        }
    });
}

void qlinear_int8_blocked(const Mat& x, const QuantizedTensor& w, std::span<const float> bias,
                          const KernelConfig& cfg, int64_t kblock, Mat& out) {
    const int64_t gs = w.effective_group_size();
    const int64_t groups = w.groups_per_row();
    const bool asym = w.recipe.scheme == QuantScheme::Asymmetric;
    const DynQuantActivation act = quantize_activations(x, gs);
    const std::vector<int32_t> asums = asym ? activation_code_sums(act) : std::vector<int32_t>{};

    const int64_t n_jtiles = (w.rows + cfg.tile_cols - 1) / cfg.tile_cols;
    parallel_for(n_jtiles, cfg.threads, [&](int64_t t0, int64_t t1) {
        std::vector<int8_t> wcode(static_cast<size_t>(kblock));
        for (int64_t jt = t0; jt < t1; ++jt) {
            const int64_t j0 = jt * cfg.tile_cols;
            const int64_t j1 = std::min(w.rows, j0 + cfg.tile_cols);
            for (int64_t j = j0; j < j1; ++j) {
                for (int64_t kb = 0; kb < w.cols; kb += kblock) {
                    const int64_t kcount = std::min(kblock, w.cols - kb);
                    unpack_row_span_i8(w, j, kb, kcount, wcode.data());
                    const int64_t gbase = kb / gs;
                    for (int64_t i0 = 0; i0 < x.rows; i0 += cfg.tile_rows) {
                        const int64_t i1 = std::min(x.rows, i0 + cfg.tile_rows);
                        for (int64_t i = i0; i < i1; ++i) {
                            const int8_t* ac = act.codes.data() + i * x.cols + kb;
                            float acc = out.at(i, j);
                            for (int64_t gb = 0; gb < kcount / gs; ++gb) {
                                const int64_t g = gbase + gb;
                                int32_t idot = 0;
                                const int8_t* a = ac + gb * gs;
                                const int8_t* wc = wcode.data() + gb * gs;
                                for (int64_t k = 0; k < gs; ++k)
                                    idot += static_cast<int32_t>(a[k]) * static_cast<int32_t>(wc[k]);
                                if (asym) {
                                    const int32_t zp = w.zero_points[static_cast<size_t>(j * groups + g)];
                                    idot -= zp * asums[static_cast<size_t>(i * groups + g)];
                                }
                                const float ascale = act.scales[static_cast<size_t>(i * groups + g)];
                                const float wscale = w.scales[static_cast<size_t>(j * groups + g)];
                                acc += (ascale * wscale) * static_cast<float>(idot);
                            }
                            out.at(i, j) = acc;
                        }
                    }
                }
                if (!bias.empty())
                    for (int64_t i = 0; i < x.rows; ++i) out.at(i, j) += bias[j];
            }
        }
    });
}

void validate_cfg(const KernelConfig& cfg) {
    if (cfg.tile_rows < 1 || cfg.tile_cols < 1 || cfg.reduction_block < 1 || cfg.threads < 1)
        throw InvalidConfig("kernel config fields must all be >= 1");
}

} // namespace

Mat qlinear(const Mat& x, const QuantizedTensor& w, std::span<const float> bias,
            const KernelConfig& cfg) {
    validate_cfg(cfg);
    check_linear_shapes(x.cols, w.rows, w.cols, bias, "qlinear");
    const int64_t gs = w.effective_group_size();
    const int64_t kblock = std::min(w.cols, (cfg.reduction_block + gs - 1) / gs * gs);
    Mat out(x.rows, w.rows);
    if (w.recipe.compute_path == ComputePath::Int8Compute)
        qlinear_int8_blocked(x, w, bias, cfg, kblock, out);
    else
        qlinear_fp32_blocked(x, w, bias, cfg, kblock, out);
    return out;
}

Mat linear_fp32(const Mat& x, const Mat& w, std::span<const float> bias, const KernelConfig& cfg) {
    validate_cfg(cfg);
    check_linear_shapes(x.cols, w.rows, w.cols, bias, "linear_fp32");
    const int64_t kblock = std::min(w.cols, cfg.reduction_block);
    Mat out(x.rows, w.rows);
    const int64_t n_jtiles = (w.rows + cfg.tile_cols - 1) / cfg.tile_cols;
    parallel_for(n_jtiles, cfg.threads, [&](int64_t t0, int64_t t1) {
        for (int64_t jt = t0; jt < t1; ++jt) {
            const int64_t j0 = jt * cfg.tile_cols;
            const int64_t j1 = std::min(w.rows, j0 + cfg.tile_cols);
            for (int64_t j = j0; j < j1; ++j) {
                const float* wr = w.row_ptr(j);
                for (int64_t kb = 0; kb < w.cols; kb += kblock) {
                    const int64_t kend = std::min(w.cols, kb + kblock);
                    for (int64_t i = 0; i < x.rows; ++i) {
                        const float* xr = x.row_ptr(i);
                        float part = 0.0f;
                        for (int64_t k = kb; k < kend; ++k) part += xr[k] * wr[k];
                        out.at(i, j) += part;
                    }
                }
                if (!bias.empty())
                    for (int64_t i = 0; i < x.rows; ++i) out.at(i, j) += bias[j];
            }
        }
    });
    return out;
}

} // namespace nq
