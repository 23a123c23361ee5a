#include "nq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>

namespace nq {

namespace {

bool valid_group_size(int64_t gs) {
    return gs == 32 || gs == 64 || gs == 128 || gs == 256 || gs == 512 || gs == 1024;
}

// Half-away-from-zero rounding with the clamp done in double, so huge
// value/scale ratios never hit undefined float->int conversions.
inline int round_clamp(double x, int lo, int hi) {
    double r = std::round(x);
    if (r < lo) return lo;
    if (r > hi) return hi;
    return static_cast<int>(r);
}

void check_finite(std::span<const float> values, const char* op) {
    for (float v : values) {
        if (!std::isfinite(v)) throw InvalidInput(std::string(op) + ": non-finite input value");
    }
}

} // namespace

QuantGranularity QuantGranularity::grouped(int64_t gs) {
    if (!valid_group_size(gs)) {
        throw InvalidConfig("group size must be one of {32,64,128,256,512,1024}, got " +
                            std::to_string(gs));
    }
    return {Kind::Grouped, gs};
}

std::string QuantRecipe::to_string() const {
    std::string s = "rtn-";
    s += scheme == QuantScheme::Asymmetric ? "asym" : "sym";
    s += '-';
    if (granularity.kind == QuantGranularity::Kind::PerChannel) {
        s += "pc";
    } else {
        s += 'g';
        s += std::to_string(granularity.group_size);
    }
    s += '-';
    s += compute_path == ComputePath::Int8Compute ? "int8" : "fp32";
    return s;
}

QuantRecipe QuantRecipe::parse(std::string_view text) {
    auto fail = [&]() -> QuantRecipe {
        throw FormatError("bad recipe string '" + std::string(text) +
                          "' (expected e.g. rtn-asym-g32-int8)");
    };
    std::vector<std::string_view> parts;
    size_t start = 0;
    while (start <= text.size()) {
        size_t dash = text.find('-', start);
        if (dash == std::string_view::npos) {
            parts.push_back(text.substr(start));
            break;
        }
        parts.push_back(text.substr(start, dash - start));
        start = dash + 1;
    }
    if (parts.size() != 4 || parts[0] != "rtn") return fail();

    QuantRecipe r;
    if (parts[1] == "asym") r.scheme = QuantScheme::Asymmetric;
    else if (parts[1] == "sym") r.scheme = QuantScheme::Symmetric;
    else return fail();

    if (parts[2] == "pc") {
        r.granularity = QuantGranularity::per_channel();
    } else if (parts[2].size() > 1 && parts[2][0] == 'g') {
        int64_t gs = 0;
        auto digits = parts[2].substr(1);
        auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), gs);
        if (ec != std::errc() || p != digits.data() + digits.size() || !valid_group_size(gs)) return fail();
        r.granularity = QuantGranularity::grouped(gs);
    } else {
        return fail();
    }

    if (parts[3] == "int8") r.compute_path = ComputePath::Int8Compute;
    else if (parts[3] == "fp32") r.compute_path = ComputePath::Fp32Compute;
    else return fail();
    return r;
}

GroupQuant quantize_group(std::span<const float> values, QuantScheme scheme) {
    if (values.empty()) throw InvalidInput("quantize_group: empty group");
    check_finite(values, "quantize_group");

    GroupQuant gq;
    gq.codes.resize(values.size());

    if (scheme == QuantScheme::Asymmetric) {
        float mn = values[0], mx = values[0];
        for (float v : values) {
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        float scale = (mx - mn) / 15.0f;
        uint8_t zp = 0;
        if (scale > 0.0f) {
            zp = static_cast<uint8_t>(round_clamp(-static_cast<double>(mn) / scale, 0, 15));
        } else {
            scale = 1.0f; // constant group
        }
        gq.scale = scale;
        gq.zero_point = zp;
        for (size_t i = 0; i < values.size(); ++i) {
            gq.codes[i] = static_cast<uint8_t>(
                round_clamp(static_cast<double>(values[i]) / scale + zp, 0, 15));
        }
    } else {
        float amax = 0.0f;
        for (float v : values) amax = std::max(amax, std::fabs(v));
        float scale = amax / 7.0f;
        if (!(scale > 0.0f)) scale = 1.0f;
        gq.scale = scale;
        gq.zero_point = 0;
        for (size_t i = 0; i < values.size(); ++i) {
            int q = round_clamp(static_cast<double>(values[i]) / scale, -8, 7);
            gq.codes[i] = static_cast<uint8_t>(q + 8);
        }
    }
    return gq;
}

std::vector<float> dequantize_group(const GroupQuant& gq, QuantScheme scheme) {
    std::vector<float> out(gq.codes.size());
    if (scheme == QuantScheme::Asymmetric) {
        for (size_t i = 0; i < gq.codes.size(); ++i)
            out[i] = gq.scale * (static_cast<int>(gq.codes[i]) - static_cast<int>(gq.zero_point));
    } else {
        for (size_t i = 0; i < gq.codes.size(); ++i)
            out[i] = gq.scale * (static_cast<int>(gq.codes[i]) - 8);
    }
    return out;
}

QuantizedTensor quantize_tensor(const Mat& weights, const QuantRecipe& recipe,
                                std::string_view name) {
    const int64_t rows = weights.rows, cols = weights.cols;
    if (rows <= 0 || cols <= 0)
        throw ShapeError("quantize_tensor: '" + std::string(name) + "' is empty");
    const int64_t gs = recipe.granularity.effective_group_size(cols);
    if (gs <= 0 || cols % gs != 0) {
        throw ShapeError("quantize_tensor: '" + std::string(name) + "' has " +
                         std::to_string(cols) + " input channels, not divisible by group size " +
                         std::to_string(gs));
    }
    if (cols % 2 != 0)
        throw ShapeError("quantize_tensor: '" + std::string(name) + "' needs an even column count");

    const int64_t groups = cols / gs;
    QuantizedTensor qt;
    qt.rows = rows;
    qt.cols = cols;
    qt.recipe = recipe;
    qt.packed.resize(static_cast<size_t>(rows * cols / 2));
    qt.scales.resize(static_cast<size_t>(rows * groups));
    const bool asym = recipe.scheme == QuantScheme::Asymmetric;
    if (asym) qt.zero_points.resize(static_cast<size_t>(rows * groups));

    std::vector<uint8_t> row_codes(static_cast<size_t>(cols));
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t g = 0; g < groups; ++g) {
            GroupQuant gq = quantize_group(weights.row(r).subspan(g * gs, gs), recipe.scheme);
            qt.scales[static_cast<size_t>(r * groups + g)] = gq.scale;
            if (asym) qt.zero_points[static_cast<size_t>(r * groups + g)] = gq.zero_point;
            std::copy(gq.codes.begin(), gq.codes.end(), row_codes.begin() + g * gs);
        }
        auto packed_row = pack_nibbles(row_codes);
        std::copy(packed_row.begin(), packed_row.end(), qt.packed.begin() + r * cols / 2);
    }
    return qt;
}

Mat dequantize_tensor(const QuantizedTensor& qt) {
    const int64_t gs = qt.effective_group_size();
    const int64_t groups = qt.groups_per_row();
    if (qt.packed.size() != static_cast<size_t>(qt.rows * qt.cols / 2) ||
        qt.scales.size() != static_cast<size_t>(qt.rows * groups) ||
        (qt.recipe.scheme == QuantScheme::Asymmetric &&
         qt.zero_points.size() != static_cast<size_t>(qt.rows * groups))) {
        throw FormatError("dequantize_tensor: corrupt buffer lengths");
    }
    Mat out(qt.rows, qt.cols);
    const bool asym = qt.recipe.scheme == QuantScheme::Asymmetric;
    for (int64_t r = 0; r < qt.rows; ++r) {
        const uint8_t* row_bytes = qt.packed.data() + r * qt.cols / 2;
        float* dst = out.row_ptr(r);
        for (int64_t g = 0; g < groups; ++g) {
            const float scale = qt.scales[static_cast<size_t>(r * groups + g)];
            const int offset = asym ? qt.zero_points[static_cast<size_t>(r * groups + g)] : 8;
            for (int64_t k = 0; k < gs; ++k) {
                const int64_t e = g * gs + k;
                const uint8_t byte = row_bytes[e >> 1];
                const int code = (e & 1) ? (byte >> 4) : (byte & 0x0F);
                dst[e] = scale * (code - offset);
            }
        }
    }
    return out;
}

std::vector<uint8_t> pack_nibbles(std::span<const uint8_t> codes) {
    if (codes.size() % 2 != 0) throw FormatError("pack_nibbles: odd code count");
    for (uint8_t c : codes)
        if (c > 15) throw FormatError("pack_nibbles: code out of nibble range");
    std::vector<uint8_t> out(codes.size() / 2);
    for (size_t k = 0; k < out.size(); ++k)
        out[k] = static_cast<uint8_t>(codes[2 * k] | (codes[2 * k + 1] << 4));
    return out;
}

std::vector<uint8_t> unpack_nibbles(std::span<const uint8_t> bytes) {
    std::vector<uint8_t> out(bytes.size() * 2);
    for (size_t k = 0; k < bytes.size(); ++k) {
        out[2 * k] = bytes[k] & 0x0F;
        out[2 * k + 1] = bytes[k] >> 4;
    }
    return out;
}

DynQuantActivation quantize_activations(const Mat& x, int64_t group_size) {
    if (group_size <= 0 || x.cols % group_size != 0) {
        throw ShapeError("quantize_activations: row length " + std::to_string(x.cols) +
                         " not divisible by group size " + std::to_string(group_size));
    }
    check_finite(std::span<const float>(x.data.data(), x.data.size()), "quantize_activations");

    const int64_t groups = x.cols / group_size;
    DynQuantActivation act;
    act.rows = x.rows;
    act.cols = x.cols;
    act.group_size = group_size;
    act.codes.resize(static_cast<size_t>(x.rows * x.cols));
    act.scales.resize(static_cast<size_t>(x.rows * groups));

    for (int64_t r = 0; r < x.rows; ++r) {
        const float* src = x.row_ptr(r);
        int8_t* dst = act.codes.data() + r * x.cols;
        for (int64_t g = 0; g < groups; ++g) {
            float amax = 0.0f;
            for (int64_t k = 0; k < group_size; ++k)
                amax = std::max(amax, std::fabs(src[g * group_size + k]));
            float scale = amax / 127.0f;
            if (!(scale > 0.0f)) scale = 1.0f;
            act.scales[static_cast<size_t>(r * groups + g)] = scale;
            for (int64_t k = 0; k < group_size; ++k) {
                dst[g * group_size + k] = static_cast<int8_t>(
                    round_clamp(static_cast<double>(src[g * group_size + k]) / scale, -127, 127));
            }
        }
    }
    return act;
}

} // namespace nq
