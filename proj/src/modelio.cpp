#include "nq/modelio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "nq/error.hpp"

namespace nq {

namespace {

constexpr char kMagic[4] = {'N', 'Q', 'F', '1'};
constexpr uint64_t kAlign = 64;
constexpr uint32_t kMaxTensors = 1u << 20;
constexpr uint32_t kMaxNameLen = 4096;
constexpr uint32_t kMaxRecipeLen = 64;
constexpr int64_t kMaxDim = 1 << 24;
constexpr int64_t kMaxElems = int64_t(1) << 31;

uint32_t crc_of(const uint8_t* data, size_t len) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (len > 0) {
        const uInt chunk = static_cast<uInt>(std::min<size_t>(len, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        len -= chunk;
    }
    return static_cast<uint32_t>(crc);
}

struct Writer {
    std::string buf;

    void u8(uint8_t v) { buf.push_back(static_cast<char>(v)); }
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void f32_array(const float* p, size_t n) {
        for (size_t i = 0; i < n; ++i) f32(p[i]);
    }
    void pad_to(uint64_t align) {
        while (buf.size() % align != 0) buf.push_back('\0');
    }
};

struct Reader {
    std::span<const uint8_t> buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw TruncatedFile("file ends inside a field");
    }
    uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(buf[pos++]) << (8 * i);
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos++]) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos++]) << (8 * i);
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(uint32_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

uint64_t align_up(uint64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

} // namespace

uint64_t fp32_tensor_bytes(int64_t rows, int64_t cols) {
    return static_cast<uint64_t>(rows) * static_cast<uint64_t>(cols) * 4;
}

uint64_t quantized_tensor_bytes(int64_t rows, int64_t cols, const QuantRecipe& recipe) {
    const uint64_t groups = static_cast<uint64_t>(cols / recipe.granularity.effective_group_size(cols));
    uint64_t bytes = static_cast<uint64_t>(rows) * static_cast<uint64_t>(cols) / 2; // codes
    bytes += static_cast<uint64_t>(rows) * groups * 4;                              // scales
    if (recipe.scheme == QuantScheme::Asymmetric)
        bytes += static_cast<uint64_t>(rows) * groups; // zero points
    return bytes;
}

namespace {

uint64_t ref_payload_size(const TensorRef& r) {
    if (!r.quantized) return fp32_tensor_bytes(r.rows, r.cols);
    return quantized_tensor_bytes(r.q->rows, r.q->cols, r.q->recipe);
}

std::string write_bytes_from_refs(const ModelConfig& config, const std::vector<TensorRef>& refs) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(static_cast<uint32_t>(config.vocab_size));
    w.u32(static_cast<uint32_t>(config.n_layers));
    w.u32(static_cast<uint32_t>(config.n_heads));
    w.u32(static_cast<uint32_t>(config.head_dim));
    w.u32(static_cast<uint32_t>(config.hidden_dim));
    w.u32(static_cast<uint32_t>(config.ffn_dim));
    w.u32(static_cast<uint32_t>(config.max_seq_len));
    w.u8(static_cast<uint8_t>(config.norm_kind));
    w.u8(static_cast<uint8_t>(config.activation_kind));
    w.u16(0);
    w.f32(config.rope_theta);
    w.u32(static_cast<uint32_t>(refs.size()));

    // Table sizes are known up front, so blob offsets can be computed before
    // any payload is written.
    uint64_t table_bytes = 0;
    for (const TensorRef& r : refs) {
        const std::string recipe = r.quantized ? r.q->recipe.to_string() : std::string();
        table_bytes += 4 + r.name.size() + 1 + 4 + recipe.size() + 4 + 4 + 8 + 8;
    }
    uint64_t cursor = align_up(w.buf.size() + table_bytes);
    for (const TensorRef& r : refs) {
        const std::string recipe = r.quantized ? r.q->recipe.to_string() : std::string();
        const uint64_t size = ref_payload_size(r);
        w.u32(static_cast<uint32_t>(r.name.size()));
        w.bytes(r.name.data(), r.name.size());
        w.u8(r.quantized ? 1 : 0);
        w.u32(static_cast<uint32_t>(recipe.size()));
        w.bytes(recipe.data(), recipe.size());
        w.u32(static_cast<uint32_t>(r.rows));
        w.u32(static_cast<uint32_t>(r.cols));
        w.u64(cursor);
        w.u64(size);
        cursor = align_up(cursor + size);
    }

    for (const TensorRef& r : refs) {
        w.pad_to(kAlign);
        if (r.quantized) {
            const QuantizedTensor& q = *r.q;
            w.bytes(q.packed.data(), q.packed.size());
            w.f32_array(q.scales.data(), q.scales.size());
            if (!q.zero_points.empty()) w.bytes(q.zero_points.data(), q.zero_points.size());
        } else {
            w.f32_array(r.data, static_cast<size_t>(r.rows * r.cols));
        }
    }

    w.u32(crc_of(reinterpret_cast<const uint8_t*>(w.buf.data()), w.buf.size()));
    return std::move(w.buf);
}

} // namespace

std::string write_nqf_bytes(const ModelConfig& config, std::span<const NamedTensor> tensors) {
    std::vector<TensorRef> refs;
    refs.reserve(tensors.size());
    for (const NamedTensor& t : tensors) {
        TensorRef r;
        r.name = t.name;
        if (std::holds_alternative<QuantizedTensor>(t.tensor)) {
            r.quantized = true;
            r.q = &std::get<QuantizedTensor>(t.tensor);
            r.rows = r.q->rows;
            r.cols = r.q->cols;
        } else {
            const Mat& m = std::get<Mat>(t.tensor);
            r.data = m.data.data();
            r.rows = m.rows;
            r.cols = m.cols;
        }
        refs.push_back(std::move(r));
    }
    return write_bytes_from_refs(config, refs);
}

NqfContents read_nqf_bytes(std::span<const uint8_t> bytes) {
    Reader rd{bytes, 0};
    rd.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw BadMagic("not an NQF file (bad magic)");
    rd.pos = 4;

    NqfContents out;
    ModelConfig& c = out.config;
    c.vocab_size = rd.u32();
    c.n_layers = rd.u32();
    c.n_heads = rd.u32();
    c.head_dim = rd.u32();
    c.hidden_dim = rd.u32();
    c.ffn_dim = rd.u32();
    c.max_seq_len = rd.u32();
    const uint8_t norm = rd.u8();
    const uint8_t act = rd.u8();
    if (norm > 1 || act > 1) throw FormatError("unknown norm or activation tag");
    c.norm_kind = static_cast<NormKind>(norm);
    c.activation_kind = static_cast<ActivationKind>(act);
    if (rd.u16() != 0) throw FormatError("reserved header bytes must be zero");
    c.rope_theta = rd.f32();

    const uint32_t count = rd.u32();
    if (count > kMaxTensors) throw FormatError("implausible tensor count");

    out.table.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        NqfTensorInfo info;
        const uint32_t name_len = rd.u32();
        if (name_len == 0 || name_len > kMaxNameLen) throw FormatError("bad tensor name length");
        info.name = rd.str(name_len);
        const uint8_t dtype = rd.u8();
        if (dtype > 1) throw FormatError("unknown dtype tag");
        info.quantized = dtype == 1;
        const uint32_t recipe_len = rd.u32();
        if (recipe_len > kMaxRecipeLen) throw FormatError("bad recipe length");
        info.recipe = rd.str(recipe_len);
        if (info.quantized == info.recipe.empty())
            throw FormatError("recipe string presence must match dtype");
        info.rows = rd.u32();
        info.cols = rd.u32();
        if (info.rows <= 0 || info.cols <= 0 || info.rows > kMaxDim || info.cols > kMaxDim ||
            info.rows * info.cols > kMaxElems)
            throw FormatError("implausible tensor shape");
        info.offset = rd.u64();
        info.size = rd.u64();
        out.table.push_back(std::move(info));
    }

    // Bounds and size formulas, all before any payload byte is interpreted.
    if (bytes.size() < rd.pos + 4) throw TruncatedFile("missing checksum");
    const uint64_t payload_end = bytes.size() - 4;
    uint64_t expected_offset = align_up(rd.pos);
    std::vector<QuantRecipe> recipes(out.table.size());
    for (size_t i = 0; i < out.table.size(); ++i) {
        NqfTensorInfo& info = out.table[i];
        uint64_t formula;
        if (info.quantized) {
            recipes[i] = QuantRecipe::parse(info.recipe);
            const int64_t gs = recipes[i].granularity.effective_group_size(info.cols);
            if (info.cols % gs != 0 || info.cols % 2 != 0)
                throw FormatError("tensor '" + info.name + "' shape incompatible with its recipe");
            formula = quantized_tensor_bytes(info.rows, info.cols, recipes[i]);
        } else {
            formula = fp32_tensor_bytes(info.rows, info.cols);
        }
        if (info.size != formula)
            throw FormatError("tensor '" + info.name + "' payload size does not match its shape");
        if (info.offset != expected_offset)
            throw FormatError("tensor '" + info.name + "' payload offset out of place");
        if (info.offset + info.size > payload_end)
            throw TruncatedFile("tensor '" + info.name + "' payload extends past end of file");
        expected_offset = align_up(info.offset + info.size);
    }
    // Canonical files end exactly at the last blob (no trailing slack).
    const uint64_t canonical_end =
        out.table.empty() ? static_cast<uint64_t>(rd.pos)
                          : out.table.back().offset + out.table.back().size;
    if (payload_end != canonical_end)
        throw FormatError("file length does not match tensor table");

    uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<uint32_t>(bytes[payload_end + i]) << (8 * i);
    if (crc_of(bytes.data(), payload_end) != stored_crc)
        throw ChecksumMismatch("payload checksum mismatch");

    // Materialize.
    for (size_t i = 0; i < out.table.size(); ++i) {
        const NqfTensorInfo& info = out.table[i];
        const uint8_t* p = bytes.data() + info.offset;
        NamedTensor nt;
        nt.name = info.name;
        if (info.quantized) {
            QuantizedTensor q;
            q.rows = info.rows;
            q.cols = info.cols;
            q.recipe = recipes[i];
            const uint64_t n_codes = static_cast<uint64_t>(info.rows) * info.cols / 2;
            const uint64_t n_groups =
                static_cast<uint64_t>(info.rows) *
                (info.cols / recipes[i].granularity.effective_group_size(info.cols));
            q.packed.assign(p, p + n_codes);
            q.scales.resize(n_groups);
            std::memcpy(q.scales.data(), p + n_codes, n_groups * 4);
            if (recipes[i].scheme == QuantScheme::Asymmetric)
                q.zero_points.assign(p + n_codes + n_groups * 4, p + n_codes + n_groups * 5);
            nt.tensor = std::move(q);
        } else {
            Mat m(info.rows, info.cols);
            std::memcpy(m.data.data(), p, m.data.size() * 4);
            nt.tensor = std::move(m);
        }
        out.tensors.push_back(std::move(nt));
    }
    return out;
}

void write_nqf(const std::string& path, const ModelConfig& config,
               std::span<const NamedTensor> tensors) {
    const std::string bytes = write_nqf_bytes(config, tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write to '" + path + "' failed");
}

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw Error("cannot open '" + path + "'");
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw Error("read from '" + path + "' failed");
    return bytes;
}

} // namespace

NqfContents read_nqf(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    return read_nqf_bytes(bytes);
}

void save_model(const ModelWeights& m, const std::string& path) {
    m.validate();
    std::vector<TensorRef> refs;
    for_each_tensor(m, [&](const TensorRef& r) { refs.push_back(r); });
    const std::string bytes = write_bytes_from_refs(m.config, refs);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write to '" + path + "' failed");
}

ModelWeights load_model(const std::string& path) {
    NqfContents contents = read_nqf(path);
    try {
        contents.config.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("invalid model config: ") + e.what());
    }

    std::map<std::string, NamedTensor*> by_name;
    for (NamedTensor& t : contents.tensors) {
        if (!by_name.emplace(t.name, &t).second)
            throw FormatError("duplicate tensor '" + t.name + "'");
    }

    ModelWeights m;
    m.config = contents.config;
    size_t used = 0;

    auto take_fp32 = [&](const std::string& name) -> Mat {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("missing tensor '" + name + "'");
        if (!std::holds_alternative<Mat>(it->second->tensor))
            throw FormatError("tensor '" + name + "' must be fp32");
        ++used;
        return std::move(std::get<Mat>(it->second->tensor));
    };
    auto take_vec = [&](const std::string& name) -> std::vector<float> {
        Mat m2 = take_fp32(name);
        if (m2.rows != 1) throw FormatError("tensor '" + name + "' must be a row vector");
        return std::move(m2.data);
    };
    auto take_linear = [&](const std::string& name) -> LinearWeight {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("missing tensor '" + name + "'");
        ++used;
        if (std::holds_alternative<QuantizedTensor>(it->second->tensor))
            return LinearWeight(std::move(std::get<QuantizedTensor>(it->second->tensor)));
        return LinearWeight(std::move(std::get<Mat>(it->second->tensor)));
    };
    auto take_norm = [&](const std::string& name) -> NormWeights {
        NormWeights n;
        n.weight = take_vec(name + ".weight");
        if (m.config.norm_kind == NormKind::LayerNorm) n.bias = take_vec(name + ".bias");
        return n;
    };

    m.tok_embed = take_fp32("tok_embed");
    m.layers.resize(static_cast<size_t>(m.config.n_layers));
    for (int64_t l = 0; l < m.config.n_layers; ++l) {
        auto& L = m.layers[static_cast<size_t>(l)];
        const std::string p = "layers." + std::to_string(l) + ".";
        L.attn_norm = take_norm(p + "attn_norm");
        L.wq = take_linear(p + "wq");
        L.wk = take_linear(p + "wk");
        L.wv = take_linear(p + "wv");
        L.wo = take_linear(p + "wo");
        L.ffn_norm = take_norm(p + "ffn_norm");
        L.w1 = take_linear(p + "w1");
        L.w2 = take_linear(p + "w2");
        if (m.config.activation_kind == ActivationKind::SiluGated) L.w3 = take_linear(p + "w3");
    }
    m.final_norm = take_norm("final_norm");
    m.lm_head = take_linear("lm_head");

    if (used != contents.tensors.size()) throw FormatError("file contains unexpected tensors");
    try {
        m.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("inconsistent model: ") + e.what());
    }
    return m;
}

MemoryReport memory_report(const ModelWeights& m) {
    MemoryReport rep;
    for_each_tensor(m, [&](const TensorRef& r) {
        TensorMemory tm;
        tm.name = r.name;
        tm.fp32_bytes = fp32_tensor_bytes(r.rows, r.cols);
        tm.stored_bytes = r.quantized ? quantized_tensor_bytes(r.rows, r.cols, r.q->recipe)
                                      : tm.fp32_bytes;
        rep.fp32_total += tm.fp32_bytes;
        rep.stored_total += tm.stored_bytes;
        rep.tensors.push_back(std::move(tm));
    });
    rep.ratio = rep.stored_total > 0
                    ? static_cast<double>(rep.fp32_total) / static_cast<double>(rep.stored_total)
                    : 1.0;
    return rep;
}

ModelConfig parse_config_text(const std::string& text) {
    ModelConfig c;
    bool got_hidden = false;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
        line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
        if (line.empty()) continue;

        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
        value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));

        auto as_int = [&]() -> int64_t {
            try {
                size_t idx = 0;
                const int64_t v = std::stoll(value, &idx);
                if (idx != value.size()) throw std::invalid_argument("trailing");
                return v;
            } catch (const std::exception&) {
                throw FormatError("config line " + std::to_string(lineno) + ": bad integer '" +
                                  value + "'");
            }
        };
        if (key == "vocab_size") c.vocab_size = as_int();
        else if (key == "n_layers") c.n_layers = as_int();
        else if (key == "n_heads") c.n_heads = as_int();
        else if (key == "head_dim") c.head_dim = as_int();
        else if (key == "hidden_dim") { c.hidden_dim = as_int(); got_hidden = true; }
        else if (key == "ffn_dim") c.ffn_dim = as_int();
        else if (key == "max_seq_len") c.max_seq_len = as_int();
        else if (key == "rope_theta") c.rope_theta = std::stof(value);
        else if (key == "norm") {
            if (value == "layernorm") c.norm_kind = NormKind::LayerNorm;
            else if (value == "rmsnorm") c.norm_kind = NormKind::RMSNorm;
            else throw FormatError("config line " + std::to_string(lineno) +
                                   ": norm must be layernorm or rmsnorm");
        } else if (key == "activation") {
            if (value == "gelu") c.activation_kind = ActivationKind::Gelu;
            else if (value == "silu-gated") c.activation_kind = ActivationKind::SiluGated;
            else throw FormatError("config line " + std::to_string(lineno) +
                                   ": activation must be gelu or silu-gated");
        } else {
            throw FormatError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        }
    }
    if (!got_hidden) c.hidden_dim = c.n_heads * c.head_dim;
    c.validate();
    return c;
}

std::string config_to_text(const ModelConfig& c) {
    std::ostringstream out;
    out << "vocab_size = " << c.vocab_size << "\n";
    out << "n_layers = " << c.n_layers << "\n";
    out << "n_heads = " << c.n_heads << "\n";
    out << "head_dim = " << c.head_dim << "\n";
    out << "hidden_dim = " << c.hidden_dim << "\n";
    out << "ffn_dim = " << c.ffn_dim << "\n";
    out << "max_seq_len = " << c.max_seq_len << "\n";
    out << "norm = " << (c.norm_kind == NormKind::LayerNorm ? "layernorm" : "rmsnorm") << "\n";
    out << "activation = " << (c.activation_kind == ActivationKind::Gelu ? "gelu" : "silu-gated")
        << "\n";
    out << "rope_theta = " << c.rope_theta << "\n";
    return out.str();
}

} // namespace nq
