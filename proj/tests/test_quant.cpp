#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "nq/quant.hpp"
#include "support/oracles.hpp"

using namespace nq;
using nqtest::group_offset;
using nqtest::nearest_code_error;

TEST_CASE("recipe string round trip") {
    for (QuantScheme s : {QuantScheme::Symmetric, QuantScheme::Asymmetric})
        for (ComputePath p : {ComputePath::Fp32Compute, ComputePath::Int8Compute}) {
            for (int64_t gs : {32, 64, 128, 256, 512, 1024}) {
                QuantRecipe r{s, QuantGranularity::grouped(gs), p};
                CHECK(QuantRecipe::parse(r.to_string()) == r);
            }
            QuantRecipe pc{s, QuantGranularity::per_channel(), p};
            CHECK(QuantRecipe::parse(pc.to_string()) == pc);
        }
    CHECK(QuantRecipe{}.to_string() == "rtn-asym-g32-int8");
    CHECK(QuantRecipe::parse("rtn-sym-pc-fp32").granularity.kind ==
          QuantGranularity::Kind::PerChannel);
}

TEST_CASE("bad recipe strings rejected") {
    for (const char* s : {"", "rtn", "rtn-asym-g32", "rtn-asym-g33-int8", "rtn-both-g32-int8",
                          "awq-asym-g32-int8", "rtn-asym-g32-int4", "rtn-asym-gx-int8"})
        CHECK_THROWS_AS(QuantRecipe::parse(s), FormatError);
    CHECK_THROWS_AS(QuantGranularity::grouped(48), InvalidConfig);
}

TEST_CASE("asymmetric grid-aligned group round-trips exactly") {
    std::vector<float> values(16);
    for (int i = 0; i < 16; ++i) values[static_cast<size_t>(i)] = 0.1f * static_cast<float>(i);
    GroupQuant gq = quantize_group(values, QuantScheme::Asymmetric);
    CHECK(gq.scale == doctest::Approx(0.1).epsilon(1e-7));
    CHECK(gq.zero_point == 0);
    for (int i = 0; i < 16; ++i) CHECK(gq.codes[static_cast<size_t>(i)] == i);
    const auto back = dequantize_group(gq, QuantScheme::Asymmetric);
    for (int i = 0; i < 16; ++i)
        CHECK(back[static_cast<size_t>(i)] == values[static_cast<size_t>(i)]);
}

TEST_CASE("constant groups") {
    std::vector<float> zeros(32, 0.0f);
    for (QuantScheme s : {QuantScheme::Symmetric, QuantScheme::Asymmetric}) {
        GroupQuant gq = quantize_group(zeros, s);
        CHECK(gq.scale == 1.0f);
        for (float v : dequantize_group(gq, s)) CHECK(v == 0.0f);
    }
    // Nonzero constant, asymmetric: documented rule scale=1, zp=0.
    std::vector<float> threes(32, 3.2f);
    GroupQuant gq = quantize_group(threes, QuantScheme::Asymmetric);
    CHECK(gq.scale == 1.0f);
    CHECK(gq.zero_point == 0);
    CHECK(gq.codes[0] == 3);
    // Nonzero constant, symmetric: absmax scale keeps the round trip tight.
    GroupQuant gs = quantize_group(threes, QuantScheme::Symmetric);
    CHECK(dequantize_group(gs, QuantScheme::Symmetric)[0] == doctest::Approx(3.2).epsilon(1e-6));
}

TEST_CASE("round-trip bound matches the exhaustive nearest-code oracle") {
    std::mt19937_64 rng(7);
    for (QuantScheme scheme : {QuantScheme::Asymmetric, QuantScheme::Symmetric}) {
        for (int iter = 0; iter < 10000; ++iter) {
            const auto values = nqtest::random_floats(rng, 32, -4.0f, 4.0f);
            GroupQuant gq = quantize_group(values, scheme);
            CHECK(gq.scale > 0.0f);
            const auto back = dequantize_group(gq, scheme);
            const int offset = group_offset(gq, scheme);
            for (size_t i = 0; i < values.size(); ++i) {
                const double err = std::abs(static_cast<double>(back[i]) - values[i]);
                REQUIRE(err <= gq.scale / 2.0 + 1e-6);
                REQUIRE(err <= nearest_code_error(values[i], gq.scale, offset) + 1e-9);
            }
        }
    }
}

TEST_CASE("symmetric codes never use stored value 0") {
    std::mt19937_64 rng(11);
    for (int iter = 0; iter < 2000; ++iter) {
        const auto values = nqtest::random_floats(rng, 64, -3.0f, 3.0f);
        GroupQuant gq = quantize_group(values, QuantScheme::Symmetric);
        for (uint8_t c : gq.codes) CHECK(c >= 1);
    }
}

TEST_CASE("dequantize_group definitional cases") {
    GroupQuant a{0.1f, 0, {0, 15}};
    const auto va = dequantize_group(a, QuantScheme::Asymmetric);
    CHECK(va[0] == 0.0f);
    CHECK(va[1] == doctest::Approx(1.5).epsilon(1e-7));

    GroupQuant s{0.1f, 0, {1, 15}};
    const auto vs = dequantize_group(s, QuantScheme::Symmetric);
    CHECK(vs[0] == doctest::Approx(-0.7).epsilon(1e-7));
    CHECK(vs[1] == doctest::Approx(0.7).epsilon(1e-7));
}

TEST_CASE("non-finite input rejected") {
    std::vector<float> bad = {1.0f, std::numeric_limits<float>::quiet_NaN()};
    CHECK_THROWS_AS(quantize_group(bad, QuantScheme::Asymmetric), InvalidInput);
    bad[1] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(quantize_group(bad, QuantScheme::Symmetric), InvalidInput);
    CHECK_THROWS_AS(quantize_group({}, QuantScheme::Symmetric), InvalidInput);

    Mat x(1, 32);
    x.data[5] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(quantize_activations(x, 32), InvalidInput);
}

TEST_CASE("quantize_tensor shapes and sizes") {
    std::mt19937_64 rng(3);
    QuantRecipe g32{QuantScheme::Asymmetric, QuantGranularity::grouped(32),
                    ComputePath::Int8Compute};

    Mat w = nqtest::random_mat(rng, 2, 32, -1.0f, 1.0f);
    QuantizedTensor qt = quantize_tensor(w, g32);
    CHECK(qt.groups_per_row() == 1);
    CHECK(qt.scales.size() == 2);
    CHECK(qt.zero_points.size() == 2);
    CHECK(qt.packed.size() == 32);

    Mat w2 = nqtest::random_mat(rng, 4, 64, -1.0f, 1.0f);
    QuantRecipe pc{QuantScheme::Asymmetric, QuantGranularity::per_channel(),
                   ComputePath::Int8Compute};
    QuantizedTensor qpc = quantize_tensor(w2, pc);
    CHECK(qpc.effective_group_size() == 64);
    CHECK(qpc.scales.size() == 4);
}

TEST_CASE("quantize_tensor indivisible columns name the tensor") {
    Mat w(2, 48);
    QuantRecipe g32{QuantScheme::Asymmetric, QuantGranularity::grouped(32),
                    ComputePath::Int8Compute};
    try {
        quantize_tensor(w, g32, "blocks.3.wq");
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("blocks.3.wq") != std::string::npos);
        CHECK(msg.find("48") != std::string::npos);
        CHECK(msg.find("32") != std::string::npos);
    }
}

TEST_CASE("tensor round trip stays within the per-group bound") {
    std::mt19937_64 rng(17);
    Mat w = nqtest::random_mat(rng, 64, 128, -2.0f, 2.0f);
    for (QuantScheme scheme : {QuantScheme::Asymmetric, QuantScheme::Symmetric}) {
        QuantRecipe r{scheme, QuantGranularity::grouped(32), ComputePath::Int8Compute};
        QuantizedTensor qt = quantize_tensor(w, r);
        Mat back = dequantize_tensor(qt);
        for (int64_t row = 0; row < w.rows; ++row)
            for (int64_t col = 0; col < w.cols; ++col) {
                const float scale = qt.scales[static_cast<size_t>(row * 4 + col / 32)];
                CHECK(std::abs(back.at(row, col) - w.at(row, col)) <= scale / 2 + 1e-6f);
            }
    }
}

TEST_CASE("dequantize_tensor rejects corrupt lengths") {
    std::mt19937_64 rng(5);
    Mat w = nqtest::random_mat(rng, 2, 32, -1.0f, 1.0f);
    QuantizedTensor qt =
        quantize_tensor(w, QuantRecipe{QuantScheme::Asymmetric, QuantGranularity::grouped(32),
                                       ComputePath::Int8Compute});
    qt.scales.pop_back();
    CHECK_THROWS_AS(dequantize_tensor(qt), FormatError);
}

TEST_CASE("pack_nibbles format") {
    const std::vector<uint8_t> packed = pack_nibbles(std::vector<uint8_t>{1, 2, 3, 4});
    CHECK(packed == std::vector<uint8_t>{0x21, 0x43});
    CHECK(pack_nibbles(std::vector<uint8_t>{0, 0}) == std::vector<uint8_t>{0x00});
    CHECK_THROWS_AS(pack_nibbles(std::vector<uint8_t>{1, 2, 3}), FormatError);
    CHECK_THROWS_AS(pack_nibbles(std::vector<uint8_t>{1, 16}), FormatError);
}

TEST_CASE("pack/unpack are mutual inverses") {
    std::mt19937_64 rng(23);
    for (int iter = 0; iter < 1000; ++iter) {
        const size_t n = 2 * (1 + rng() % 64);
        std::vector<uint8_t> codes(n);
        for (auto& c : codes) c = static_cast<uint8_t>(rng() % 16);
        CHECK(unpack_nibbles(pack_nibbles(codes)) == codes);
    }
}

TEST_CASE("activation quantization") {
    Mat x(1, 128);
    x.data[127] = 1.27f;
    DynQuantActivation act = quantize_activations(x, 128);
    CHECK(act.scales[0] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(act.codes[127] == 127);
    for (int i = 0; i < 127; ++i) CHECK(act.codes[static_cast<size_t>(i)] == 0);

    Mat zeros(2, 64);
    DynQuantActivation za = quantize_activations(zeros, 32);
    for (float s : za.scales) CHECK(s == 1.0f);
    for (int8_t c : za.codes) CHECK(c == 0);

    CHECK_THROWS_AS(quantize_activations(x, 48), ShapeError);
}

TEST_CASE("activation round trip bound") {
    std::mt19937_64 rng(31);
    Mat x = nqtest::random_mat(rng, 8, 256, -5.0f, 5.0f);
    DynQuantActivation act = quantize_activations(x, 64);
    for (int64_t r = 0; r < x.rows; ++r)
        for (int64_t col = 0; col < x.cols; ++col) {
            const float scale = act.scales[static_cast<size_t>(r * 4 + col / 64)];
            const float back =
                scale * static_cast<float>(act.codes[static_cast<size_t>(r * 256 + col)]);
            CHECK(std::abs(back - x.at(r, col)) <= scale / 2 + 1e-6f);
        }
}
