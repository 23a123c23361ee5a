#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nq/error.hpp"

namespace nq {

/// Dense row-major float32 matrix. The only tensor rank this engine needs:
/// vectors are 1xN, weight matrices are rows(out) x cols(in).
struct Mat {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> data;

    Mat() = default;
    Mat(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0f) {
        if (r < 0 || c < 0) throw ShapeError("Mat: negative dimension");
    }

    float& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
    float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }

    float* row_ptr(int64_t r) { return data.data() + r * cols; }
    const float* row_ptr(int64_t r) const { return data.data() + r * cols; }

    std::span<float> row(int64_t r) { return {row_ptr(r), static_cast<size_t>(cols)}; }
    std::span<const float> row(int64_t r) const { return {row_ptr(r), static_cast<size_t>(cols)}; }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
};

inline Mat transpose(const Mat& m) {
    Mat t(m.cols, m.rows);
    for (int64_t r = 0; r < m.rows; ++r)
        for (int64_t c = 0; c < m.cols; ++c)
            t.at(c, r) = m.at(r, c);
    return t;
}

} // namespace nq
