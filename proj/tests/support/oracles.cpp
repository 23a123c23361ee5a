#include "support/oracles.hpp"

#include <stdexcept>

namespace nqtest {

namespace {

using Vec = std::vector<double>;

Vec rows_dot_wt(const Vec& x, int64_t n, const nq::Mat& w) { // x(n,in) * w(out,in)^T
    Vec y(static_cast<size_t>(n * w.rows), 0.0);
    const int64_t in = w.cols;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < w.rows; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < in; ++k)
                acc += x[static_cast<size_t>(i * in + k)] * static_cast<double>(w.at(j, k));
            y[static_cast<size_t>(i * w.rows + j)] = acc;
        }
    return y;
}

void norm_rows(Vec& x, int64_t n, int64_t h, const nq::NormWeights& nw, nq::NormKind kind) {
    for (int64_t i = 0; i < n; ++i) {
        double* row = x.data() + i * h;
        if (kind == nq::NormKind::RMSNorm) {
            double ms = 0.0;
            for (int64_t d = 0; d < h; ++d) ms += row[d] * row[d];
            const double inv = 1.0 / std::sqrt(ms / h + 1e-5);
            for (int64_t d = 0; d < h; ++d) row[d] = row[d] * inv * nw.weight[static_cast<size_t>(d)];
        } else {
            double mean = 0.0;
            for (int64_t d = 0; d < h; ++d) mean += row[d];
            mean /= h;
            double var = 0.0;
            for (int64_t d = 0; d < h; ++d) var += (row[d] - mean) * (row[d] - mean);
            var /= h;
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            for (int64_t d = 0; d < h; ++d)
                row[d] = (row[d] - mean) * inv * nw.weight[static_cast<size_t>(d)] +
                         nw.bias[static_cast<size_t>(d)];
        }
    }
}

void rope_rows(Vec& x, int64_t n, int64_t heads, int64_t hd, float theta) {
    for (int64_t p = 0; p < n; ++p)
        for (int64_t h = 0; h < heads; ++h) {
            double* base = x.data() + p * heads * hd + h * hd;
            for (int64_t i = 0; i < hd / 2; ++i) {
                const double freq = std::pow(static_cast<double>(theta),
                                             -2.0 * static_cast<double>(i) / static_cast<double>(hd));
                const double angle = static_cast<double>(p) * freq;
                const double cs = std::cos(angle), sn = std::sin(angle);
                const double x0 = base[2 * i], x1 = base[2 * i + 1];
                base[2 * i] = x0 * cs - x1 * sn;
                base[2 * i + 1] = x0 * sn + x1 * cs;
            }
        }
}

} // namespace

std::vector<double> ref_forward_f64(const nq::ModelWeights& m, std::span<const int32_t> tokens) {
    const nq::ModelConfig& c = m.config;
    const int64_t n = static_cast<int64_t>(tokens.size());
    const int64_t H = c.hidden_dim;

    auto fp32 = [](const nq::LinearWeight& w) -> const nq::Mat& {
        if (w.is_quantized()) throw std::logic_error("ref_forward_f64 expects fp32 weights");
        return w.fp32();
    };

    Vec x(static_cast<size_t>(n * H));
    for (int64_t p = 0; p < n; ++p)
        for (int64_t d = 0; d < H; ++d)
            x[static_cast<size_t>(p * H + d)] =
                static_cast<double>(m.tok_embed.at(tokens[static_cast<size_t>(p)], d));

    for (const nq::LayerWeights& L : m.layers) {
        Vec a = x;
        norm_rows(a, n, H, L.attn_norm, c.norm_kind);
        Vec q = rows_dot_wt(a, n, fp32(L.wq));
        Vec k = rows_dot_wt(a, n, fp32(L.wk));
        Vec v = rows_dot_wt(a, n, fp32(L.wv));
        rope_rows(q, n, c.n_heads, c.head_dim, c.rope_theta);
        rope_rows(k, n, c.n_heads, c.head_dim, c.rope_theta);

        Vec ctx(static_cast<size_t>(n * H), 0.0);
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.head_dim));
        for (int64_t p = 0; p < n; ++p)
            for (int64_t h = 0; h < c.n_heads; ++h) {
                const double* qh = q.data() + p * H + h * c.head_dim;
                std::vector<double> scores(static_cast<size_t>(p + 1));
                double mx = -1e300;
                for (int64_t t = 0; t <= p; ++t) {
                    const double* kh = k.data() + t * H + h * c.head_dim;
                    double dot = 0.0;
                    for (int64_t d = 0; d < c.head_dim; ++d) dot += qh[d] * kh[d];
                    scores[static_cast<size_t>(t)] = dot * inv_sqrt_d;
                    mx = std::max(mx, scores[static_cast<size_t>(t)]);
                }
                double sum = 0.0;
                for (double& s : scores) {
                    s = std::exp(s - mx);
                    sum += s;
                }
                double* oh = ctx.data() + p * H + h * c.head_dim;
                for (int64_t t = 0; t <= p; ++t) {
                    const double* vh = v.data() + t * H + h * c.head_dim;
                    for (int64_t d = 0; d < c.head_dim; ++d)
                        oh[d] += scores[static_cast<size_t>(t)] / sum * vh[d];
                }
            }
        Vec attn_out = rows_dot_wt(ctx, n, fp32(L.wo));
        for (size_t i = 0; i < x.size(); ++i) x[i] += attn_out[i];

        Vec b = x;
        norm_rows(b, n, H, L.ffn_norm, c.norm_kind);
        Vec ffn_out;
        if (c.activation_kind == nq::ActivationKind::Gelu) {
            Vec u = rows_dot_wt(b, n, fp32(L.w1));
            for (double& f : u) f = 0.5 * f * (1.0 + std::erf(f / std::sqrt(2.0)));
            ffn_out = rows_dot_wt(u, n, fp32(L.w2));
        } else {
            Vec u = rows_dot_wt(b, n, fp32(L.w1));
            Vec g = rows_dot_wt(b, n, fp32(L.w3));
            for (size_t i = 0; i < u.size(); ++i) u[i] = u[i] / (1.0 + std::exp(-u[i])) * g[i];
            ffn_out = rows_dot_wt(u, n, fp32(L.w2));
        }
        for (size_t i = 0; i < x.size(); ++i) x[i] += ffn_out[i];
    }

    Vec last(x.begin() + (n - 1) * H, x.begin() + n * H);
    norm_rows(last, 1, H, m.final_norm, c.norm_kind);
    return rows_dot_wt(last, 1, fp32(m.lm_head));
}

} // namespace nqtest
