#include "nq/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nq/error.hpp"
#include "nq/parallel.hpp"
#include "nq/runtime.hpp"

namespace nq {

std::vector<int32_t> make_chain_corpus(uint64_t seed, int64_t length) {
    if (length < 1) throw InvalidInput("corpus length must be positive");
    std::mt19937_64 rng(seed);
    std::vector<int32_t> cycle(256);
    std::iota(cycle.begin(), cycle.end(), 0);
    std::shuffle(cycle.begin(), cycle.end(), rng);
    std::vector<int32_t> next(256);
    for (int i = 0; i < 256; ++i) next[static_cast<size_t>(cycle[static_cast<size_t>(i)])] =
        cycle[static_cast<size_t>((i + 1) % 256)];

    std::vector<int32_t> corpus(static_cast<size_t>(length));
    corpus[0] = cycle[0];
    for (int64_t i = 1; i < length; ++i)
        corpus[static_cast<size_t>(i)] = next[static_cast<size_t>(corpus[static_cast<size_t>(i - 1)])];
    return corpus;
}

namespace {

// Trainer-local matmuls, threaded over output rows.
Mat mm_nt(const Mat& x, const Mat& w, int threads) { // x(T,in) * w(out,in)^T -> (T,out)
    Mat y(x.rows, w.rows);
    parallel_for(x.rows, threads, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i)
            for (int64_t j = 0; j < w.rows; ++j) {
                float acc = 0.0f;
                const float* xr = x.row_ptr(i);
                const float* wr = w.row_ptr(j);
                for (int64_t k = 0; k < x.cols; ++k) acc += xr[k] * wr[k];
                y.at(i, j) = acc;
            }
    });
    return y;
}

Mat mm_nn(const Mat& a, const Mat& b, int threads) { // a(T,out) * b(out,in) -> (T,in)
    Mat y(a.rows, b.cols);
    parallel_for(a.rows, threads, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            float* yr = y.row_ptr(i);
            for (int64_t k = 0; k < a.cols; ++k) {
                const float av = a.at(i, k);
                const float* br = b.row_ptr(k);
                for (int64_t j = 0; j < b.cols; ++j) yr[j] += av * br[j];
            }
        }
    });
    return y;
}

void mm_tn_acc(const Mat& a, const Mat& b, Mat& acc, int threads) { // acc += a^T b
    parallel_for(a.cols, threads, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            float* ar = acc.row_ptr(i);
            for (int64_t t = 0; t < a.rows; ++t) {
                const float av = a.at(t, i);
                const float* br = b.row_ptr(t);
                for (int64_t j = 0; j < b.cols; ++j) ar[j] += av * br[j];
            }
        }
    });
}

struct LayerParams {
    Mat g1, wq, wk, wv, wo, g2, w1, w2; // g1/g2 are 1 x hidden gains
};

struct Params {
    Mat embed;
    std::vector<LayerParams> layers;
    Mat gf;
    Mat head;

    std::vector<Mat*> all() {
        std::vector<Mat*> v{&embed};
        for (auto& l : layers)
            for (Mat* m : {&l.g1, &l.wq, &l.wk, &l.wv, &l.wo, &l.g2, &l.w1, &l.w2}) v.push_back(m);
        v.push_back(&gf);
        v.push_back(&head);
        return v;
    }
};

Params make_params(const ToyTrainConfig& c) {
    const int64_t H = c.n_heads * c.head_dim;
    Params p;
    p.embed = Mat(c.vocab, H);
    p.layers.resize(static_cast<size_t>(c.n_layers));
    for (auto& l : p.layers) {
        l.g1 = Mat(1, H);
        l.wq = Mat(H, H);
        l.wk = Mat(H, H);
        l.wv = Mat(H, H);
        l.wo = Mat(H, H);
        l.g2 = Mat(1, H);
        l.w1 = Mat(c.ffn_dim, H);
        l.w2 = Mat(H, c.ffn_dim);
    }
    p.gf = Mat(1, H);
    p.head = Mat(c.vocab, H);
    return p;
}

void init_params(Params& p, uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Mat& m, float std_dev) {
        std::normal_distribution<float> dist(0.0f, std_dev);
        for (float& f : m.data) f = dist(rng);
    };
    fill(p.embed, 0.05f);
    for (auto& l : p.layers) {
        std::fill(l.g1.data.begin(), l.g1.data.end(), 1.0f);
        std::fill(l.g2.data.begin(), l.g2.data.end(), 1.0f);
        const float ws = 1.0f / std::sqrt(static_cast<float>(l.wq.cols));
        fill(l.wq, ws);
        fill(l.wk, ws);
        fill(l.wv, ws);
        fill(l.wo, ws * 0.5f);
        fill(l.w1, ws);
        fill(l.w2, 0.5f / std::sqrt(static_cast<float>(l.w2.cols)));
    }
    std::fill(p.gf.data.begin(), p.gf.data.end(), 1.0f);
    fill(p.head, 1.0f / std::sqrt(static_cast<float>(p.head.cols)));
}

struct RmsCache {
    Mat normed;           // post-gain output
    std::vector<float> r; // per-row 1/rms
};

RmsCache rms_forward(const Mat& x, const Mat& gain) {
    RmsCache c;
    c.normed = Mat(x.rows, x.cols);
    c.r.resize(static_cast<size_t>(x.rows));
    for (int64_t t = 0; t < x.rows; ++t) {
        const float* src = x.row_ptr(t);
        float ms = 0.0f;
        for (int64_t i = 0; i < x.cols; ++i) ms += src[i] * src[i];
        const float r = 1.0f / std::sqrt(ms / x.cols + kNormEps);
        c.r[static_cast<size_t>(t)] = r;
        float* dst = c.normed.row_ptr(t);
        for (int64_t i = 0; i < x.cols; ++i) dst[i] = src[i] * r * gain.data[static_cast<size_t>(i)];
    }
    return c;
}

// dx and dgain from d(normed); x is the norm input.
void rms_backward(const Mat& x, const Mat& gain, const RmsCache& cache, const Mat& dnormed,
                  Mat& dx, Mat& dgain) {
    const int64_t H = x.cols;
    for (int64_t t = 0; t < x.rows; ++t) {
        const float* src = x.row_ptr(t);
        const float* dn = dnormed.row_ptr(t);
        const float r = cache.r[static_cast<size_t>(t)];
        float s = 0.0f;
        for (int64_t i = 0; i < H; ++i) {
            const float du = dn[i] * gain.data[static_cast<size_t>(i)];
            s += du * src[i];
            dgain.data[static_cast<size_t>(i)] += dn[i] * src[i] * r;
        }
        float* dxr = dx.row_ptr(t);
        const float r3_s = r * r * r * s / static_cast<float>(H);
        for (int64_t i = 0; i < H; ++i) {
            const float du = dn[i] * gain.data[static_cast<size_t>(i)];
            dxr[i] += r * du - r3_s * src[i];
        }
    }
}

void rope_backward(std::span<float> grad, int64_t n_heads, int64_t head_dim, int64_t position,
                   float theta) {
    for (int64_t h = 0; h < n_heads; ++h) {
        float* base = grad.data() + h * head_dim;
        for (int64_t i = 0; i < head_dim / 2; ++i) {
            const double freq =
                std::pow(static_cast<double>(theta), -2.0 * static_cast<double>(i) / head_dim);
            const double angle = static_cast<double>(position) * freq;
            const float cs = static_cast<float>(std::cos(angle));
            const float sn = static_cast<float>(std::sin(angle));
            const float d0 = base[2 * i];
            const float d1 = base[2 * i + 1];
            base[2 * i] = d0 * cs + d1 * sn;
            base[2 * i + 1] = -d0 * sn + d1 * cs;
        }
    }
}

inline float gelu_fwd(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f));
}

inline float gelu_grad(float x) {
    constexpr float inv_sqrt2 = 0.70710678118654752f;
    constexpr float inv_sqrt2pi = 0.39894228040143268f;
    return 0.5f * (1.0f + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5f * x * x);
}

struct LayerCache {
    Mat x_in;
    RmsCache attn_norm;
    Mat q_rot, k_rot, v;       // post-rope q/k
    std::vector<Mat> probs;    // per head, T x T lower-triangular attention
    Mat ctx;
    Mat x_mid; // after attention residual
    RmsCache ffn_norm;
    Mat ffn_pre;  // before gelu
    Mat ffn_act;  // after gelu
};

struct StepCache {
    std::vector<LayerCache> layers;
    Mat x_final;
    RmsCache final_norm;
    Mat logits;
};

// Causal forward over one window; mirrors the runtime block structure.
StepCache window_forward(const Params& p, const ToyTrainConfig& c,
                         std::span<const int32_t> tokens) {
    const int64_t T = static_cast<int64_t>(tokens.size());
    const int64_t H = c.n_heads * c.head_dim;
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(c.head_dim));

    StepCache sc;
    Mat x(T, H);
    for (int64_t t = 0; t < T; ++t) {
        const float* e = p.embed.row_ptr(tokens[static_cast<size_t>(t)]);
        std::copy(e, e + H, x.row_ptr(t));
    }

    sc.layers.resize(static_cast<size_t>(c.n_layers));
    for (int64_t l = 0; l < c.n_layers; ++l) {
        const LayerParams& L = p.layers[static_cast<size_t>(l)];
        LayerCache& lc = sc.layers[static_cast<size_t>(l)];
        lc.x_in = x;

        lc.attn_norm = rms_forward(x, L.g1);
        lc.q_rot = mm_nt(lc.attn_norm.normed, L.wq, c.threads);
        lc.k_rot = mm_nt(lc.attn_norm.normed, L.wk, c.threads);
        lc.v = mm_nt(lc.attn_norm.normed, L.wv, c.threads);
        for (int64_t t = 0; t < T; ++t) {
            rope_apply(lc.q_rot.row(t), c.n_heads, c.head_dim, t, 10000.0f);
            rope_apply(lc.k_rot.row(t), c.n_heads, c.head_dim, t, 10000.0f);
        }

        lc.ctx = Mat(T, H);
        lc.probs.assign(static_cast<size_t>(c.n_heads), Mat(T, T));
        for (int64_t h = 0; h < c.n_heads; ++h) {
            Mat& prob = lc.probs[static_cast<size_t>(h)];
            for (int64_t tq = 0; tq < T; ++tq) {
                const float* qh = lc.q_rot.row_ptr(tq) + h * c.head_dim;
                float mx = -1e30f;
                for (int64_t tk = 0; tk <= tq; ++tk) {
                    const float* kh = lc.k_rot.row_ptr(tk) + h * c.head_dim;
                    float dot = 0.0f;
                    for (int64_t d = 0; d < c.head_dim; ++d) dot += qh[d] * kh[d];
                    prob.at(tq, tk) = dot * inv_sqrt_d;
                    mx = std::max(mx, prob.at(tq, tk));
                }
                float sum = 0.0f;
                for (int64_t tk = 0; tk <= tq; ++tk) {
                    prob.at(tq, tk) = std::exp(prob.at(tq, tk) - mx);
                    sum += prob.at(tq, tk);
                }
                const float inv = 1.0f / sum;
                float* out = lc.ctx.row_ptr(tq) + h * c.head_dim;
                for (int64_t tk = 0; tk <= tq; ++tk) {
                    prob.at(tq, tk) *= inv;
                    const float* vh = lc.v.row_ptr(tk) + h * c.head_dim;
                    for (int64_t d = 0; d < c.head_dim; ++d) out[d] += prob.at(tq, tk) * vh[d];
                }
            }
        }
        Mat attn_out = mm_nt(lc.ctx, L.wo, c.threads);
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn_out.data[i];
        lc.x_mid = x;

        lc.ffn_norm = rms_forward(x, L.g2);
        lc.ffn_pre = mm_nt(lc.ffn_norm.normed, L.w1, c.threads);
        lc.ffn_act = lc.ffn_pre;
        for (float& f : lc.ffn_act.data) f = gelu_fwd(f);
        Mat ffn_out = mm_nt(lc.ffn_act, L.w2, c.threads);
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += ffn_out.data[i];
    }

    sc.x_final = x;
    sc.final_norm = rms_forward(x, p.gf);
    sc.logits = mm_nt(sc.final_norm.normed, p.head, c.threads);
    return sc;
}

float window_backward(const Params& p, Params& g, const ToyTrainConfig& c,
                      std::span<const int32_t> tokens, std::span<const int32_t> targets,
                      const StepCache& sc, float inv_positions) {
    const int64_t T = static_cast<int64_t>(tokens.size());
    const int64_t H = c.n_heads * c.head_dim;
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(c.head_dim));

    // Cross-entropy and dlogits.
    float loss = 0.0f;
    Mat dlogits(T, c.vocab);
    for (int64_t t = 0; t < T; ++t) {
        const float* row = sc.logits.row_ptr(t);
        float mx = row[0];
        for (int64_t i = 1; i < c.vocab; ++i) mx = std::max(mx, row[i]);
        float sum = 0.0f;
        for (int64_t i = 0; i < c.vocab; ++i) sum += std::exp(row[i] - mx);
        const int32_t tgt = targets[static_cast<size_t>(t)];
        loss += (std::log(sum) + mx - row[tgt]) * inv_positions;
        float* dl = dlogits.row_ptr(t);
        for (int64_t i = 0; i < c.vocab; ++i)
            dl[i] = (std::exp(row[i] - mx) / sum - (i == tgt ? 1.0f : 0.0f)) * inv_positions;
    }

    mm_tn_acc(dlogits, sc.final_norm.normed, g.head, c.threads);
    Mat dfinal = mm_nn(dlogits, p.head, c.threads);
    Mat dx(T, H);
    rms_backward(sc.x_final, p.gf, sc.final_norm, dfinal, dx, g.gf);

    for (int64_t l = c.n_layers - 1; l >= 0; --l) {
        const LayerParams& L = p.layers[static_cast<size_t>(l)];
        LayerParams& G = g.layers[static_cast<size_t>(l)];
        const LayerCache& lc = sc.layers[static_cast<size_t>(l)];

        // FFN block.
        Mat dffn_out = dx; // residual: gradient passes through unchanged
        mm_tn_acc(dffn_out, lc.ffn_act, G.w2, c.threads);
        Mat dact = mm_nn(dffn_out, L.w2, c.threads);
        for (size_t i = 0; i < dact.data.size(); ++i)
            dact.data[i] *= gelu_grad(lc.ffn_pre.data[i]);
        mm_tn_acc(dact, lc.ffn_norm.normed, G.w1, c.threads);
        Mat dnormed2 = mm_nn(dact, L.w1, c.threads);
        rms_backward(lc.x_mid, L.g2, lc.ffn_norm, dnormed2, dx, G.g2);

        // Attention block.
        Mat dattn_out = dx;
        mm_tn_acc(dattn_out, lc.ctx, G.wo, c.threads);
        Mat dctx = mm_nn(dattn_out, L.wo, c.threads);

        Mat dq(T, H), dk(T, H), dv(T, H);
        for (int64_t h = 0; h < c.n_heads; ++h) {
            const Mat& prob = lc.probs[static_cast<size_t>(h)];
            for (int64_t tq = 0; tq < T; ++tq) {
                const float* dch = dctx.row_ptr(tq) + h * c.head_dim;
                const float* qh = lc.q_rot.row_ptr(tq) + h * c.head_dim;
                float dot_sum = 0.0f;
                std::vector<float> dalpha(static_cast<size_t>(tq + 1));
                for (int64_t tk = 0; tk <= tq; ++tk) {
                    const float* vh = lc.v.row_ptr(tk) + h * c.head_dim;
                    float da = 0.0f;
                    for (int64_t d = 0; d < c.head_dim; ++d) da += dch[d] * vh[d];
                    dalpha[static_cast<size_t>(tk)] = da;
                    dot_sum += prob.at(tq, tk) * da;
                    float* dvh = dv.row_ptr(tk) + h * c.head_dim;
                    for (int64_t d = 0; d < c.head_dim; ++d)
                        dvh[d] += prob.at(tq, tk) * dch[d];
                }
                float* dqh = dq.row_ptr(tq) + h * c.head_dim;
                for (int64_t tk = 0; tk <= tq; ++tk) {
                    const float ds =
                        prob.at(tq, tk) * (dalpha[static_cast<size_t>(tk)] - dot_sum) * inv_sqrt_d;
                    const float* kh = lc.k_rot.row_ptr(tk) + h * c.head_dim;
                    float* dkh = dk.row_ptr(tk) + h * c.head_dim;
                    for (int64_t d = 0; d < c.head_dim; ++d) {
                        dqh[d] += ds * kh[d];
                        dkh[d] += ds * qh[d];
                    }
                }
            }
        }
        for (int64_t t = 0; t < T; ++t) {
            rope_backward(dq.row(t), c.n_heads, c.head_dim, t, 10000.0f);
            rope_backward(dk.row(t), c.n_heads, c.head_dim, t, 10000.0f);
        }
        mm_tn_acc(dq, lc.attn_norm.normed, G.wq, c.threads);
        mm_tn_acc(dk, lc.attn_norm.normed, G.wk, c.threads);
        mm_tn_acc(dv, lc.attn_norm.normed, G.wv, c.threads);
        Mat dnormed1 = mm_nn(dq, L.wq, c.threads);
        {
            Mat tmp = mm_nn(dk, L.wk, c.threads);
            for (size_t i = 0; i < dnormed1.data.size(); ++i) dnormed1.data[i] += tmp.data[i];
            tmp = mm_nn(dv, L.wv, c.threads);
            for (size_t i = 0; i < dnormed1.data.size(); ++i) dnormed1.data[i] += tmp.data[i];
        }
        rms_backward(lc.x_in, L.g1, lc.attn_norm, dnormed1, dx, G.g1);
    }

    for (int64_t t = 0; t < T; ++t) {
        float* ge = g.embed.row_ptr(tokens[static_cast<size_t>(t)]);
        const float* dxr = dx.row_ptr(t);
        for (int64_t i = 0; i < H; ++i) ge[i] += dxr[i];
    }
    return loss;
}

ModelWeights export_model(const Params& p, const ToyTrainConfig& c) {
    ModelWeights m;
    m.config.vocab_size = c.vocab;
    m.config.n_layers = c.n_layers;
    m.config.n_heads = c.n_heads;
    m.config.head_dim = c.head_dim;
    m.config.hidden_dim = c.n_heads * c.head_dim;
    m.config.ffn_dim = c.ffn_dim;
    m.config.max_seq_len = c.max_seq_len;
    m.config.norm_kind = NormKind::RMSNorm;
    m.config.activation_kind = ActivationKind::Gelu;
    m.tok_embed = p.embed;
    for (const auto& l : p.layers) {
        LayerWeights lw;
        lw.attn_norm.weight = l.g1.data;
        lw.wq = LinearWeight(l.wq);
        lw.wk = LinearWeight(l.wk);
        lw.wv = LinearWeight(l.wv);
        lw.wo = LinearWeight(l.wo);
        lw.ffn_norm.weight = l.g2.data;
        lw.w1 = LinearWeight(l.w1);
        lw.w2 = LinearWeight(l.w2);
        m.layers.push_back(std::move(lw));
    }
    m.final_norm.weight = p.gf.data;
    m.lm_head = LinearWeight(p.head);
    m.validate();
    return m;
}

} // namespace

ToyTrainResult train_toy_model(const ToyTrainConfig& cfg) {
    if (cfg.vocab != 256) throw InvalidConfig("toy trainer expects the byte vocabulary");
    if (cfg.window < 2 || cfg.corpus_len < cfg.window + 2)
        throw InvalidConfig("toy trainer: corpus too short for the window");

    const std::vector<int32_t> corpus = make_chain_corpus(cfg.seed, cfg.corpus_len);

    Params params = make_params(cfg);
    init_params(params, cfg.seed);
    Params grads = make_params(cfg);
    Params m1 = make_params(cfg); // Adam moments
    Params m2 = make_params(cfg);

    auto param_list = params.all();
    auto grad_list = grads.all();
    auto m1_list = m1.all();
    auto m2_list = m2.all();

    std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ull);
    const float inv_positions = 1.0f / static_cast<float>(cfg.window * cfg.batch);
    constexpr float beta1 = 0.9f, beta2 = 0.999f, adam_eps = 1e-8f;

    ToyTrainResult result;
    for (int step = 1; step <= cfg.steps; ++step) {
        for (Mat* gm : grad_list) std::fill(gm->data.begin(), gm->data.end(), 0.0f);

        float loss = 0.0f;
        for (int b = 0; b < cfg.batch; ++b) {
            const int64_t max_start = cfg.corpus_len - cfg.window - 1;
            const int64_t off = static_cast<int64_t>(rng() % static_cast<uint64_t>(max_start + 1));
            std::span<const int32_t> tokens(corpus.data() + off, static_cast<size_t>(cfg.window));
            std::span<const int32_t> targets(corpus.data() + off + 1,
                                             static_cast<size_t>(cfg.window));
            StepCache sc = window_forward(params, cfg, tokens);
            loss += window_backward(params, grads, cfg, tokens, targets, sc, inv_positions);
        }
        result.losses.push_back(loss);

        const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step));
        const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step));
        for (size_t pi = 0; pi < param_list.size(); ++pi) {
            float* w = param_list[pi]->data.data();
            const float* gr = grad_list[pi]->data.data();
            float* mm = m1_list[pi]->data.data();
            float* vv = m2_list[pi]->data.data();
            const size_t n = param_list[pi]->data.size();
            for (size_t i = 0; i < n; ++i) {
                mm[i] = beta1 * mm[i] + (1.0f - beta1) * gr[i];
                vv[i] = beta2 * vv[i] + (1.0f - beta2) * gr[i] * gr[i];
                const float mhat = mm[i] / bc1;
                const float vhat = vv[i] / bc2;
                w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + adam_eps);
            }
        }
    }

    result.model = export_model(params, cfg);
    return result;
}

ModelWeights random_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    auto gauss = [&rng](Mat& m, float std_dev) {
        std::normal_distribution<float> dist(0.0f, std_dev);
        for (float& f : m.data) f = dist(rng);
    };
    auto norm = [&config](NormWeights& n) {
        n.weight.assign(static_cast<size_t>(config.hidden_dim), 1.0f);
        if (config.norm_kind == NormKind::LayerNorm)
            n.bias.assign(static_cast<size_t>(config.hidden_dim), 0.0f);
    };
    auto linear = [&gauss](int64_t rows, int64_t cols) {
        Mat m(rows, cols);
        gauss(m, 1.0f / std::sqrt(static_cast<float>(cols)));
        return LinearWeight(std::move(m));
    };

    ModelWeights m;
    m.config = config;
    m.tok_embed = Mat(config.vocab_size, config.hidden_dim);
    gauss(m.tok_embed, 0.05f);
    m.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& L : m.layers) {
        norm(L.attn_norm);
        L.wq = linear(config.hidden_dim, config.hidden_dim);
        L.wk = linear(config.hidden_dim, config.hidden_dim);
        L.wv = linear(config.hidden_dim, config.hidden_dim);
        L.wo = linear(config.hidden_dim, config.hidden_dim);
        norm(L.ffn_norm);
        L.w1 = linear(config.ffn_dim, config.hidden_dim);
        L.w2 = linear(config.hidden_dim, config.ffn_dim);
        if (config.activation_kind == ActivationKind::SiluGated)
            L.w3 = linear(config.ffn_dim, config.hidden_dim);
    }
    norm(m.final_norm);
    m.lm_head = linear(config.vocab_size, config.hidden_dim);
    m.validate();
    return m;
}

} // namespace nq
