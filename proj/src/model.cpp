#include "auxlm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace auxlm {

using nlohmann::json;

const char* to_string(AuxHead h) {
    switch (h) {
        case AuxHead::None: return "none";
        case AuxHead::Binary: return "binary";
        default: return "recovery";
    }
}

AuxHead aux_head_from_string(const std::string& s) {
    if (s == "none") return AuxHead::None;
    if (s == "binary") return AuxHead::Binary;
    if (s == "recovery") return AuxHead::Recovery;
    throw ConfigError("unknown aux head '" + s + "' (none|binary|recovery)");
}

AuxHead aux_head_for(AuxTask task) {
    switch (task) {
        case AuxTask::None: return AuxHead::None;
        case AuxTask::UPD:
        case AuxTask::UMD: return AuxHead::Binary;
        default: return AuxHead::Recovery;
    }
}

void ModelConfig::validate() const {
    if (vocab_size <= 0) throw ConfigError("model.vocab_size must be positive");
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by n_heads");
    if (max_seq_len < 8) throw ConfigError("model.max_seq_len must be at least 8");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0,1)");
}

DecodeMode decode_mode_from_string(const std::string& s) {
    if (s == "greedy") return DecodeMode::Greedy;
    if (s == "top_k") return DecodeMode::TopK;
    if (s == "top_p") return DecodeMode::TopP;
    throw ConfigError("unknown decode mode '" + s + "' (greedy|top_k|top_p)");
}

const char* to_string(DecodeMode m) {
    switch (m) {
        case DecodeMode::Greedy: return "greedy";
        case DecodeMode::TopK: return "top_k";
        default: return "top_p";
    }
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCube = 0.044715;

template <typename S>
void fill_gaussian(Mat<S>& m, uint64_t seed, const std::string& name, double stddev) {
    StreamRng rng(derive_key(seed, fnv1a64("init"), fnv1a64(name.c_str())));
    for (auto& x : m.data) x = static_cast<S>(rng.next_gaussian() * stddev);
}

// y[t] = W x[t] + b for row-major W [out, in]; b may be empty.
template <typename S>
void matmul_forward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b, Mat<S>& y) {
    int T = x.rows, in = x.cols, out = w.rows;
    y = Mat<S>(T, out);
    for (int t = 0; t < T; ++t) {
        const S* xt = x.row(t);
        S* yt = y.row(t);
        for (int o = 0; o < out; ++o) {
            S acc = b.size() ? b.data[o] : S(0);
            const S* wo = w.row(o);
            for (int i = 0; i < in; ++i) acc += xt[i] * wo[i];
            yt[o] = acc;
        }
    }
}

// Single-row variant shared by the incremental decode path.
template <typename S>
void matvec(const S* x, const Mat<S>& w, const Mat<S>& b, S* y) {
    int in = w.cols, out = w.rows;
    for (int o = 0; o < out; ++o) {
        S acc = b.size() ? b.data[o] : S(0);
        const S* wo = w.row(o);
        for (int i = 0; i < in; ++i) acc += x[i] * wo[i];
        y[o] = acc;
    }
}

template <typename S>
void matmul_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Mat<S>& dx, Mat<S>& dw,
                     Mat<S>* db) {
    int T = x.rows, in = x.cols, out = w.rows;
    for (int t = 0; t < T; ++t) {
        const S* dyt = dy.row(t);
        S* dxt = dx.row(t);
        for (int o = 0; o < out; ++o) {
            const S* wo = w.row(o);
            S d = dyt[o];
            for (int i = 0; i < in; ++i) dxt[i] += d * wo[i];
        }
    }
    for (int t = 0; t < T; ++t) {
        const S* xt = x.row(t);
        const S* dyt = dy.row(t);
        for (int o = 0; o < out; ++o) {
            S* dwo = dw.row(o);
            S d = dyt[o];
            for (int i = 0; i < in; ++i) dwo[i] += d * xt[i];
        }
        if (db) {
            for (int o = 0; o < out; ++o) db->data[o] += dyt[o];
        }
    }
}

template <typename S>
void layernorm_row(const S* x, const S* g, const S* b, int d, S* y, S& mean_out, S& rstd_out) {
    S m = 0;
    for (int i = 0; i < d; ++i) m += x[i];
    m /= static_cast<S>(d);
    S v = 0;
    for (int i = 0; i < d; ++i) {
        S c = x[i] - m;
        v += c * c;
    }
    v /= static_cast<S>(d);
    S rstd = S(1) / std::sqrt(v + static_cast<S>(kLnEps));
    for (int i = 0; i < d; ++i) y[i] = (x[i] - m) * rstd * g[i] + b[i];
    mean_out = m;
    rstd_out = rstd;
}

template <typename S>
void layernorm_forward(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, Mat<S>& y,
                       std::vector<S>& mean, std::vector<S>& rstd) {
    int T = x.rows, d = x.cols;
    y = Mat<S>(T, d);
    mean.resize(T);
    rstd.resize(T);
    for (int t = 0; t < T; ++t) {
        layernorm_row(x.row(t), g.data.data(), b.data.data(), d, y.row(t), mean[t], rstd[t]);
    }
}

template <typename S>
void layernorm_backward(const Mat<S>& x, const Mat<S>& g, const std::vector<S>& mean,
                        const std::vector<S>& rstd, const Mat<S>& dy, Mat<S>& dx, Mat<S>& dg,
                        Mat<S>& db) {
    int T = x.rows, d = x.cols;
    for (int t = 0; t < T; ++t) {
        const S* xt = x.row(t);
        const S* dyt = dy.row(t);
        S* dxt = dx.row(t);
        S dnorm_mean = 0, dnorm_norm_mean = 0;
        for (int i = 0; i < d; ++i) {
            S norm = (xt[i] - mean[t]) * rstd[t];
            S dnorm = dyt[i] * g.data[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= static_cast<S>(d);
        dnorm_norm_mean /= static_cast<S>(d);
        for (int i = 0; i < d; ++i) {
            S norm = (xt[i] - mean[t]) * rstd[t];
            S dnorm = dyt[i] * g.data[i];
            dg.data[i] += dyt[i] * norm;
            db.data[i] += dyt[i];
            dxt[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rstd[t];
        }
    }
}

template <typename S>
S gelu_one(S x) {
    S inner = static_cast<S>(kGeluScale) * (x + static_cast<S>(kGeluCube) * x * x * x);
    return S(0.5) * x * (S(1) + std::tanh(inner));
}

template <typename S>
void gelu_forward(const Mat<S>& x, Mat<S>& y) {
    y = Mat<S>(x.rows, x.cols);
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = gelu_one(x.data[i]);
}

template <typename S>
void gelu_backward(const Mat<S>& x, const Mat<S>& dy, Mat<S>& dx) {
    for (size_t i = 0; i < x.data.size(); ++i) {
        S v = x.data[i];
        S inner = static_cast<S>(kGeluScale) * (v + static_cast<S>(kGeluCube) * v * v * v);
        S th = std::tanh(inner);
        S sech2 = S(1) - th * th;
        S dinner = static_cast<S>(kGeluScale) * (S(1) + S(3) * static_cast<S>(kGeluCube) * v * v);
        S grad = S(0.5) * (S(1) + th) + S(0.5) * v * sech2 * dinner;
        dx.data[i] += dy.data[i] * grad;
    }
}

// One (position, head) causal-attention row over cached keys/values.
// probs must hold t+1 entries; out accumulates the head slice [hs].
// Shared verbatim by the full forward and the incremental decode path so the
// two are bit-identical.
template <typename S>
void attention_row(const S* q, const Mat<S>& keys, const Mat<S>& values, int head_off, int hs,
                   int t, S* probs, S* out) {
    S scale = S(1) / std::sqrt(static_cast<S>(hs));
    S maxv = -std::numeric_limits<S>::infinity();
    for (int j = 0; j <= t; ++j) {
        const S* kj = keys.row(j) + head_off;
        S s = 0;
        for (int i = 0; i < hs; ++i) s += q[i] * kj[i];
        s *= scale;
        probs[j] = s;
        if (s > maxv) maxv = s;
    }
    S sum = 0;
    for (int j = 0; j <= t; ++j) {
        S e = std::exp(probs[j] - maxv);
        probs[j] = e;
        sum += e;
    }
    S inv = S(1) / sum;
    for (int j = 0; j <= t; ++j) probs[j] *= inv;
    for (int i = 0; i < hs; ++i) out[i] = 0;
    for (int j = 0; j <= t; ++j) {
        const S* vj = values.row(j) + head_off;
        S p = probs[j];
        for (int i = 0; i < hs; ++i) out[i] += p * vj[i];
    }
}

template <typename S>
void apply_dropout(Mat<S>& x, double p, StreamRng* rng, Mat<S>& mask) {
    if (p <= 0.0 || rng == nullptr) {
        mask = Mat<S>();
        return;
    }
    mask = Mat<S>(x.rows, x.cols);
    S keep = static_cast<S>(1.0 / (1.0 - p));
    for (size_t i = 0; i < x.data.size(); ++i) {
        mask.data[i] = rng->bernoulli(p) ? S(0) : keep;
        x.data[i] *= mask.data[i];
    }
}

template <typename S>
void dropout_backward(const Mat<S>& mask, Mat<S>& dy) {
    if (mask.size() == 0) return;
    for (size_t i = 0; i < dy.data.size(); ++i) dy.data[i] *= mask.data[i];
}

}  // namespace

template <typename S>
Transformer<S> Transformer<S>::init(const ModelConfig& cfg) {
    cfg.validate();
    Transformer<S> m;
    m.cfg = cfg;
    auto& p = m.params;
    int d = cfg.d_model, ff = cfg.d_ff;
    p.tok_emb = Mat<S>(cfg.vocab_size, d);
    p.pos_emb = Mat<S>(cfg.max_seq_len, d);
    p.blocks.resize(cfg.n_layers);
    for (auto& b : p.blocks) {
        b.ln1_g = Mat<S>(1, d);
        b.ln1_b = Mat<S>(1, d);
        b.qkv_w = Mat<S>(3 * d, d);
        b.qkv_b = Mat<S>(1, 3 * d);
        b.attn_proj_w = Mat<S>(d, d);
        b.attn_proj_b = Mat<S>(1, d);
        b.ln2_g = Mat<S>(1, d);
        b.ln2_b = Mat<S>(1, d);
        b.mlp_fc_w = Mat<S>(ff, d);
        b.mlp_fc_b = Mat<S>(1, ff);
        b.mlp_proj_w = Mat<S>(d, ff);
        b.mlp_proj_b = Mat<S>(1, d);
    }
    p.ln_f_g = Mat<S>(1, d);
    p.ln_f_b = Mat<S>(1, d);
    if (!cfg.tie_lm_head) p.lm_head_w = Mat<S>(cfg.vocab_size, d);
    if (cfg.aux_head != AuxHead::None) {
        p.aux_head_w = Mat<S>(cfg.aux_classes(), d);
        p.aux_head_b = Mat<S>(1, cfg.aux_classes());
    }

    // Weights drawn from independent per-tensor streams keyed by name, so the
    // trunk comes out identical whether or not optional heads exist.
    p.for_each([&](const std::string& name, Mat<S>& t, bool decay) {
        bool gain = name.ends_with("ln1_g") || name.ends_with("ln2_g") || name == "ln_f_g";
        if (gain) {
            std::fill(t.data.begin(), t.data.end(), S(1));
        } else if (decay) {
            fill_gaussian(t, cfg.seed, name, 0.02);
        }  // biases stay zero
    });
    return m;
}

template <typename S>
void Transformer<S>::forward(const std::vector<TokenId>& ids, Workspace<S>& ws, bool train_mode,
                             StreamRng* dropout_rng) const {
    int T = static_cast<int>(ids.size());
    if (T == 0) throw Error("forward: empty sequence");
    if (T > cfg.max_seq_len) {
        throw Error("forward: sequence length " + std::to_string(T) + " exceeds max " +
                    std::to_string(cfg.max_seq_len));
    }
    for (TokenId id : ids) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw Error("forward: token id " + std::to_string(id) + " outside vocabulary");
        }
    }
    int d = cfg.d_model, H = cfg.n_heads, hs = cfg.head_dim();
    StreamRng* drop = train_mode ? dropout_rng : nullptr;

    ws.seq_len = T;
    ws.emb = Mat<S>(T, d);
    for (int t = 0; t < T; ++t) {
        const S* te = params.tok_emb.row(ids[t]);
        const S* pe = params.pos_emb.row(t);
        S* e = ws.emb.row(t);
        for (int i = 0; i < d; ++i) e[i] = te[i] + pe[i];
    }
    apply_dropout(ws.emb, cfg.dropout, drop, ws.emb_mask);

    ws.blocks.assign(cfg.n_layers, {});
    Mat<S> x = ws.emb;
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& b = params.blocks[l];
        auto& a = ws.blocks[l];
        a.x_in = x;

        layernorm_forward(a.x_in, b.ln1_g, b.ln1_b, a.ln1, a.ln1_mean, a.ln1_rstd);
        matmul_forward(a.ln1, b.qkv_w, b.qkv_b, a.qkv);

        // cached-layout views of K and V inside qkv
        Mat<S> keys(T, d), values(T, d);
        for (int t = 0; t < T; ++t) {
            std::memcpy(keys.row(t), a.qkv.row(t) + d, sizeof(S) * d);
            std::memcpy(values.row(t), a.qkv.row(t) + 2 * d, sizeof(S) * d);
        }
        a.atty = Mat<S>(T, d);
        a.probs = Mat<S>(H * T, T);
        for (int t = 0; t < T; ++t) {
            for (int h = 0; h < H; ++h) {
                attention_row(a.qkv.row(t) + h * hs, keys, values, h * hs, hs, t,
                              a.probs.row(h * T + t), a.atty.row(t) + h * hs);
            }
        }
        matmul_forward(a.atty, b.attn_proj_w, b.attn_proj_b, a.attn_proj);
        apply_dropout(a.attn_proj, cfg.dropout, drop, a.attn_mask);

        a.res1 = Mat<S>(T, d);
        for (size_t i = 0; i < a.res1.data.size(); ++i) {
            a.res1.data[i] = a.x_in.data[i] + a.attn_proj.data[i];
        }

        layernorm_forward(a.res1, b.ln2_g, b.ln2_b, a.ln2, a.ln2_mean, a.ln2_rstd);
        matmul_forward(a.ln2, b.mlp_fc_w, b.mlp_fc_b, a.fc);
        gelu_forward(a.fc, a.act);
        matmul_forward(a.act, b.mlp_proj_w, b.mlp_proj_b, a.mlp_proj);
        apply_dropout(a.mlp_proj, cfg.dropout, drop, a.mlp_mask);

        x = Mat<S>(T, d);
        for (size_t i = 0; i < x.data.size(); ++i) {
            x.data[i] = a.res1.data[i] + a.mlp_proj.data[i];
        }
    }
    ws.x_final = x;
    layernorm_forward(ws.x_final, params.ln_f_g, params.ln_f_b, ws.ln_f, ws.ln_f_mean,
                      ws.ln_f_rstd);

    const Mat<S>& lm_w = cfg.tie_lm_head ? params.tok_emb : params.lm_head_w;
    Mat<S> no_bias;
    matmul_forward(ws.ln_f, lm_w, no_bias, ws.lm_logits);
    if (cfg.aux_head != AuxHead::None) {
        matmul_forward(ws.ln_f, params.aux_head_w, params.aux_head_b, ws.aux_logits);
    } else {
        ws.aux_logits = Mat<S>();
    }
}

template <typename S>
void Transformer<S>::backward(const std::vector<TokenId>& ids, const Workspace<S>& ws,
                              const Mat<S>& dlm_logits, const Mat<S>& daux_logits,
                              Params<S>& grads) const {
    int T = ws.seq_len, d = cfg.d_model, H = cfg.n_heads, hs = cfg.head_dim();
    Mat<S> dln_f(T, d);

    const Mat<S>& lm_w = cfg.tie_lm_head ? params.tok_emb : params.lm_head_w;
    Mat<S>& dlm_w = cfg.tie_lm_head ? grads.tok_emb : grads.lm_head_w;
    matmul_backward(ws.ln_f, lm_w, dlm_logits, dln_f, dlm_w, static_cast<Mat<S>*>(nullptr));
    if (cfg.aux_head != AuxHead::None && daux_logits.size() > 0) {
        matmul_backward(ws.ln_f, params.aux_head_w, daux_logits, dln_f, grads.aux_head_w,
                        &grads.aux_head_b);
    }

    Mat<S> dx(T, d);
    layernorm_backward(ws.x_final, params.ln_f_g, ws.ln_f_mean, ws.ln_f_rstd, dln_f, dx,
                       grads.ln_f_g, grads.ln_f_b);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        auto& b = params.blocks[l];
        auto& g = grads.blocks[l];
        auto& a = ws.blocks[l];

        // dx is the gradient at the block output = res1 + mlp_proj
        Mat<S> dmlp_proj = dx;  // copy
        dropout_backward(a.mlp_mask, dmlp_proj);
        Mat<S> dact(T, cfg.d_ff);
        matmul_backward(a.act, b.mlp_proj_w, dmlp_proj, dact, g.mlp_proj_w, &g.mlp_proj_b);
        Mat<S> dfc(T, cfg.d_ff);
        gelu_backward(a.fc, dact, dfc);
        Mat<S> dln2(T, d);
        matmul_backward(a.ln2, b.mlp_fc_w, dfc, dln2, g.mlp_fc_w, &g.mlp_fc_b);
        Mat<S> dres1 = dx;  // residual passthrough
        layernorm_backward(a.res1, b.ln2_g, a.ln2_mean, a.ln2_rstd, dln2, dres1, g.ln2_g,
                           g.ln2_b);

        Mat<S> dattn_proj = dres1;
        dropout_backward(a.attn_mask, dattn_proj);
        Mat<S> datty(T, d);
        matmul_backward(a.atty, b.attn_proj_w, dattn_proj, datty, g.attn_proj_w, &g.attn_proj_b);

        Mat<S> dqkv(T, 3 * d);
        S scale = S(1) / std::sqrt(static_cast<S>(hs));
        std::vector<S> dprobs(T);
        for (int t = 0; t < T; ++t) {
            for (int h = 0; h < H; ++h) {
                const S* p = a.probs.row(h * T + t);
                const S* dy = datty.row(t) + h * hs;
                const S* q = a.qkv.row(t) + h * hs;
                // dV and dprobs
                for (int j = 0; j <= t; ++j) {
                    const S* vj = a.qkv.row(j) + 2 * d + h * hs;
                    S* dvj = dqkv.row(j) + 2 * d + h * hs;
                    S acc = 0;
                    for (int i = 0; i < hs; ++i) {
                        dvj[i] += p[j] * dy[i];
                        acc += dy[i] * vj[i];
                    }
                    dprobs[j] = acc;
                }
                // softmax backward
                S dot = 0;
                for (int j = 0; j <= t; ++j) dot += p[j] * dprobs[j];
                for (int j = 0; j <= t; ++j) {
                    S ds = p[j] * (dprobs[j] - dot) * scale;
                    const S* kj = a.qkv.row(j) + d + h * hs;
                    S* dkj = dqkv.row(j) + d + h * hs;
                    S* dq = dqkv.row(t) + h * hs;
                    for (int i = 0; i < hs; ++i) {
                        dq[i] += ds * kj[i];
                        dkj[i] += ds * q[i];
                    }
                }
            }
        }
        Mat<S> dln1(T, d);
        matmul_backward(a.ln1, b.qkv_w, dqkv, dln1, g.qkv_w, &g.qkv_b);
        Mat<S> dx_in = dres1;  // residual passthrough
        layernorm_backward(a.x_in, b.ln1_g, a.ln1_mean, a.ln1_rstd, dln1, dx_in, g.ln1_g,
                           g.ln1_b);
        dx = std::move(dx_in);
    }

    dropout_backward(ws.emb_mask, dx);
    for (int t = 0; t < T; ++t) {
        const S* dt = dx.row(t);
        S* dtok = grads.tok_emb.row(ids[t]);
        S* dpos = grads.pos_emb.row(t);
        for (int i = 0; i < d; ++i) {
            dtok[i] += dt[i];
            dpos[i] += dt[i];
        }
    }
}

template <typename S>
KvCache<S> Transformer<S>::make_cache() const {
    KvCache<S> c;
    c.len = 0;
    c.k.assign(cfg.n_layers, Mat<S>(cfg.max_seq_len, cfg.d_model));
    c.v.assign(cfg.n_layers, Mat<S>(cfg.max_seq_len, cfg.d_model));
    return c;
}

template <typename S>
Params<S> Transformer<S>::make_grads() const {
    Transformer<S> z = Transformer<S>::init(cfg);
    z.params.for_each([](const std::string&, Mat<S>& m, bool) { m.zero(); });
    return std::move(z.params);
}

template <typename S>
void Transformer<S>::forward_next(TokenId id, KvCache<S>& cache, std::vector<S>& lm_row) const {
    int t = cache.len;
    if (t >= cfg.max_seq_len) throw Error("generate: sequence exceeds max_seq_len");
    if (id < 0 || id >= cfg.vocab_size) {
        throw Error("generate: token id " + std::to_string(id) + " outside vocabulary");
    }
    int d = cfg.d_model, H = cfg.n_heads, hs = cfg.head_dim();

    std::vector<S> x(d), ln(d), qkv(3 * d), atty(d), proj(d), fc(cfg.d_ff), act(cfg.d_ff);
    std::vector<S> probs(t + 1);
    S mean, rstd;
    const S* te = params.tok_emb.row(id);
    const S* pe = params.pos_emb.row(t);
    for (int i = 0; i < d; ++i) x[i] = te[i] + pe[i];

    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& b = params.blocks[l];
        layernorm_row(x.data(), b.ln1_g.data.data(), b.ln1_b.data.data(), d, ln.data(), mean,
                      rstd);
        matvec(ln.data(), b.qkv_w, b.qkv_b, qkv.data());
        std::memcpy(cache.k[l].row(t), qkv.data() + d, sizeof(S) * d);
        std::memcpy(cache.v[l].row(t), qkv.data() + 2 * d, sizeof(S) * d);
        for (int h = 0; h < H; ++h) {
            attention_row(qkv.data() + h * hs, cache.k[l], cache.v[l], h * hs, hs, t,
                          probs.data(), atty.data() + h * hs);
        }
        matvec(atty.data(), b.attn_proj_w, b.attn_proj_b, proj.data());
        for (int i = 0; i < d; ++i) x[i] = x[i] + proj[i];

        layernorm_row(x.data(), b.ln2_g.data.data(), b.ln2_b.data.data(), d, ln.data(), mean,
                      rstd);
        matvec(ln.data(), b.mlp_fc_w, b.mlp_fc_b, fc.data());
        for (int i = 0; i < cfg.d_ff; ++i) act[i] = gelu_one(fc[i]);
        matvec(act.data(), b.mlp_proj_w, b.mlp_proj_b, proj.data());
        for (int i = 0; i < d; ++i) x[i] = x[i] + proj[i];
    }
    layernorm_row(x.data(), params.ln_f_g.data.data(), params.ln_f_b.data.data(), d, ln.data(),
                  mean, rstd);
    const Mat<S>& lm_w = cfg.tie_lm_head ? params.tok_emb : params.lm_head_w;
    lm_row.resize(cfg.vocab_size);
    Mat<S> no_bias;
    matvec(ln.data(), lm_w, no_bias, lm_row.data());
    cache.len = t + 1;
}

template <typename S>
int sample_from_logits(const std::vector<S>& logits, const DecodingConfig& dec, StreamRng& rng) {
    int V = static_cast<int>(logits.size());
    auto argmax = [&] {
        int best = 0;
        for (int i = 1; i < V; ++i) {
            if (logits[i] > logits[best]) best = i;
        }
        return best;
    };
    if (dec.mode == DecodeMode::Greedy || dec.temperature < 1e-6) return argmax();

    std::vector<int> order(V);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logits[a] > logits[b]; });

    std::vector<double> scaled(V);
    for (int i = 0; i < V; ++i) {
        scaled[i] = static_cast<double>(logits[order[i]]) / dec.temperature;
    }
    double m = scaled[0];
    std::vector<double> probs(V);
    double total = 0.0;
    for (int i = 0; i < V; ++i) {
        probs[i] = std::exp(scaled[i] - m);
        total += probs[i];
    }
    for (auto& p : probs) p /= total;

    int keep = V;
    if (dec.mode == DecodeMode::TopK) {
        keep = std::clamp(dec.top_k, 1, V);
    } else {  // TopP: smallest prefix with cumulative mass >= p
        double cum = 0.0;
        keep = 1;
        for (int i = 0; i < V; ++i) {
            cum += probs[i];
            if (cum >= dec.top_p) {
                keep = i + 1;
                break;
            }
            keep = i + 1;
        }
    }
    double mass = 0.0;
    for (int i = 0; i < keep; ++i) mass += probs[i];
    double r = rng.next_double() * mass;
    double cum = 0.0;
    for (int i = 0; i < keep; ++i) {
        cum += probs[i];
        if (r < cum) return order[i];
    }
    return order[keep - 1];
}

template <typename S>
std::vector<TokenId> Transformer<S>::generate(const std::vector<TokenId>& prompt,
                                              const DecodingConfig& dec) const {
    if (prompt.empty() || prompt.back() != SpecialTokens::response_marker) {
        throw Error("generate: prompt must end with the response marker");
    }
    if (static_cast<int>(prompt.size()) >= cfg.max_seq_len) {
        throw Error("generate: prompt length " + std::to_string(prompt.size()) +
                    " leaves no room within max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    if (dec.max_new_tokens < 1) throw Error("generate: max_new_tokens must be at least 1");

    StreamRng rng(derive_key(dec.seed, fnv1a64("decode")));
    KvCache<S> cache = make_cache();
    std::vector<S> row;
    for (TokenId id : prompt) forward_next(id, cache, row);

    int budget = std::min<int>(dec.max_new_tokens, cfg.max_seq_len - static_cast<int>(prompt.size()));
    std::vector<TokenId> out;
    for (int step = 0; step < budget; ++step) {
        int next = sample_from_logits(row, dec, rng);
        if (next == SpecialTokens::eos) break;
        out.push_back(next);
        if (step + 1 < budget) forward_next(next, cache, row);
    }
    return out;
}

template <typename S>
CeSum cross_entropy_sum(const Mat<S>& logits, const std::vector<TokenId>& labels) {
    if (static_cast<size_t>(logits.rows) != labels.size()) {
        throw Error("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(logits.rows) + " logit rows");
    }
    CeSum out;
    int V = logits.cols;
    for (int t = 0; t < logits.rows; ++t) {
        TokenId y = labels[t];
        if (y == kIgnoreLabel) continue;
        if (y < 0 || y >= V) {
            throw Error("cross entropy: label " + std::to_string(y) + " outside class range");
        }
        const S* row = logits.row(t);
        double m = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < V; ++i) m = std::max(m, static_cast<double>(row[i]));
        double sum = 0.0;
        for (int i = 0; i < V; ++i) sum += std::exp(static_cast<double>(row[i]) - m);
        out.sum += m + std::log(sum) - static_cast<double>(row[y]);
        out.count += 1;
    }
    return out;
}

template <typename S>
void cross_entropy_backward(const Mat<S>& logits, const std::vector<TokenId>& labels,
                            double scale, Mat<S>& dlogits) {
    int V = logits.cols;
    for (int t = 0; t < logits.rows; ++t) {
        TokenId y = labels[t];
        if (y == kIgnoreLabel) continue;
        const S* row = logits.row(t);
        S* drow = dlogits.row(t);
        double m = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < V; ++i) m = std::max(m, static_cast<double>(row[i]));
        double sum = 0.0;
        for (int i = 0; i < V; ++i) sum += std::exp(static_cast<double>(row[i]) - m);
        for (int i = 0; i < V; ++i) {
            double p = std::exp(static_cast<double>(row[i]) - m) / sum;
            double target = (i == y) ? 1.0 : 0.0;
            drow[i] += static_cast<S>(scale * (p - target));
        }
    }
}

LossBreakdown total_loss(CeSum lm, CeSum aux, double alpha) {
    if (lm.count == 0) throw Error("loss: no labeled language-model positions");
    LossBreakdown out;
    out.lm_count = lm.count;
    out.aux_count = aux.count;
    out.lm_loss = lm.sum / static_cast<double>(lm.count);
    out.aux_loss = aux.count > 0 ? aux.sum / static_cast<double>(aux.count) : 0.0;
    out.total = out.lm_loss + alpha * out.aux_loss;
    return out;
}

namespace {

constexpr char kCkptMagic[8] = {'a', 'u', 'x', 'c', 'k', 'p', 't', '1'};

json model_config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
                {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
                {"dropout", c.dropout},         {"aux_head", to_string(c.aux_head)},
                {"tie_lm_head", c.tie_lm_head}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.aux_head = aux_head_from_string(j.at("aux_head").get<std::string>());
    c.tie_lm_head = j.at("tie_lm_head").get<bool>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

void put_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& in, const std::string& path) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) {
        throw SchemaError("'" + path + "': truncated checkpoint");
    }
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

uint64_t hash_from_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

void save_checkpoint(const std::string& path, const Transformer<float>& model,
                     uint64_t vocab_hash, int64_t step) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    json header{{"format_version", 1},
                {"model", model_config_to_json(model.cfg)},
                {"vocab_hash", hash_hex(vocab_hash)},
                {"step", step}};
    std::string hs = header.dump();
    out.write(kCkptMagic, 8);
    put_u64(out, hs.size());
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    model.params.for_each([&](const std::string&, const Mat<float>& m, bool) {
        put_u64(out, m.size());
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.size() * sizeof(float)));
    });
    if (!out) throw IoError("write to '" + path + "' failed");
}

Transformer<float> load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0) {
        throw SchemaError("'" + path + "': not a checkpoint file");
    }
    uint64_t hlen = get_u64(in, path);
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), static_cast<std::streamsize>(hlen))) {
        throw SchemaError("'" + path + "': truncated checkpoint header");
    }
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::parse_error& e) {
        throw SchemaError("'" + path + "': bad checkpoint header: " + e.what());
    }
    int version = header.at("format_version").get<int>();
    if (version != 1) {
        throw SchemaError("'" + path + "': unsupported checkpoint format version " +
                          std::to_string(version));
    }
    CheckpointMeta m;
    m.format_version = version;
    m.model = model_config_from_json(header.at("model"));
    m.vocab_hash = hash_from_hex(header.at("vocab_hash").get<std::string>());
    m.step = header.at("step").get<int64_t>();

    Transformer<float> model = Transformer<float>::init(m.model);
    model.params.for_each([&](const std::string& name, Mat<float>& t, bool) {
        uint64_t n = get_u64(in, path);
        if (n != t.size()) {
            throw SchemaError("'" + path + "': tensor '" + name + "' has " + std::to_string(n) +
                              " values, expected " + std::to_string(t.size()));
        }
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(n * sizeof(float)))) {
            throw SchemaError("'" + path + "': truncated tensor '" + name + "'");
        }
    });
    if (meta) *meta = m;
    return model;
}

Transformer<double> widen(const Transformer<float>& m) {
    Transformer<double> out = Transformer<double>::init(m.cfg);
    std::vector<const Mat<float>*> src;
    m.params.for_each([&](const std::string&, const Mat<float>& t, bool) { src.push_back(&t); });
    size_t i = 0;
    out.params.for_each([&](const std::string&, Mat<double>& t, bool) {
        const Mat<float>& s = *src[i++];
        for (size_t j = 0; j < t.data.size(); ++j) t.data[j] = static_cast<double>(s.data[j]);
    });
    return out;
}

template class Transformer<float>;
template class Transformer<double>;
template CeSum cross_entropy_sum<float>(const Mat<float>&, const std::vector<TokenId>&);
template CeSum cross_entropy_sum<double>(const Mat<double>&, const std::vector<TokenId>&);
template void cross_entropy_backward<float>(const Mat<float>&, const std::vector<TokenId>&,
                                            double, Mat<float>&);
template void cross_entropy_backward<double>(const Mat<double>&, const std::vector<TokenId>&,
                                             double, Mat<double>&);
template int sample_from_logits<float>(const std::vector<float>&, const DecodingConfig&,
                                       StreamRng&);
template int sample_from_logits<double>(const std::vector<double>&, const DecodingConfig&,
                                        StreamRng&);

}  // namespace auxlm
