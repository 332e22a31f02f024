#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "auxlm/corruption.hpp"
#include "auxlm/errors.hpp"
#include "auxlm/rng.hpp"
#include "auxlm/tokenizer.hpp"

namespace auxlm {

enum class AuxHead : uint8_t { None, Binary, Recovery };

const char* to_string(AuxHead h);
AuxHead aux_head_from_string(const std::string& s);
AuxHead aux_head_for(AuxTask task);

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int max_seq_len = 256;
    double dropout = 0.0;
    AuxHead aux_head = AuxHead::None;
    bool tie_lm_head = true;
    uint64_t seed = 0;

    int head_dim() const { return d_model / n_heads; }
    int aux_classes() const {
        return aux_head == AuxHead::None ? 0 : (aux_head == AuxHead::Binary ? 2 : vocab_size);
    }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Row-major matrix; a vector is a 1 x n matrix.
template <typename S>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<S> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, S(0)) {}

    S* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const S* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    S& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    S at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return data.size(); }
    void zero() { std::fill(data.begin(), data.end(), S(0)); }
    bool operator==(const Mat&) const = default;
};

// Weights are stored [out, in]: y = W x + b applied to row-vector activations.
template <typename S>
struct Params {
    struct Block {
        Mat<S> ln1_g, ln1_b;
        Mat<S> qkv_w, qkv_b;      // [3d, d], [1, 3d]
        Mat<S> attn_proj_w, attn_proj_b;
        Mat<S> ln2_g, ln2_b;
        Mat<S> mlp_fc_w, mlp_fc_b;    // [ff, d], [1, ff]
        Mat<S> mlp_proj_w, mlp_proj_b;  // [d, ff], [1, d]

        bool operator==(const Block&) const = default;
    };

    Mat<S> tok_emb;  // [V, d]
    Mat<S> pos_emb;  // [max_seq_len, d]
    std::vector<Block> blocks;
    Mat<S> ln_f_g, ln_f_b;
    Mat<S> lm_head_w;   // [V, d]; empty when tied
    Mat<S> aux_head_w;  // [A, d]; empty when aux_head == None
    Mat<S> aux_head_b;  // [1, A]

    // Visits every tensor in the fixed serialization order.
    // f(name, tensor, decay) — decay marks weight-decayed tensors.
    template <typename F>
    void for_each(F&& f) {
        f("tok_emb", tok_emb, true);
        f("pos_emb", pos_emb, true);
        for (size_t l = 0; l < blocks.size(); ++l) {
            auto& b = blocks[l];
            std::string p = "layer" + std::to_string(l) + ".";
            f(p + "ln1_g", b.ln1_g, false);
            f(p + "ln1_b", b.ln1_b, false);
            f(p + "qkv_w", b.qkv_w, true);
            f(p + "qkv_b", b.qkv_b, false);
            f(p + "attn_proj_w", b.attn_proj_w, true);
            f(p + "attn_proj_b", b.attn_proj_b, false);
            f(p + "ln2_g", b.ln2_g, false);
            f(p + "ln2_b", b.ln2_b, false);
            f(p + "mlp_fc_w", b.mlp_fc_w, true);
            f(p + "mlp_fc_b", b.mlp_fc_b, false);
            f(p + "mlp_proj_w", b.mlp_proj_w, true);
            f(p + "mlp_proj_b", b.mlp_proj_b, false);
        }
        f("ln_f_g", ln_f_g, false);
        f("ln_f_b", ln_f_b, false);
        if (lm_head_w.size() > 0) f("lm_head_w", lm_head_w, true);
        if (aux_head_w.size() > 0) {
            f("aux_head_w", aux_head_w, true);
            f("aux_head_b", aux_head_b, false);
        }
    }
    template <typename F>
    void for_each(F&& f) const {
        const_cast<Params*>(this)->for_each([&](const std::string& n, const Mat<S>& m, bool d) {
            f(n, m, d);
        });
    }

    size_t count() const {
        size_t n = 0;
        for_each([&](const std::string&, const Mat<S>& m, bool) { n += m.size(); });
        return n;
    }
    bool operator==(const Params&) const = default;
};

// Per-sequence activations kept for backprop; resized on every forward.
template <typename S>
struct Workspace {
    int seq_len = 0;
    Mat<S> emb, emb_mask;
    struct BlockActs {
        Mat<S> x_in;                 // residual-stream input
        Mat<S> ln1, qkv, probs, atty, attn_proj, attn_mask, res1;
        Mat<S> ln2, fc, act, mlp_proj, mlp_mask;
        std::vector<S> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
    };
    std::vector<BlockActs> blocks;
    Mat<S> x_final, ln_f;
    std::vector<S> ln_f_mean, ln_f_rstd;
    Mat<S> lm_logits;   // [T, V]
    Mat<S> aux_logits;  // [T, A]; zero-sized when aux_head == None
};

// Incremental generation cache: per-layer keys/values for decoded positions.
template <typename S>
struct KvCache {
    int len = 0;
    std::vector<Mat<S>> k;  // per layer [max_seq_len, d]
    std::vector<Mat<S>> v;
};

struct CeSum {
    double sum = 0.0;    // total NLL in nats
    int64_t count = 0;   // contributing positions
};

// Softmax cross-entropy summed over rows with label != kIgnoreLabel;
// accumulation in 64-bit regardless of S.
template <typename S>
CeSum cross_entropy_sum(const Mat<S>& logits, const std::vector<TokenId>& labels);

// dlogits += scale * (softmax(logits_row) - onehot(label)) on labeled rows.
template <typename S>
void cross_entropy_backward(const Mat<S>& logits, const std::vector<TokenId>& labels,
                            double scale, Mat<S>& dlogits);

struct LossBreakdown {
    double lm_loss = 0.0;
    double aux_loss = 0.0;
    double total = 0.0;  // always lm_loss + alpha * aux_loss, one expression
    int64_t lm_count = 0;
    int64_t aux_count = 0;
};

LossBreakdown total_loss(CeSum lm, CeSum aux, double alpha);

enum class DecodeMode : uint8_t { Greedy, TopK, TopP };

struct DecodingConfig {
    DecodeMode mode = DecodeMode::Greedy;
    int top_k = 40;
    double top_p = 0.9;
    double temperature = 1.0;
    int max_new_tokens = 48;
    uint64_t seed = 0;
};

DecodeMode decode_mode_from_string(const std::string& s);
const char* to_string(DecodeMode m);

template <typename S>
class Transformer {
  public:
    ModelConfig cfg;
    Params<S> params;

    static Transformer init(const ModelConfig& cfg);

    // Full forward over ids; activations land in ws. Dropout only when
    // train_mode with a non-null rng.
    void forward(const std::vector<TokenId>& ids, Workspace<S>& ws, bool train_mode = false,
                 StreamRng* dropout_rng = nullptr) const;

    // Accumulates parameter gradients for d(total)/d(logits) seeds already
    // placed in dlm_logits / daux_logits (daux ignored when no aux head).
    void backward(const std::vector<TokenId>& ids, const Workspace<S>& ws,
                  const Mat<S>& dlm_logits, const Mat<S>& daux_logits, Params<S>& grads) const;

    // One incremental step: append id at position cache.len, return the
    // lm-logits row for it. Bit-identical to the same row of forward().
    void forward_next(TokenId id, KvCache<S>& cache, std::vector<S>& lm_row) const;

    KvCache<S> make_cache() const;
    Params<S> make_grads() const;

    // Prompt must end with the <response> marker. Returns generated ids
    // (without the prompt and without the terminating <eos>).
    std::vector<TokenId> generate(const std::vector<TokenId>& prompt, const DecodingConfig& dec) const;
};

// Sampling over one logits row; exposed for tests.
template <typename S>
int sample_from_logits(const std::vector<S>& logits, const DecodingConfig& dec, StreamRng& rng);

struct CheckpointMeta {
    int format_version = 1;
    ModelConfig model;
    uint64_t vocab_hash = 0;
    int64_t step = 0;
};

void save_checkpoint(const std::string& path, const Transformer<float>& model,
                     uint64_t vocab_hash, int64_t step);
Transformer<float> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

// Double-precision copy for finite-difference work.
Transformer<double> widen(const Transformer<float>& m);

}  // namespace auxlm
