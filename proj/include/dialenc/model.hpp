#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dialenc/encoding.hpp"
#include "dialenc/error.hpp"
#include "dialenc/rng.hpp"
#include "dialenc/tensor.hpp"
#include "dialenc/vocab.hpp"

namespace dialenc {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 768;
    int n_blocks = 12;
    int n_heads = 12;
    int d_ff = 3072;
    int max_positions = 128;
    int max_turns = 32;
    int n_roles = 3;  // none / questioner / answerer
    double ln_eps = 1e-5;
    double init_std = 0.02;
    std::string pooler = "cnn";  // "cnn" or "cls"
    std::vector<int> kernel_widths = {5, 7, 9, 11, 15, 21};

    void validate() const {
        if (vocab_size <= Vocab::kNumReserved)
            throw ConfigError("vocab_size must exceed the reserved ids");
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw ConfigError("d_model must be a positive multiple of n_heads");
        if (n_blocks < 0 || d_ff <= 0 || max_positions < 2 || max_turns < 1)
            throw ConfigError("invalid encoder dimensions");
        if (ln_eps <= 0 || init_std <= 0) throw ConfigError("ln_eps and init_std must be positive");
        if (pooler != "cnn" && pooler != "cls")
            throw ConfigError("pooler must be \"cnn\" or \"cls\", got \"" + pooler + "\"");
        if (pooler == "cnn") {
            if (kernel_widths.empty()) throw ConfigError("cnn pooler needs at least one kernel");
            for (int k : kernel_widths)
                if (k < 1 || k % 2 == 0)
                    throw ConfigError("cnn kernel widths must be odd and positive, got " +
                                      std::to_string(k));
        }
    }

    bool operator==(const ModelConfig&) const = default;

    // Full-scale configuration from the reference setup.
    static ModelConfig base(int vocab = 50000) {
        ModelConfig c;
        c.vocab_size = vocab;
        return c;
    }

    // Desk-scale defaults used by tests and the synthetic-corpus runs.
    static ModelConfig tiny(int vocab) {
        ModelConfig c;
        c.vocab_size = vocab;
        c.d_model = 64;
        c.n_blocks = 2;
        c.n_heads = 2;
        c.d_ff = 256;
        return c;
    }

    // Smallest config that still exercises every code path; used by the
    // finite-difference gradient checks.
    static ModelConfig micro(int vocab) {
        ModelConfig c;
        c.vocab_size = vocab;
        c.d_model = 16;
        c.n_blocks = 1;
        c.n_heads = 2;
        c.d_ff = 32;
        return c;
    }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename S>
struct EncoderParams {
    ModelConfig cfg;

    Tensor<S> tok_emb;   // vocab x d
    Tensor<S> pos_emb;   // max_positions x d
    Tensor<S> role_emb;  // n_roles x d
    Tensor<S> turn_emb;  // (max_turns + 1) x d; row 0 is padding
    Tensor<S> emb_ln_g, emb_ln_b;

    struct Block {
        Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor<S> ln1_g, ln1_b;
        Tensor<S> w1, b1, w2, b2;
        Tensor<S> ln2_g, ln2_b;
    };
    std::vector<Block> blocks;

    std::vector<Tensor<S>> conv_w;  // per kernel width: K x d x d
    std::vector<Tensor<S>> conv_b;  // per kernel width: d

    // Weights drawn from a truncated normal; biases and the layer-norm shifts
    // start at zero, layer-norm gains at one. Rows that stand for "none"
    // (padding token, role 0, turn 0) start at zero so padding contributes
    // nothing before training.
    static EncoderParams init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        EncoderParams p;
        p.cfg = cfg;
        Rng rng(seed);
        const Dim d = cfg.d_model;
        auto weight = [&](Shape shape) { return Tensor<S>::randn(shape, cfg.init_std, rng, true); };
        auto zeros = [&](Shape shape) { return Tensor<S>::zeros(shape, true); };
        auto ones = [&](Shape shape) { return Tensor<S>::filled(shape, S(1), true); };

        p.tok_emb = weight({cfg.vocab_size, d});
        p.tok_emb.mat().row(Vocab::kPad).setZero();
        p.pos_emb = weight({cfg.max_positions, d});
        p.role_emb = weight({cfg.n_roles, d});
        p.role_emb.mat().row(0).setZero();
        p.turn_emb = weight({cfg.max_turns + 1, d});
        p.turn_emb.mat().row(0).setZero();
        p.emb_ln_g = ones({d});
        p.emb_ln_b = zeros({d});

        for (int i = 0; i < cfg.n_blocks; ++i) {
            Block b;
            b.wq = weight({d, d});
            b.bq = zeros({d});
            b.wk = weight({d, d});
            b.bk = zeros({d});
            b.wv = weight({d, d});
            b.bv = zeros({d});
            b.wo = weight({d, d});
            b.bo = zeros({d});
            b.ln1_g = ones({d});
            b.ln1_b = zeros({d});
            b.w1 = weight({d, cfg.d_ff});
            b.b1 = zeros({cfg.d_ff});
            b.w2 = weight({cfg.d_ff, d});
            b.b2 = zeros({d});
            b.ln2_g = ones({d});
            b.ln2_b = zeros({d});
            p.blocks.push_back(std::move(b));
        }

        if (cfg.pooler == "cnn") {
            for (int k : cfg.kernel_widths) {
                p.conv_w.push_back(weight({k, d, d}));
                p.conv_b.push_back(zeros({d}));
            }
        }
        return p;
    }

    // Canonical parameter order: embeddings, blocks in depth order, pooler
    // banks. Optimizer state, checkpoints, and initialization all follow it.
    void visit(const std::function<void(const std::string&, Tensor<S>&)>& fn) {
        fn("tok_emb", tok_emb);
        fn("pos_emb", pos_emb);
        fn("role_emb", role_emb);
        fn("turn_emb", turn_emb);
        fn("emb_ln_g", emb_ln_g);
        fn("emb_ln_b", emb_ln_b);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string at = "block" + std::to_string(i) + ".";
            Block& b = blocks[i];
            fn(at + "wq", b.wq);
            fn(at + "bq", b.bq);
            fn(at + "wk", b.wk);
            fn(at + "bk", b.bk);
            fn(at + "wv", b.wv);
            fn(at + "bv", b.bv);
            fn(at + "wo", b.wo);
            fn(at + "bo", b.bo);
            fn(at + "ln1_g", b.ln1_g);
            fn(at + "ln1_b", b.ln1_b);
            fn(at + "w1", b.w1);
            fn(at + "b1", b.b1);
            fn(at + "w2", b.w2);
            fn(at + "b2", b.b2);
            fn(at + "ln2_g", b.ln2_g);
            fn(at + "ln2_b", b.ln2_b);
        }
        for (size_t i = 0; i < conv_w.size(); ++i) {
            const std::string at = "conv" + std::to_string(i) + ".";
            fn(at + "w", conv_w[i]);
            fn(at + "b", conv_b[i]);
        }
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        visit([&](const std::string& name, Tensor<S>& t) { out.emplace_back(name, t); });
        return out;
    }

    // Independent copy: same values, fresh storage. Tensor handles share
    // their nodes on plain copies, so training a copied EncoderParams would
    // otherwise mutate the original in place.
    EncoderParams deep_copy() {
        EncoderParams c = *this;
        c.visit([](const std::string&, Tensor<S>& t) { t = t.clone(); });
        return c;
    }
};

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

// Four-channel fusion: token + position + role + turn embeddings, then a
// layer norm over the feature axis. Output is (B,N,d).
template <typename S>
Tensor<S> fuse_embeddings(EncoderParams<S>& p, const EncodedBatch& batch) {
    const Dim b = batch.batch, n = batch.seq;
    check_shape(n <= p.cfg.max_positions, "batch length exceeds the position table");
    auto tok = embedding_lookup(p.tok_emb, batch.token_ids, {b, n});
    auto pos = embedding_lookup(p.pos_emb, batch.position_ids, {b, n});
    auto role = embedding_lookup(p.role_emb, batch.role_ids, {b, n});
    auto turn = embedding_lookup(p.turn_emb, batch.turn_ids, {b, n});
    auto fused = add(add(tok, pos), add(role, turn));
    return layer_norm(fused, p.emb_ln_g, p.emb_ln_b, S(p.cfg.ln_eps));
}

namespace detail {

template <typename S>
Tensor<S> encoder_block(typename EncoderParams<S>::Block& blk, const Tensor<S>& x,
                        const EncodedBatch& batch, const ModelConfig& cfg) {
    const Dim B = batch.batch, N = batch.seq, d = cfg.d_model;
    const Dim dh = d / cfg.n_heads;
    const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));

    auto q = add_bias(matmul(x, blk.wq), blk.bq);
    auto k = add_bias(matmul(x, blk.wk), blk.bk);
    auto v = add_bias(matmul(x, blk.wv), blk.bv);

    std::vector<Tensor<S>> per_sample;
    per_sample.reserve(static_cast<size_t>(B));
    for (Dim b = 0; b < B; ++b) {
        const auto mask = batch.row_mask(static_cast<int>(b));
        auto qs = slice_rows(q, b * N, N);
        auto ks = slice_rows(k, b * N, N);
        auto vs = slice_rows(v, b * N, N);
        std::vector<Tensor<S>> heads;
        heads.reserve(static_cast<size_t>(cfg.n_heads));
        for (int h = 0; h < cfg.n_heads; ++h) {
            auto qh = slice_cols(qs, h * dh, dh);
            auto kh = slice_cols(ks, h * dh, dh);
            auto vh = slice_cols(vs, h * dh, dh);
            auto scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
            auto probs = softmax_rows(add_key_mask(scores, mask));
            heads.push_back(matmul(probs, vh));
        }
        per_sample.push_back(concat_cols(heads));
    }
    auto attn = add_bias(matmul(concat_rows(per_sample, {B, N, d}), blk.wo), blk.bo);
    auto x1 = layer_norm(add(x, attn), blk.ln1_g, blk.ln1_b, S(cfg.ln_eps));

    auto ff = add_bias(matmul(gelu(add_bias(matmul(x1, blk.w1), blk.b1)), blk.w2), blk.b2);
    return layer_norm(add(x1, ff), blk.ln2_g, blk.ln2_b, S(cfg.ln_eps));
}

}  // namespace detail

// Runs the fused embeddings through every encoder block; (B,N,d) in and out.
// With zero blocks this is the identity, which the tests rely on.
template <typename S>
Tensor<S> encode(EncoderParams<S>& p, const Tensor<S>& fused, const EncodedBatch& batch) {
    Tensor<S> x = fused;
    for (auto& blk : p.blocks) x = detail::encoder_block<S>(blk, x, batch, p.cfg);
    return x;
}

template <typename S>
Tensor<S> encode_batch(EncoderParams<S>& p, const EncodedBatch& batch) {
    return encode(p, fuse_embeddings(p, batch), batch);
}

// Convolutional pooler: padding rows are zeroed (so kernels never read
// leaked values), each bank convolves and max-pools over real positions
// only, and banks combine by elementwise max. Output is (B,d).
template <typename S>
Tensor<S> cnn_pool(EncoderParams<S>& p, const Tensor<S>& ctx, const EncodedBatch& batch) {
    if (p.conv_w.empty()) throw ConfigError("cnn_pool called without convolution banks");
    const Dim B = batch.batch, N = batch.seq;
    const S neg_inf = S(-1e30);
    std::vector<Tensor<S>> pooled;
    pooled.reserve(static_cast<size_t>(B));
    for (Dim b = 0; b < B; ++b) {
        const auto mask = batch.row_mask(static_cast<int>(b));
        bool any = false;
        for (uint8_t m : mask) any = any || m != 0;
        if (!any) throw ContractError("cnn_pool: sample " + std::to_string(b) + " is fully masked");
        auto xs = masked_fill_rows(slice_rows(ctx, b * N, N), mask, S(0));
        Tensor<S> best;
        for (size_t bank = 0; bank < p.conv_w.size(); ++bank) {
            auto y = conv1d_same(xs, p.conv_w[bank], p.conv_b[bank]);
            auto m = max_over_time(masked_fill_rows(y, mask, neg_inf));
            best = bank == 0 ? m : cwise_max(best, m);
        }
        pooled.push_back(best);
    }
    return stack_rows(pooled);
}

// Classification-token pooler: the contextual vector at position 0 of each
// sample. Requires batches encoded with the classification token.
template <typename S>
Tensor<S> cls_pool(const Tensor<S>& ctx, const EncodedBatch& batch) {
    const Dim B = batch.batch, N = batch.seq;
    std::vector<Dim> rows;
    for (Dim b = 0; b < B; ++b) {
        if (batch.token_ids[static_cast<size_t>(b * N)] != Vocab::kCls)
            throw ContractError("cls_pool: sample " + std::to_string(b) +
                                " does not start with the classification token");
        rows.push_back(b * N);
    }
    return gather_rows(ctx, rows);
}

template <typename S>
Tensor<S> pool(EncoderParams<S>& p, const Tensor<S>& ctx, const EncodedBatch& batch) {
    return p.cfg.pooler == "cnn" ? cnn_pool(p, ctx, batch) : cls_pool(ctx, batch);
}

}  // namespace dialenc
