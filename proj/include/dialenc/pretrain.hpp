#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialenc/checkpoint.hpp"
#include "dialenc/corruption.hpp"
#include "dialenc/error.hpp"
#include "dialenc/model.hpp"
#include "dialenc/rng.hpp"
#include "dialenc/tensor.hpp"

namespace dialenc {

// ---------------------------------------------------------------------------
// Self-supervised heads
// ---------------------------------------------------------------------------

// Trainable parameters that exist only during pre-training. The token decoder
// is tied to the transposed token-embedding table, so the only decoder
// parameter is its output bias; the two discrimination probes are logistic
// regressions over the pooled dialogue vector.
template <typename S>
struct PretrainHeads {
    Tensor<S> mlm_bias;        // vocab; shared by token- and utterance-level prediction
    Tensor<S> repl_w, repl_b;  // d x 1 and 1: replaced-utterance probe
    Tensor<S> turn_w, turn_b;  // d x 1 and 1: exchanged-turn probe

    static PretrainHeads init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(derive_seed(seed, 0, 1));  // decorrelated from the encoder draws
        PretrainHeads h;
        const Dim d = cfg.d_model;
        h.mlm_bias = Tensor<S>::zeros({cfg.vocab_size}, true);
        h.repl_w = Tensor<S>::randn({d, 1}, cfg.init_std, rng, true);
        h.repl_b = Tensor<S>::zeros({1}, true);
        h.turn_w = Tensor<S>::randn({d, 1}, cfg.init_std, rng, true);
        h.turn_b = Tensor<S>::zeros({1}, true);
        return h;
    }

    void visit(const std::function<void(const std::string&, Tensor<S>&)>& fn) {
        fn("head.mlm_bias", mlm_bias);
        fn("head.repl_w", repl_w);
        fn("head.repl_b", repl_b);
        fn("head.turn_w", turn_w);
        fn("head.turn_b", turn_b);
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        visit([&](const std::string& name, Tensor<S>& t) { out.emplace_back(name, t); });
        return out;
    }
};

// Everything the optimizer touches, in canonical order: encoder first, then
// the pre-training heads.
template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> pretrain_named_tensors(EncoderParams<S>& params,
                                                                      PretrainHeads<S>& heads) {
    auto named = params.named_tensors();
    for (auto& nt : heads.named_tensors()) named.push_back(nt);
    return named;
}

// ---------------------------------------------------------------------------
// Task losses
// ---------------------------------------------------------------------------

// Mean cross-entropy of the tied-decoder prediction at the listed
// (sample, position) targets. Serves both the token-level and the
// utterance-level masking task; an empty target set contributes exactly 0.
template <typename S>
Tensor<S> masked_token_loss(const Tensor<S>& contextual, const EncodedBatch& batch,
                            const std::vector<std::pair<int, int>>& positions,
                            const std::vector<int>& target_ids, const Tensor<S>& tok_emb,
                            const Tensor<S>& decoder_bias) {
    if (positions.size() != target_ids.size())
        throw ContractError("masked_token_loss: positions/targets length mismatch");
    if (positions.empty()) return Tensor<S>::scalar(S(0));
    std::vector<Dim> rows;
    rows.reserve(positions.size());
    for (auto [b, p] : positions) {
        if (b < 0 || b >= batch.batch || p < 0 || p >= batch.seq)
            throw ContractError("masked_token_loss: target outside the batch");
        if (!batch.mask[static_cast<size_t>(b * batch.seq + p)])
            throw ContractError("masked_token_loss: target at padded position " +
                                std::to_string(p) + " of sample " + std::to_string(b));
        rows.push_back(static_cast<Dim>(b) * batch.seq + p);
    }
    Tensor<S> u = gather_rows(contextual, rows);                      // M x d
    Tensor<S> logits = add_bias(matmul_nt(u, tok_emb), decoder_bias); // M x V
    return softmax_cross_entropy_rows(logits, target_ids);
}

// Mean binary cross-entropy of a logistic probe over pooled vectors of the
// participating samples. Zero participants contribute exactly 0.
template <typename S>
Tensor<S> disc_loss(const Tensor<S>& pooled, const std::vector<uint8_t>& labels,
                    const Tensor<S>& w, const Tensor<S>& b) {
    if (static_cast<size_t>(pooled.defined() ? pooled.view_rows() : 0) != labels.size())
        throw ContractError("disc_loss: label count does not match pooled rows");
    if (labels.empty()) return Tensor<S>::scalar(S(0));
    Tensor<S> logits = add_bias(matmul(pooled, w), b);  // B' x 1
    return bce_with_logits(logits, labels);
}

// In-batch response selection: row i of the score matrix ranks candidate i
// against all other candidates in the batch.
template <typename S>
Tensor<S> ressel_loss(const Tensor<S>& context_pooled, const Tensor<S>& candidate_pooled) {
    check_shape(context_pooled.rank() == 2 && candidate_pooled.rank() == 2,
                "ressel_loss: pooled inputs must be rank 2");
    const Dim bsz = context_pooled.dim(0);
    if (bsz < 2) throw DegenerateBatch("ressel_loss: needs at least 2 context/candidate pairs");
    check_shape(candidate_pooled.dim(0) == bsz && candidate_pooled.dim(1) == context_pooled.dim(1),
                "ressel_loss: context/candidate shape mismatch");
    Tensor<S> scores = matmul_nt(context_pooled, candidate_pooled);  // B x B
    std::vector<int> targets(static_cast<size_t>(bsz));
    std::iota(targets.begin(), targets.end(), 0);
    return softmax_cross_entropy_rows(scores, targets);
}

// ---------------------------------------------------------------------------
// Batch assembly and the combined loss
// ---------------------------------------------------------------------------

struct PretrainBatch {
    EncodedBatch corrupted;                // all samples, token-masked + structural probes
    std::vector<CorruptedSample> samples;  // per-sample targets, aligned with corrupted rows
    bool has_ressel = false;
    ResponseBatch responses;  // valid only when has_ressel
};

inline PretrainBatch assemble_pretrain_batch(const std::vector<Dialogue>& dialogues,
                                             const Vocab& vocab, const EncodingConfig& enc_cfg,
                                             const CorruptionPolicy& policy, int64_t step,
                                             int n_workers = 1) {
    if (dialogues.empty()) throw ContractError("assemble_pretrain_batch: empty batch");
    std::vector<EncodedDialogue> encoded;
    encoded.reserve(dialogues.size());
    for (const auto& d : dialogues) encoded.push_back(encode_dialogue(d, vocab, enc_cfg));

    PretrainBatch out;
    out.samples = corrupt_batch(encoded, policy, step, vocab.size(), n_workers);
    std::vector<EncodedDialogue> corrupted;
    corrupted.reserve(out.samples.size());
    for (const auto& s : out.samples) corrupted.push_back(s.enc);
    out.corrupted = pad_batch(corrupted);

    if (policy.ressel) {
        try {
            out.responses = build_response_batch(dialogues, vocab, enc_cfg);
            out.has_ressel = true;
        } catch (const DegenerateBatch&) {
            out.has_ressel = false;  // fewer than 2 answer-final dialogues: task sits out
        }
    }
    return out;
}

// Per-task loss values plus their sum. `total` always equals the sum of the
// five components in the accumulation precision; tasks with no participating
// samples contribute exactly 0.
struct SSLLossBundle {
    double mlm = 0, mum = 0, repl_disc = 0, turn_disc = 0, ressel = 0, total = 0;
};

template <typename S>
struct PretrainLoss {
    SSLLossBundle bundle;
    Tensor<S> total;  // scalar, differentiable
};

// Runs the shared encoder over the corrupted batch (plus two extra passes for
// response selection) and routes the outputs to the five heads. The policy's
// task flags gate the heads, so an ablated task contributes exactly 0 without
// touching the other four.
template <typename S>
PretrainLoss<S> total_pretrain_loss(EncoderParams<S>& params, PretrainHeads<S>& heads,
                                    const PretrainBatch& batch, const CorruptionPolicy& policy) {
    const auto& eb = batch.corrupted;
    if (static_cast<size_t>(eb.batch) != batch.samples.size())
        throw ContractError("total_pretrain_loss: sample metadata does not match the batch");
    Tensor<S> ctx = encode_batch(params, eb);

    std::vector<std::pair<int, int>> mlm_pos, mum_pos;
    std::vector<int> mlm_tgt, mum_tgt;
    std::vector<Dim> repl_rows, turn_rows;
    std::vector<uint8_t> repl_labels, turn_labels;
    for (size_t i = 0; i < batch.samples.size(); ++i) {
        const auto& s = batch.samples[i];
        for (size_t k = 0; k < s.mlm_positions.size(); ++k) {
            mlm_pos.emplace_back(static_cast<int>(i), s.mlm_positions[k]);
            mlm_tgt.push_back(s.mlm_targets[k]);
        }
        for (size_t k = 0; k < s.mum_positions.size(); ++k) {
            mum_pos.emplace_back(static_cast<int>(i), s.mum_positions[k]);
            mum_tgt.push_back(s.mum_targets[k]);
        }
        if (s.task == StructuralTask::Replacement && policy.repl_disc) {
            repl_rows.push_back(static_cast<Dim>(i));
            repl_labels.push_back(s.disc_label);
        }
        if (s.task == StructuralTask::TurnSwap && policy.turn_disc) {
            turn_rows.push_back(static_cast<Dim>(i));
            turn_labels.push_back(s.disc_label);
        }
    }

    Tensor<S> zero = Tensor<S>::scalar(S(0));
    Tensor<S> mlm = policy.mlm && !mlm_pos.empty()
                        ? masked_token_loss(ctx, eb, mlm_pos, mlm_tgt, params.tok_emb,
                                            heads.mlm_bias)
                        : zero;
    Tensor<S> mum = policy.mum && !mum_pos.empty()
                        ? masked_token_loss(ctx, eb, mum_pos, mum_tgt, params.tok_emb,
                                            heads.mlm_bias)
                        : zero;

    Tensor<S> repl = zero, turn = zero;
    if (!repl_rows.empty() || !turn_rows.empty()) {
        Tensor<S> pooled = pool(params, ctx, eb);
        if (!repl_rows.empty())
            repl = disc_loss(gather_rows(pooled, repl_rows), repl_labels, heads.repl_w,
                             heads.repl_b);
        if (!turn_rows.empty())
            turn = disc_loss(gather_rows(pooled, turn_rows), turn_labels, heads.turn_w,
                             heads.turn_b);
    }

    Tensor<S> ressel = zero;
    if (policy.ressel && batch.has_ressel && batch.responses.size() >= 2) {
        Tensor<S> cp = pool(params, encode_batch(params, batch.responses.context),
                            batch.responses.context);
        Tensor<S> ap = pool(params, encode_batch(params, batch.responses.candidate),
                            batch.responses.candidate);
        ressel = ressel_loss(cp, ap);
    }

    PretrainLoss<S> out;
    out.total = add(add(add(add(mlm, mum), repl), turn), ressel);
    out.bundle.mlm = static_cast<double>(mlm.item());
    out.bundle.mum = static_cast<double>(mum.item());
    out.bundle.repl_disc = static_cast<double>(repl.item());
    out.bundle.turn_disc = static_cast<double>(turn.item());
    out.bundle.ressel = static_cast<double>(ressel.item());
    out.bundle.total = static_cast<double>(out.total.item());
    return out;
}

// ---------------------------------------------------------------------------
// LAMB optimizer
// ---------------------------------------------------------------------------

// Layer-wise adaptive moments: Adam-style bias-corrected moments, an update
// direction with decoupled weight decay, and a per-tensor trust ratio that
// rescales the step to the parameter's own norm.
template <typename S>
struct LambState {
    S beta1 = S(0.9), beta2 = S(0.999);
    S eps = S(1e-6);
    S weight_decay = S(0.01);
    int64_t step = 0;
    // Aligned with the named-tensor list: (name, (first moment, second moment)).
    std::vector<std::pair<std::string, std::pair<typename Tensor<S>::Vec, typename Tensor<S>::Vec>>>
        moments;

    static LambState init(const std::vector<std::pair<std::string, Tensor<S>>>& named) {
        using Vec = typename Tensor<S>::Vec;
        LambState st;
        st.moments.reserve(named.size());
        for (const auto& [name, t] : named)
            st.moments.emplace_back(name, std::make_pair(Vec(Vec::Zero(t.numel())),
                                                         Vec(Vec::Zero(t.numel()))));
        return st;
    }
};

// One optimizer step over every named tensor. Gradients must be populated;
// any NaN aborts before a single parameter moves.
template <typename S>
void lamb_step(std::vector<std::pair<std::string, Tensor<S>>>& named, LambState<S>& state, S lr) {
    if (named.size() != state.moments.size())
        throw ContractError("lamb_step: optimizer state does not match the parameter list");
    for (size_t i = 0; i < named.size(); ++i) {
        auto& [name, t] = named[i];
        if (name != state.moments[i].first)
            throw ContractError("lamb_step: parameter order mismatch at \"" + name + "\"");
        if (!t.has_grad()) throw ContractError("lamb_step: gradient missing for \"" + name + "\"");
        if (t.grad().hasNaN()) throw NumericError("lamb_step: NaN gradient in \"" + name + "\"");
    }

    const int64_t t_step = state.step + 1;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta1),
                                                 static_cast<double>(t_step)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta2),
                                                 static_cast<double>(t_step)));
    using Vec = typename Tensor<S>::Vec;
    for (size_t i = 0; i < named.size(); ++i) {
        auto& p = named[i].second;
        auto& [m, v] = state.moments[i].second;
        const Vec& g = p.grad();
        m = state.beta1 * m + (S(1) - state.beta1) * g;
        v = state.beta2 * v + (S(1) - state.beta2) * g.cwiseProduct(g);
        Vec r = ((m / bc1).array() / ((v / bc2).array().sqrt() + state.eps)).matrix() +
                state.weight_decay * p.value();
        S p_norm = p.value().norm();
        S r_norm = r.norm();
        S trust = (p_norm > S(0) && r_norm > S(0)) ? p_norm / r_norm : S(1);
        p.value() -= (lr * trust) * r;
    }
    state.step = t_step;
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

// Linear warm-up to the peak rate, then linear decay to zero.
struct LrSchedule {
    double peak = 1e-4;
    int64_t warmup_steps = 10000;
    int64_t total_steps = 1000000;

    void validate() const {
        if (peak <= 0 || warmup_steps < 1 || total_steps <= warmup_steps)
            throw ConfigError("lr schedule needs peak > 0 and total_steps > warmup_steps >= 1");
    }
};

inline double lr_at(int64_t step, const LrSchedule& s) {
    s.validate();
    if (step <= 0) return 0.0;
    if (step <= s.warmup_steps)
        return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    if (step >= s.total_steps) return 0.0;
    return s.peak * static_cast<double>(s.total_steps - step) /
           static_cast<double>(s.total_steps - s.warmup_steps);
}

// ---------------------------------------------------------------------------
// Pre-training driver
// ---------------------------------------------------------------------------

struct PretrainConfig {
    int epochs = 1;
    int batch_size = 16;
    bool shuffle = true;  // false: batches follow corpus order every epoch
    LrSchedule schedule;
    EncodingConfig encoding;
    int n_workers = 1;
    std::string checkpoint_dir;  // when set: one checkpoint per finished epoch
    std::string history_path;    // when set: one JSON object per step
};

struct StepRecord {
    int64_t step = 0;
    double lr = 0;
    SSLLossBundle losses;
};

inline nlohmann::json step_record_json(const StepRecord& r) {
    return {{"step", r.step},
            {"lr", r.lr},
            {"mlm", r.losses.mlm},
            {"mum", r.losses.mum},
            {"repl_disc", r.losses.repl_disc},
            {"turn_disc", r.losses.turn_disc},
            {"ressel", r.losses.ressel},
            {"total", r.losses.total}};
}

template <typename S>
void save_pretrain_checkpoint(const std::string& path, EncoderParams<S>& params,
                              PretrainHeads<S>& heads, const LambState<S>& state,
                              std::map<std::string, std::string> metadata = {}) {
    CheckpointData<S> data;
    data.config = params.cfg;
    data.metadata = std::move(metadata);
    data.tensors = pretrain_named_tensors(params, heads);
    data.has_optimizer = true;
    data.optimizer_step = state.step;
    for (const auto& [name, mv] : state.moments) {
        std::vector<S> m(mv.first.data(), mv.first.data() + mv.first.size());
        std::vector<S> v(mv.second.data(), mv.second.data() + mv.second.size());
        data.moments.emplace_back(name, std::make_pair(std::move(m), std::move(v)));
    }
    save_checkpoint(path, data);
}

// Restores parameters, heads, and optimizer state; returns the checkpoint
// metadata (e.g. the finished-epoch counter).
template <typename S>
std::map<std::string, std::string> load_pretrain_checkpoint(const std::string& path,
                                                            EncoderParams<S>& params,
                                                            PretrainHeads<S>& heads,
                                                            LambState<S>& state) {
    CheckpointData<S> data = load_checkpoint<S>(path);
    auto named = pretrain_named_tensors(params, heads);
    apply_checkpoint(data, params.cfg, named);
    if (!data.has_optimizer)
        throw DataError("checkpoint \"" + path + "\" carries no optimizer state");
    state = LambState<S>::init(named);
    state.step = data.optimizer_step;
    if (data.moments.size() != state.moments.size())
        throw DataError("optimizer state in \"" + path + "\" does not match the parameter list");
    for (size_t i = 0; i < data.moments.size(); ++i) {
        const auto& [name, mv] = data.moments[i];
        if (name != state.moments[i].first)
            throw DataError("optimizer state order mismatch at \"" + name + "\"");
        if (mv.first.size() != static_cast<size_t>(state.moments[i].second.first.size()))
            throw DataError("optimizer moment size mismatch at \"" + name + "\"");
        using Vec = typename Tensor<S>::Vec;
        state.moments[i].second.first =
            Eigen::Map<const Vec>(mv.first.data(), static_cast<Dim>(mv.first.size()));
        state.moments[i].second.second =
            Eigen::Map<const Vec>(mv.second.data(), static_cast<Dim>(mv.second.size()));
    }
    return data.metadata;
}

// Epoch/batch loop: shuffle -> corrupt -> forward -> backward -> LAMB step.
// The epoch shuffle depends only on (seed, epoch) and the corruption only on
// (seed, global step, sample index), so a run resumed from a checkpoint
// continues bit-exactly. `start_epoch` is the number of epochs already
// finished by the checkpoint being resumed.
template <typename S>
std::vector<StepRecord> pretrain_loop(EncoderParams<S>& params, PretrainHeads<S>& heads,
                                      LambState<S>& state, const std::vector<Dialogue>& corpus,
                                      const Vocab& vocab, const CorruptionPolicy& policy,
                                      const PretrainConfig& cfg, int start_epoch = 0) {
    if (corpus.size() < 2) throw DataError("pre-training needs at least 2 dialogues");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
    cfg.schedule.validate();

    auto named = pretrain_named_tensors(params, heads);
    std::ofstream history_file;
    if (!cfg.history_path.empty()) {
        history_file.open(cfg.history_path, std::ios::trunc);
        if (!history_file) throw IoError("cannot open loss history \"" + cfg.history_path + "\"");
    }

    std::vector<StepRecord> history;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(corpus.size());
        std::iota(order.begin(), order.end(), 0);
        if (cfg.shuffle) {
            Rng shuffle_rng(derive_seed(policy.seed, static_cast<uint64_t>(epoch), 0x9e));
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1],
                          order[static_cast<size_t>(shuffle_rng.uniform_int(static_cast<int>(i)))]);
        }

        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            std::vector<Dialogue> batch_dialogues;
            batch_dialogues.reserve(end - begin);
            for (size_t k = begin; k < end; ++k)
                batch_dialogues.push_back(corpus[order[k]]);

            PretrainBatch batch = assemble_pretrain_batch(batch_dialogues, vocab, cfg.encoding,
                                                          policy, state.step, cfg.n_workers);
            for (auto& [name, t] : named) t.zero_grad();
            PretrainLoss<S> loss;
            {
                GradTape<S> tape;
                loss = total_pretrain_loss(params, heads, batch, policy);
                tape.backward(loss.total);
            }
            for (auto& [name, t] : named) t.ensure_grad();

            double lr = lr_at(state.step + 1, cfg.schedule);
            lamb_step(named, state, static_cast<S>(lr));

            StepRecord rec{state.step, lr, loss.bundle};
            if (history_file.is_open()) {
                history_file << step_record_json(rec).dump() << "\n";
                if (!history_file) throw IoError("failed writing \"" + cfg.history_path + "\"");
            }
            history.push_back(rec);
        }

        if (!cfg.checkpoint_dir.empty()) {
            std::map<std::string, std::string> meta{
                {"phase", "pretrain"},
                {"epochs_finished", std::to_string(epoch + 1)},
                {"seed", std::to_string(policy.seed)}};
            save_pretrain_checkpoint(cfg.checkpoint_dir + "/epoch_" + std::to_string(epoch + 1) +
                                         ".ckpt",
                                     params, heads, state, std::move(meta));
        }
    }
    if (history_file.is_open()) history_file.flush();
    return history;
}

}  // namespace dialenc
