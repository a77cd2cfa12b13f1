// Acceptance gate: one check per release criterion, one pass/fail line each.
// Every tolerance is pinned here, next to the check that uses it. The binary
// exits non-zero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "dialenc/corruption.hpp"
#include "dialenc/dialogue.hpp"
#include "dialenc/encoding.hpp"
#include "dialenc/error.hpp"
#include "dialenc/finetune.hpp"
#include "dialenc/grad_check.hpp"
#include "dialenc/model.hpp"
#include "dialenc/pretrain.hpp"
#include "dialenc/synthetic.hpp"
#include "dialenc/vocab.hpp"
#include "oracles.hpp"

using namespace dialenc;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Pinned tolerances and limits
// ---------------------------------------------------------------------------
constexpr double kGradTol = 1e-4;          // 1: max relative gradient error
constexpr double kGradSecondsMax = 120.0;  // 1: wall-clock limit
constexpr double kAnchorTol = 1e-6;        // 2: analytic loss anchors
constexpr int kCorruptionSeeds = 1000;     // 3: seeds per invariant
constexpr double kReplFreqTol = 0.03;      // 3: replacement frequency 0.5 +/- this
constexpr double kOverfitRatioMax = 0.20;  // 4: final/initial total loss
constexpr double kOverfitSecondsMax = 300.0;  // 4: wall-clock limit
constexpr double kIntentAccMin = 0.95;     // 5: intent test accuracy
constexpr double kNerF1Min = 0.90;         // 5: NER span macro-F1
constexpr double kPretrainSlack = 0.01;    // 5: pretrained >= scratch - this
constexpr int kRetrievalB = 16;            // 6: in-batch retrieval size
constexpr int kRetrievalMinHits = 3;       // 6: >= 3x chance at B=16
constexpr int kOracleInstances = 100;      // 7: randomized instances per op
constexpr double kConvTol = 1e-10;         // 7: conv1d vs oracle, max abs
constexpr double kCeTol = 1e-10;           // 7: softmax CE vs oracle, abs
constexpr double kLambTol = 1e-12;         // 7: LAMB step vs oracle, max abs

using Scalar = double;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::vector<std::string> texts_of(const std::vector<Dialogue>& corpus) {
    std::vector<std::string> t;
    for (const auto& d : corpus)
        for (const auto& u : d.utterances) t.push_back(u.text);
    return t;
}

std::vector<Dialogue> answer_final_dialogues(const std::vector<Dialogue>& corpus, size_t want) {
    std::vector<Dialogue> out;
    for (const auto& d : corpus) {
        if (d.utterances.size() % 2 == 0) out.push_back(d);  // strict alternation: even = ends A
        if (out.size() == want) break;
    }
    if (out.size() < want) throw DataError("acceptance: not enough answer-final dialogues");
    return out;
}

bool same_values(Tensor<Scalar>& a, Tensor<Scalar>& b) {
    return a.shape() == b.shape() && (a.value().array() == b.value().array()).all();
}

bool params_identical(EncoderParams<Scalar>& a, EncoderParams<Scalar>& b) {
    auto na = a.named_tensors(), nb = b.named_tensors();
    if (na.size() != nb.size()) return false;
    for (size_t i = 0; i < na.size(); ++i)
        if (!same_values(na[i].second, nb[i].second)) return false;
    return true;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient soundness of the full five-task loss
// ---------------------------------------------------------------------------
Outcome criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();

    CorpusSpec cs;
    cs.n_dialogues = 24;
    cs.vocab_pool = 80;
    cs.seed = 12;
    const auto corpus = generate_corpus(cs);
    const auto batch_dialogues = answer_final_dialogues(corpus, 4);
    const Vocab vocab = Vocab::train_bpe(texts_of(corpus), 120);

    ModelConfig cfg = ModelConfig::micro(vocab.size());  // d=16, 1 block
    cfg.max_positions = 24;
    EncodingConfig enc;
    enc.max_positions = 24;
    EncoderParams<Scalar> params = EncoderParams<Scalar>::init(cfg, 12);
    PretrainHeads<Scalar> heads = PretrainHeads<Scalar>::init(cfg, 12);
    auto named = pretrain_named_tensors(params, heads);

    CorruptionPolicy policy;
    policy.seed = 12;
    const PretrainBatch pb = assemble_pretrain_batch(batch_dialogues, vocab, enc, policy, 0);
    if (!pb.has_ressel) throw ContractError("acceptance: expected a live response-selection task");

    const auto loss_fn = [&]() { return total_pretrain_loss(params, heads, pb, policy).total; };
    const GradCheckReport rep = grad_check<Scalar>(named, loss_fn, 1e-5, 200, 12);

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Outcome o;
    o.pass = rep.max_rel_err < kGradTol && secs < kGradSecondsMax;
    o.detail = fmt("max rel err %.2e < %.0e (worst %s), N=%d, %zu coords, %.1fs < %.0fs",
                   rep.max_rel_err, kGradTol, rep.worst_param.c_str(), pb.corrupted.seq,
                   rep.coords_checked, secs, kGradSecondsMax);
    return o;
}

// ---------------------------------------------------------------------------
// 2. Analytic loss anchors with zero-initialized heads
// ---------------------------------------------------------------------------
Outcome criterion_anchors() {
    const Dim d = 16;
    Rng rng(31);
    Tensor<Scalar> pooled = Tensor<Scalar>::randn({3, d}, 1.0, rng, false);

    const double cls102 =
        classification_loss(pooled, Tensor<Scalar>::zeros({d, 102}, false), {0, 57, 101}).item();
    const double cls5 =
        classification_loss(pooled, Tensor<Scalar>::zeros({d, 5}, false), {4, 0, 2}).item();

    // A real encoded batch supervises every content position with some tag.
    CorpusSpec cs;
    cs.n_dialogues = 2;
    cs.vocab_pool = 80;
    cs.seed = 31;
    const auto corpus = generate_corpus(cs);
    const Vocab vocab = Vocab::train_bpe(texts_of(corpus), 100);
    ModelConfig cfg = ModelConfig::micro(vocab.size());
    EncoderParams<Scalar> params = EncoderParams<Scalar>::init(cfg, 31);
    const EncodedDialogue e0 = encode_dialogue(corpus[0], vocab, EncodingConfig{});
    const EncodedBatch eb = pad_batch({e0});
    std::vector<std::vector<int>> tags(1);
    tags[0].assign(static_cast<size_t>(e0.length()), kIgnoreTag);
    for (int p = 0; p < e0.length(); ++p)
        if (!e0.origins[static_cast<size_t>(p)].is_tag) tags[0][static_cast<size_t>(p)] = 0;
    Tensor<Scalar> ctx = encode_batch(params, eb);
    const double ner57 = ner_loss(ctx, Tensor<Scalar>::zeros({cfg.d_model, 57}, false), eb, tags)
                             .loss.item();

    const double disc2 = disc_loss(pooled, std::vector<uint8_t>{1, 0, 1},
                                   Tensor<Scalar>::zeros({d, 1}, false),
                                   Tensor<Scalar>::zeros({1}, false))
                             .item();
    const double res16 = ressel_loss(Tensor<Scalar>::zeros({16, d}, false),
                                     Tensor<Scalar>::zeros({16, d}, false))
                             .item();
    const double res4 = ressel_loss(Tensor<Scalar>::zeros({4, d}, false),
                                    Tensor<Scalar>::zeros({4, d}, false))
                            .item();

    const double errs[] = {std::abs(cls102 - std::log(102.0)), std::abs(cls5 - std::log(5.0)),
                           std::abs(ner57 - std::log(57.0)),   std::abs(disc2 - std::log(2.0)),
                           std::abs(res16 - std::log(16.0)),   std::abs(res4 - std::log(4.0))};
    const double worst = *std::max_element(std::begin(errs), std::end(errs));

    Outcome o;
    o.pass = worst < kAnchorTol;
    o.detail = fmt("ln102/ln5/ln57/ln2/lnB all hit, worst abs err %.2e < %.0e", worst, kAnchorTol);
    return o;
}

// ---------------------------------------------------------------------------
// 3. Corruption invariants over 1,000 seeds each
// ---------------------------------------------------------------------------
Outcome criterion_corruption() {
    CorpusSpec cs;
    cs.n_dialogues = 8;
    cs.vocab_pool = 80;
    cs.seed = 91;
    const auto corpus = generate_corpus(cs);
    const Vocab vocab = Vocab::train_bpe(texts_of(corpus), 150);
    const EncodingConfig enc;
    std::vector<EncodedDialogue> encoded;
    for (const auto& d : corpus) encoded.push_back(encode_dialogue(d, vocab, enc));

    // (a) exchanged-turn probe keeps the turn-id row bit-identical
    for (int s = 0; s < kCorruptionSeeds; ++s) {
        EncodedDialogue e = encoded[static_cast<size_t>(s) % encoded.size()];
        Rng rng(derive_seed(9001, static_cast<uint64_t>(s), 0));
        apply_turn_swap(e, rng, 0.5);
        if (e.turn_ids != encoded[static_cast<size_t>(s) % encoded.size()].turn_ids)
            return {false, fmt("turn-id row changed under the exchange probe (seed %d)", s)};
    }

    // (b) replacement probe keeps role/turn rows; frequency 0.5 +/- tol
    long replaced = 0;
    for (int s = 0; s < kCorruptionSeeds; ++s) {
        const EncodedDialogue& orig = encoded[static_cast<size_t>(s) % encoded.size()];
        const EncodedDialogue& donor = encoded[(static_cast<size_t>(s) + 1) % encoded.size()];
        EncodedDialogue e = orig;
        Rng rng(derive_seed(9002, static_cast<uint64_t>(s), 0));
        replaced += apply_replacement(e, donor, rng, 0.5);
        if (e.role_ids != orig.role_ids || e.turn_ids != orig.turn_ids)
            return {false, fmt("role/turn rows changed under the replacement probe (seed %d)", s)};
    }
    const double freq = static_cast<double>(replaced) / kCorruptionSeeds;
    if (std::abs(freq - 0.5) > kReplFreqTol)
        return {false, fmt("replacement frequency %.3f outside 0.5 +/- %.2f", freq, kReplFreqTol)};

    // (c) utterance masking covers every content token of exactly one
    //     utterance and never a role tag
    for (int s = 0; s < kCorruptionSeeds; ++s) {
        const EncodedDialogue& orig = encoded[static_cast<size_t>(s) % encoded.size()];
        EncodedDialogue e = orig;
        Rng rng(derive_seed(9003, static_cast<uint64_t>(s), 0));
        std::vector<int> pos, tgt;
        apply_utterance_mask(e, rng, pos, tgt);
        if (pos.empty()) return {false, fmt("utterance mask selected nothing (seed %d)", s)};
        std::set<int> masked(pos.begin(), pos.end());
        std::set<int> utts;
        for (int p : pos) {
            if (orig.origins[static_cast<size_t>(p)].is_tag)
                return {false, fmt("utterance mask hit a role tag (seed %d)", s)};
            utts.insert(orig.origins[static_cast<size_t>(p)].utterance);
        }
        if (utts.size() != 1)
            return {false, fmt("utterance mask spanned %zu utterances (seed %d)", utts.size(), s)};
        const int u = *utts.begin();
        for (int p = 0; p < orig.length(); ++p) {
            const auto& og = orig.origins[static_cast<size_t>(p)];
            const bool should = !og.is_tag && og.utterance == u;
            if (should != (masked.count(p) == 1))
                return {false, fmt("utterance mask missed a content token (seed %d)", s)};
        }
    }

    // (d) token- and utterance-level target sets are disjoint in full batches
    for (int s = 0; s < kCorruptionSeeds; ++s) {
        CorruptionPolicy policy;
        policy.seed = static_cast<uint64_t>(s);
        const auto samples = corrupt_batch(encoded, policy, 0, vocab.size());
        for (const auto& smp : samples) {
            std::set<int> mlm(smp.mlm_positions.begin(), smp.mlm_positions.end());
            for (int p : smp.mum_positions)
                if (mlm.count(p))
                    return {false, fmt("token/utterance mask targets overlap (seed %d)", s)};
        }
    }

    return {true, fmt("turn-row/slot-id invariants over %d seeds each; replacement freq %.3f in "
                      "0.5 +/- %.2f; one-utterance masking; disjoint target sets",
                      kCorruptionSeeds, freq, kReplFreqTol)};
}

// ---------------------------------------------------------------------------
// 4 + 6. Overfit run, then in-batch retrieval with the overfit weights
// ---------------------------------------------------------------------------
struct OverfitArtifacts {
    Outcome overfit;
    Outcome retrieval;
};

OverfitArtifacts criterion_overfit_and_retrieval() {
    const auto t0 = std::chrono::steady_clock::now();

    // Overfitting means fitting one fixed objective, so the run freezes every
    // stochastic choice: static corruption draws, fixed batch order, and one
    // full batch per step.  Two-turn dialogues over a small lexicon keep the
    // 300 steps well inside the five-minute budget.
    CorpusSpec cs;
    cs.n_dialogues = 32;
    cs.mean_turns = 2.0;  // every dialogue is Q,A and therefore answer-final
    cs.vocab_pool = 70;
    cs.seed = 77;
    const auto generated = generate_corpus(cs);
    const auto corpus = answer_final_dialogues(generated, 32);
    const Vocab vocab = Vocab::train_bpe(texts_of(corpus), 200);

    const ModelConfig cfg = ModelConfig::tiny(vocab.size());
    EncoderParams<Scalar> params = EncoderParams<Scalar>::init(cfg, 4);
    PretrainHeads<Scalar> heads = PretrainHeads<Scalar>::init(cfg, 4);
    auto named = pretrain_named_tensors(params, heads);
    LambState<Scalar> state = LambState<Scalar>::init(named);

    CorruptionPolicy policy;
    policy.seed = 4;
    policy.resample_each_step = false;
    PretrainConfig pc;
    pc.epochs = 300;  // full batch: one step per epoch
    pc.batch_size = 32;
    pc.shuffle = false;
    pc.schedule.peak = 7e-3;
    pc.schedule.warmup_steps = 25;
    pc.schedule.total_steps = 320;

    const auto records = pretrain_loop(params, heads, state, corpus, vocab, policy, pc);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    OverfitArtifacts out;
    if (records.size() != 300) {
        out.overfit = {false, fmt("expected 300 steps, got %zu", records.size())};
        out.retrieval = {false, "skipped: overfit run did not complete"};
        return out;
    }

    std::vector<double> totals;
    for (const auto& r : records) totals.push_back(r.losses.total);
    const double initial = totals.front(), final_loss = totals.back();

    // 20-step moving average must never increase.
    bool monotone = true;
    int bad_window = -1;
    std::vector<double> ma;
    for (size_t i = 0; i + 20 <= totals.size(); ++i) {
        double s = 0;
        for (size_t j = i; j < i + 20; ++j) s += totals[j];
        ma.push_back(s / 20.0);
    }
    for (size_t i = 0; i + 1 < ma.size(); ++i)
        if (ma[i + 1] > ma[i]) {
            monotone = false;
            bad_window = static_cast<int>(i);
            break;
        }

    const bool ratio_ok = final_loss < kOverfitRatioMax * initial;
    out.overfit.pass = ratio_ok && monotone && secs < kOverfitSecondsMax;
    out.overfit.detail =
        fmt("loss %.3f -> %.3f (%.1f%% of initial, need < %.0f%%), 20-step MA %s, %.1fs < %.0fs",
            initial, final_loss, 100.0 * final_loss / initial, 100.0 * kOverfitRatioMax,
            monotone ? "monotone" : fmt("rises at window %d", bad_window).c_str(), secs,
            kOverfitSecondsMax);

    // 6: retrieval with the overfit weights, B = 16 answer-final dialogues.
    const std::vector<Dialogue> retr(corpus.begin(), corpus.begin() + kRetrievalB);
    const ResponseBatch rb = build_response_batch(retr, vocab, EncodingConfig{});
    if (rb.size() != kRetrievalB) {
        out.retrieval = {false, fmt("expected a %d-way batch, got %d", kRetrievalB, rb.size())};
        return out;
    }
    Tensor<Scalar> cp = pool(params, encode_batch(params, rb.context), rb.context);
    Tensor<Scalar> ap = pool(params, encode_batch(params, rb.candidate), rb.candidate);
    Tensor<Scalar> scores = matmul_nt(cp, ap);
    auto sm = scores.mat();
    int hits = 0;
    for (Dim i = 0; i < sm.rows(); ++i) {
        Dim best = 0;
        sm.row(i).maxCoeff(&best);
        if (best == i) ++hits;
    }
    out.retrieval.pass = hits >= kRetrievalMinHits;
    out.retrieval.detail = fmt("%d/%d correct (chance 1/%d, need >= %d)", hits, kRetrievalB,
                               kRetrievalB, kRetrievalMinHits);
    return out;
}

// ---------------------------------------------------------------------------
// 5. Desk-scale downstream tasks
// ---------------------------------------------------------------------------
Outcome criterion_downstream() {
    CorpusSpec cs;
    cs.n_dialogues = 2000;
    cs.seed = 909;
    const auto corpus = generate_corpus(cs);
    const std::vector<Dialogue> train(corpus.begin(), corpus.begin() + 1600);
    const std::vector<Dialogue> dev(corpus.begin() + 1600, corpus.begin() + 1800);
    const std::vector<Dialogue> test(corpus.begin() + 1800, corpus.end());
    const Vocab vocab = Vocab::train_bpe(texts_of(train), 1000);
    const ModelConfig cfg = ModelConfig::tiny(vocab.size());

    // Brief pre-training pass for the pretrained-init arm.
    EncoderParams<Scalar> pre = EncoderParams<Scalar>::init(cfg, 5);
    {
        PretrainHeads<Scalar> heads = PretrainHeads<Scalar>::init(cfg, 5);
        auto named = pretrain_named_tensors(pre, heads);
        LambState<Scalar> state = LambState<Scalar>::init(named);
        CorruptionPolicy policy;
        policy.seed = 5;
        PretrainConfig pc;
        pc.epochs = 1;
        pc.batch_size = 16;
        pc.schedule.peak = 1e-3;
        pc.schedule.warmup_steps = 10;
        pc.schedule.total_steps = 101;
        pretrain_loop(pre, heads, state, train, vocab, policy, pc);
    }
    EncoderParams<Scalar> scratch = EncoderParams<Scalar>::init(cfg, 5);

    FinetuneConfig fc;
    fc.seed = 5;
    fc.lr = 1e-3;
    fc.epochs = 2;
    fc.batch_size = 16;

    const LabelSet intent_labels =
        LabelSet::classification(Task::Intent, collect_class_names(train, Task::Intent));
    const auto r_pre = finetune(pre, intent_labels, train, dev, test, vocab, fc);
    const auto r_scratch = finetune(scratch, intent_labels, train, dev, test, vocab, fc);
    const double acc_pre = r_pre.test_report.value;
    const double acc_scratch = r_scratch.test_report.value;

    const LabelSet ner_labels = LabelSet::tagging(collect_entity_types(train));
    FinetuneConfig fn = fc;
    fn.epochs = 3;
    const auto r_ner = finetune(pre, ner_labels, train, dev, test, vocab, fn);
    const double ner_f1 = r_ner.test_report.value;

    Outcome o;
    o.pass = acc_pre >= kIntentAccMin && ner_f1 >= kNerF1Min &&
             acc_pre >= acc_scratch - kPretrainSlack;
    o.detail = fmt("intent acc %.4f (need >= %.2f; scratch %.4f, slack %.2f), "
                   "NER span macro-F1 %.4f (need >= %.2f)",
                   acc_pre, kIntentAccMin, acc_scratch, kPretrainSlack, ner_f1, kNerF1Min);
    return o;
}

// ---------------------------------------------------------------------------
// 7. Oracle equivalence on randomized instances
// ---------------------------------------------------------------------------
Outcome criterion_oracles() {
    Rng rng(1234);
    auto randu = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };

    // conv1d_same
    double conv_worst = 0;
    for (int it = 0; it < kOracleInstances; ++it) {
        const int n = 1 + rng.uniform_int(10), d = 1 + rng.uniform_int(6);
        const int k = 2 * rng.uniform_int(3) + 1;
        Tensor<Scalar> x = Tensor<Scalar>::randn({n, d}, 1.0, rng, false);
        Tensor<Scalar> w = Tensor<Scalar>::randn({k, d, d}, 1.0, rng, false);
        Tensor<Scalar> b = Tensor<Scalar>::randn({d}, 1.0, rng, false);
        std::vector<double> xv(x.value().data(), x.value().data() + x.numel());
        std::vector<double> wv(w.value().data(), w.value().data() + w.numel());
        std::vector<double> bv(b.value().data(), b.value().data() + b.numel());
        const auto ref = oracle::conv1d_same_ref(xv, n, d, wv, k, bv);
        Tensor<Scalar> y = conv1d_same(x, w, b);
        for (Dim i = 0; i < y.numel(); ++i)
            conv_worst = std::max(conv_worst,
                                  std::abs(y.value()[i] - ref[static_cast<size_t>(i)]));
    }
    if (conv_worst >= kConvTol) return {false, fmt("conv1d_same err %.2e >= %.0e", conv_worst, kConvTol)};

    // softmax cross-entropy over rows
    double ce_worst = 0;
    for (int it = 0; it < kOracleInstances; ++it) {
        const int rows = 1 + rng.uniform_int(8), cols = 2 + rng.uniform_int(11);
        Tensor<Scalar> logits = Tensor<Scalar>::randn({rows, cols}, 3.0, rng, false);
        std::vector<int> targets;
        for (int r = 0; r < rows; ++r) targets.push_back(rng.uniform_int(cols));
        std::vector<double> lv(logits.value().data(), logits.value().data() + logits.numel());
        const double ref = oracle::softmax_ce_rows_ref(lv, rows, cols, targets);
        ce_worst = std::max(ce_worst,
                            std::abs(softmax_cross_entropy_rows(logits, targets).item() - ref));
    }
    if (ce_worst >= kCeTol) return {false, fmt("softmax CE err %.2e >= %.0e", ce_worst, kCeTol)};

    // one LAMB step
    double lamb_worst = 0;
    for (int it = 0; it < kOracleInstances; ++it) {
        const int n = 1 + rng.uniform_int(12);
        const long t = 1 + rng.uniform_int(50);
        const double lr = randu(1e-3, 1e-1), wd = rng.bernoulli(0.5) ? 0.01 : 0.0;
        std::vector<double> p(static_cast<size_t>(n)), g(p.size()), m(p.size()), v(p.size());
        for (auto& x : p) x = randu(-2, 2);
        for (auto& x : g) x = randu(-2, 2);
        for (auto& x : m) x = randu(-1, 1);
        for (auto& x : v) x = randu(0, 1);

        Tensor<Scalar> pt = Tensor<Scalar>::zeros({n}, true);
        for (int i = 0; i < n; ++i) pt.value()[i] = p[static_cast<size_t>(i)];
        pt.ensure_grad();
        for (int i = 0; i < n; ++i) pt.grad()[i] = g[static_cast<size_t>(i)];
        std::vector<std::pair<std::string, Tensor<Scalar>>> named{{"p", pt}};
        LambState<Scalar> state = LambState<Scalar>::init(named);
        state.weight_decay = wd;
        state.step = t - 1;
        for (int i = 0; i < n; ++i) {
            state.moments[0].second.first[i] = m[static_cast<size_t>(i)];
            state.moments[0].second.second[i] = v[static_cast<size_t>(i)];
        }
        lamb_step(named, state, lr);
        oracle::lamb_step_ref(p, g, m, v, t, lr, state.beta1, state.beta2, state.eps, wd);
        for (int i = 0; i < n; ++i)
            lamb_worst = std::max(lamb_worst,
                                  std::abs(pt.value()[i] - p[static_cast<size_t>(i)]));
    }
    if (lamb_worst >= kLambTol) return {false, fmt("LAMB err %.2e >= %.0e", lamb_worst, kLambTol)};

    // decode_bio and macro_f1 (exact agreement)
    const int n_types = 3;
    for (int it = 0; it < kOracleInstances; ++it) {
        std::vector<std::vector<Span>> gold_lib, pred_lib;
        std::vector<std::vector<oracle::SpanRef>> gold_ref, pred_ref;
        for (int e = 0; e < 4; ++e) {
            for (int which = 0; which < 2; ++which) {
                std::vector<int> tags;
                const int len = rng.uniform_int(12);
                for (int i = 0; i < len; ++i) tags.push_back(rng.uniform_int(2 * n_types + 1));
                const auto lib = decode_bio(tags, n_types);
                const auto ref = oracle::decode_bio_ref(tags);
                if (lib.size() != ref.size())
                    return {false, "decode_bio span count disagrees with the oracle"};
                for (size_t i = 0; i < lib.size(); ++i)
                    if (lib[i].begin != ref[i].begin || lib[i].end != ref[i].end ||
                        lib[i].type != ref[i].type)
                        return {false, "decode_bio span fields disagree with the oracle"};
                auto& per_lib = which == 0 ? gold_lib : pred_lib;
                auto& per_ref = which == 0 ? gold_ref : pred_ref;
                per_lib.push_back(lib);
                per_ref.push_back(ref);
            }
        }
        const double ref = oracle::macro_f1_ref(gold_ref, pred_ref);
        if (ref < 0.0) continue;  // empty universe: library throws by contract
        if (macro_f1(gold_lib, pred_lib) != ref)
            return {false, "macro_f1 disagrees with the oracle"};
    }

    // accuracy (exact agreement)
    for (int it = 0; it < kOracleInstances; ++it) {
        const int n = 1 + rng.uniform_int(40);
        std::vector<int> pred, gold;
        for (int i = 0; i < n; ++i) {
            pred.push_back(rng.uniform_int(5));
            gold.push_back(rng.uniform_int(5));
        }
        if (accuracy(pred, gold) != oracle::accuracy_ref(pred, gold))
            return {false, "accuracy disagrees with the oracle"};
    }

    return {true, fmt("conv %.1e, CE %.1e, LAMB %.1e (tols %.0e/%.0e/%.0e); "
                      "decode_bio/macro_f1/accuracy exact; %d instances each",
                      conv_worst, ce_worst, lamb_worst, kConvTol, kCeTol, kLambTol,
                      kOracleInstances)};
}

// ---------------------------------------------------------------------------
// 8. Determinism and bit-exact resume
// ---------------------------------------------------------------------------
Outcome criterion_determinism() {
    CorpusSpec cs;
    cs.n_dialogues = 8;
    cs.vocab_pool = 80;
    cs.seed = 55;
    const auto corpus = generate_corpus(cs);
    const Vocab vocab = Vocab::train_bpe(texts_of(corpus), 150);
    const ModelConfig cfg = ModelConfig::micro(vocab.size());

    CorruptionPolicy policy;
    policy.seed = 9;
    PretrainConfig pc;
    pc.epochs = 2;
    pc.batch_size = 4;
    pc.schedule.peak = 1e-3;
    pc.schedule.warmup_steps = 2;
    pc.schedule.total_steps = 9;

    auto run_full = [&]() {
        EncoderParams<Scalar> p = EncoderParams<Scalar>::init(cfg, 9);
        PretrainHeads<Scalar> h = PretrainHeads<Scalar>::init(cfg, 9);
        auto named = pretrain_named_tensors(p, h);
        LambState<Scalar> st = LambState<Scalar>::init(named);
        auto rec = pretrain_loop(p, h, st, corpus, vocab, policy, pc);
        return std::make_pair(std::move(p), std::move(rec));
    };
    auto [pa, ra] = run_full();
    auto [pb, rb] = run_full();
    if (ra.size() != rb.size()) return {false, "rerun produced a different step count"};
    for (size_t i = 0; i < ra.size(); ++i)
        if (step_record_json(ra[i]).dump() != step_record_json(rb[i]).dump())
            return {false, fmt("loss histories diverge at step %zu", i)};
    if (!params_identical(pa, pb)) return {false, "rerun produced different final parameters"};

    // Interrupted run: one epoch to a checkpoint, then resume for the second.
    const fs::path dir = fs::temp_directory_path() / "dialenc_acceptance_resume";
    fs::create_directories(dir);
    {
        EncoderParams<Scalar> p = EncoderParams<Scalar>::init(cfg, 9);
        PretrainHeads<Scalar> h = PretrainHeads<Scalar>::init(cfg, 9);
        auto named = pretrain_named_tensors(p, h);
        LambState<Scalar> st = LambState<Scalar>::init(named);
        PretrainConfig pc1 = pc;
        pc1.epochs = 1;
        pc1.checkpoint_dir = dir.string();
        pretrain_loop(p, h, st, corpus, vocab, policy, pc1);
    }
    EncoderParams<Scalar> pr = EncoderParams<Scalar>::init(cfg, 1);  // overwritten by the load
    PretrainHeads<Scalar> hr = PretrainHeads<Scalar>::init(cfg, 1);
    LambState<Scalar> str;
    load_pretrain_checkpoint((dir / "epoch_1.ckpt").string(), pr, hr, str);
    const auto rr = pretrain_loop(pr, hr, str, corpus, vocab, policy, pc, /*start_epoch=*/1);
    fs::remove_all(dir);

    const size_t half = ra.size() / 2;
    if (rr.size() != half) return {false, "resumed run produced a different step count"};
    for (size_t i = 0; i < half; ++i)
        if (step_record_json(rr[i]).dump() != step_record_json(ra[half + i]).dump())
            return {false, fmt("resumed history diverges at step %zu", half + i)};
    if (!params_identical(pr, pa)) return {false, "resume produced different final parameters"};

    // Fine-tuning reports are deterministic too.
    const std::vector<Dialogue> train(corpus.begin(), corpus.begin() + 6);
    const std::vector<Dialogue> dev(corpus.begin() + 6, corpus.begin() + 7);
    const std::vector<Dialogue> test(corpus.begin() + 7, corpus.end());
    const LabelSet labels =
        LabelSet::classification(Task::Intent, collect_class_names(corpus, Task::Intent));
    FinetuneConfig fc;
    fc.seed = 9;
    fc.lr = 1e-3;
    fc.epochs = 2;
    fc.batch_size = 4;
    auto report_pair = [&]() {
        EncoderParams<Scalar> p = EncoderParams<Scalar>::init(cfg, 9);
        const auto r = finetune(p, labels, train, dev, test, vocab, fc);
        return metrics_report_json(r.dev_report).dump() + "|" +
               metrics_report_json(r.test_report).dump();
    };
    if (report_pair() != report_pair())
        return {false, "fine-tuning reports differ between identical runs"};

    return {true, fmt("bit-identical histories and reports over reruns; "
                      "resume matches steps %zu..%zu and final parameters bit-exactly",
                      half + 1, ra.size())};
}

// ---------------------------------------------------------------------------
// 9. Schedule anchors
// ---------------------------------------------------------------------------
Outcome criterion_schedule() {
    const LrSchedule s;  // peak 1e-4, warm-up 10,000, total 1,000,000
    const double at0 = lr_at(0, s), at_warm = lr_at(10000, s), at_half = lr_at(5000, s);
    const bool exact = at0 == 0.0 && at_warm == 1e-4 && at_half == 5e-5;

    bool sweep_ok = true;
    for (int64_t step = 0; step <= s.total_steps + 5000 && sweep_ok; step += 997)
        sweep_ok = lr_at(step, s) ==
                   oracle::lr_at_ref(static_cast<long>(step), s.peak, s.warmup_steps, s.total_steps);

    Outcome o;
    o.pass = exact && sweep_ok;
    o.detail = fmt("lr(0)=%g, lr(10000)=%g, lr(5000)=%g, exact; oracle sweep %s", at0, at_warm,
                   at_half, sweep_ok ? "matches" : "DIVERGES");
    return o;
}

}  // namespace

int main() {
    struct Row {
        int id;
        const char* name;
        Outcome out;
        double secs;
    };
    std::vector<Row> rows;

    auto run = [&](int id, const char* name, auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back({id, name, o, secs});
        std::printf("[%s] %d. %s: %s  (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    };

    run(1, "gradient soundness", criterion_gradients);
    run(2, "analytic loss anchors", criterion_anchors);
    run(3, "corruption invariants", criterion_corruption);

    OverfitArtifacts arts;
    run(4, "overfit run", [&] {
        arts = criterion_overfit_and_retrieval();
        return arts.overfit;
    });
    run(5, "downstream desk-scale", criterion_downstream);
    run(6, "response-selection learnability", [&] { return arts.retrieval; });
    run(7, "oracle equivalence", criterion_oracles);
    run(8, "determinism and resume", criterion_determinism);
    run(9, "schedule anchors", criterion_schedule);

    int passed = 0;
    for (const auto& r : rows) passed += r.out.pass ? 1 : 0;
    std::printf("ACCEPTANCE: %d/%zu criteria passed\n", passed, rows.size());
    return passed == static_cast<int>(rows.size()) ? 0 : 1;
}
