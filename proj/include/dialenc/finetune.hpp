#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialenc/error.hpp"
#include "dialenc/metrics.hpp"
#include "dialenc/model.hpp"
#include "dialenc/pretrain.hpp"
#include "dialenc/rng.hpp"
#include "dialenc/tensor.hpp"

namespace dialenc {

// ---------------------------------------------------------------------------
// Task losses
// ---------------------------------------------------------------------------

// Mean cross-entropy of the linear head over pooled dialogue vectors.
template <typename S>
Tensor<S> classification_loss(const Tensor<S>& pooled, const Tensor<S>& w,
                              const std::vector<int>& labels) {
    check_shape(pooled.rank() == 2 && w.rank() == 2 && pooled.dim(1) == w.dim(0),
                "classification_loss: pooled is BxD and the head DxC");
    return softmax_cross_entropy_rows(matmul(pooled, w), labels);
}

template <typename S>
struct TaggingLoss {
    Tensor<S> loss;           // scalar; exactly 0 when nothing participates
    int64_t n_positions = 0;  // supervised positions that entered the mean
};

// Mean per-position cross-entropy of the linear tag head over every
// supervised position: mask-true and not ignore-tagged. Each tag row covers
// its sample's real (unpadded) length.
template <typename S>
TaggingLoss<S> ner_loss(const Tensor<S>& contextual, const Tensor<S>& w, const EncodedBatch& batch,
                        const std::vector<std::vector<int>>& tags) {
    check_shape(w.rank() == 2 && w.dim(0) == contextual.dim(2),
                "ner_loss: head must be d x P");
    check_shape(w.dim(1) >= 3, "ner_loss: a BIO tag set has at least 3 tags");
    if (static_cast<size_t>(batch.batch) != tags.size())
        throw ContractError("ner_loss: tag rows do not match the batch");
    const int P = static_cast<int>(w.dim(1));
    std::vector<Dim> rows;
    std::vector<int> targets;
    for (int b = 0; b < batch.batch; ++b) {
        const auto& row = tags[static_cast<size_t>(b)];
        for (size_t p = 0; p < row.size(); ++p) {
            if (p >= static_cast<size_t>(batch.seq) ||
                !batch.mask[static_cast<size_t>(b * batch.seq) + p])
                throw ContractError("ner_loss: tag row of sample " + std::to_string(b) +
                                    " extends into padding");
            int t = row[p];
            if (t == kIgnoreTag) continue;
            if (t < 0 || t >= P)
                throw IndexError("ner_loss: tag " + std::to_string(t) + " outside [0," +
                                 std::to_string(P) + ")");
            rows.push_back(static_cast<Dim>(b) * batch.seq + static_cast<Dim>(p));
            targets.push_back(t);
        }
    }
    TaggingLoss<S> out;
    out.n_positions = static_cast<int64_t>(rows.size());
    if (rows.empty()) {
        out.loss = Tensor<S>::scalar(S(0));
        return out;
    }
    Tensor<S> u = gather_rows(contextual, rows);
    out.loss = softmax_cross_entropy_rows(matmul(u, w), targets);
    return out;
}

// ---------------------------------------------------------------------------
// Labeled examples
// ---------------------------------------------------------------------------

// A dialogue encoded for supervised training: class id for intent/emotion,
// or a gold tag row for entity recognition.
struct LabeledExample {
    EncodedDialogue enc;
    int class_id = -1;
    std::vector<int> tags;
};

inline LabeledExample encode_labeled(const Dialogue& d, const Vocab& vocab,
                                     const EncodingConfig& enc_cfg, const LabelSet& labels) {
    LabeledExample ex;
    ex.enc = encode_dialogue(d, vocab, enc_cfg);
    switch (labels.task()) {
        case Task::Intent:
            if (!d.intent) throw DataError("dialogue \"" + d.id + "\" has no intent label");
            ex.class_id = labels.index_of(*d.intent);
            break;
        case Task::Emotion:
            if (!d.emotion) throw DataError("dialogue \"" + d.id + "\" has no emotion label");
            ex.class_id = labels.index_of(*d.emotion);
            break;
        case Task::Ner:
            ex.tags = project_entity_tags(ex.enc, d, labels);
            break;
    }
    return ex;
}

inline std::vector<LabeledExample> encode_labeled_set(const std::vector<Dialogue>& ds,
                                                      const Vocab& vocab,
                                                      const EncodingConfig& enc_cfg,
                                                      const LabelSet& labels) {
    std::vector<LabeledExample> out;
    out.reserve(ds.size());
    for (const auto& d : ds) out.push_back(encode_labeled(d, vocab, enc_cfg, labels));
    return out;
}

// Sorted unique intent/emotion names present in a corpus.
inline std::vector<std::string> collect_class_names(const std::vector<Dialogue>& ds, Task task) {
    std::vector<std::string> names;
    for (const auto& d : ds) {
        const auto& lab = task == Task::Intent ? d.intent : d.emotion;
        if (lab) names.push_back(*lab);
    }
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
}

inline std::vector<std::string> collect_entity_types(const std::vector<Dialogue>& ds) {
    std::vector<std::string> names;
    for (const auto& d : ds)
        for (const auto& e : d.entities) names.push_back(e.type);
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

// Argmax class per example, evaluated in mini-batches.
template <typename S>
std::vector<int> predict_classes(EncoderParams<S>& params, const Tensor<S>& head,
                                 const std::vector<LabeledExample>& examples, int batch_size) {
    std::vector<int> out;
    out.reserve(examples.size());
    for (size_t begin = 0; begin < examples.size(); begin += static_cast<size_t>(batch_size)) {
        size_t end = std::min(examples.size(), begin + static_cast<size_t>(batch_size));
        std::vector<EncodedDialogue> encs;
        for (size_t i = begin; i < end; ++i) encs.push_back(examples[i].enc);
        EncodedBatch eb = pad_batch(encs);
        Tensor<S> pooled = pool(params, encode_batch(params, eb), eb);
        Tensor<S> logits = matmul(pooled, head);
        auto lm = logits.mat();
        for (Dim r = 0; r < lm.rows(); ++r) {
            Dim best = 0;
            lm.row(r).maxCoeff(&best);
            out.push_back(static_cast<int>(best));
        }
    }
    return out;
}

// Argmax tag per supervised position; role-tag and padding positions come
// back ignore-tagged so predictions align with gold rows.
template <typename S>
std::vector<std::vector<int>> predict_tags(EncoderParams<S>& params, const Tensor<S>& head,
                                           const std::vector<LabeledExample>& examples,
                                           int batch_size) {
    std::vector<std::vector<int>> out;
    out.reserve(examples.size());
    for (size_t begin = 0; begin < examples.size(); begin += static_cast<size_t>(batch_size)) {
        size_t end = std::min(examples.size(), begin + static_cast<size_t>(batch_size));
        std::vector<EncodedDialogue> encs;
        for (size_t i = begin; i < end; ++i) encs.push_back(examples[i].enc);
        EncodedBatch eb = pad_batch(encs);
        Tensor<S> ctx = encode_batch(params, eb);
        Tensor<S> logits = matmul(ctx, head);  // B x N x P
        auto lm = logits.mat();                // (B*N) x P
        for (size_t i = begin; i < end; ++i) {
            const auto& enc = examples[i].enc;
            int b = static_cast<int>(i - begin);
            std::vector<int> row(static_cast<size_t>(enc.length()), kIgnoreTag);
            for (int p = 0; p < enc.length(); ++p) {
                const auto& o = enc.origins[static_cast<size_t>(p)];
                if (o.is_tag || o.utterance < 0) continue;
                Dim best = 0;
                lm.row(static_cast<Dim>(b) * eb.seq + p).maxCoeff(&best);
                row[static_cast<size_t>(p)] = static_cast<int>(best);
            }
            out.push_back(std::move(row));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct MetricsReport {
    std::string task;
    std::string split;
    std::string metric_name;
    double value = 0;
    std::map<std::string, double> per_label;
    int64_t n_examples = 0;
    std::string checkpoint_id;
};

inline nlohmann::json metrics_report_json(const MetricsReport& r) {
    return {{"task", r.task},         {"split", r.split},
            {"metric_name", r.metric_name}, {"value", r.value},
            {"per_label", r.per_label},     {"n_examples", r.n_examples},
            {"checkpoint_id", r.checkpoint_id}};
}

template <typename S>
MetricsReport evaluate_classifier(EncoderParams<S>& params, const Tensor<S>& head,
                                  const std::vector<LabeledExample>& examples,
                                  const LabelSet& labels, const std::string& split,
                                  int batch_size = 16) {
    if (examples.empty()) throw ContractError("evaluate_classifier: empty split");
    std::vector<int> pred = predict_classes(params, head, examples, batch_size);
    std::vector<int> gold;
    gold.reserve(examples.size());
    for (const auto& ex : examples) gold.push_back(ex.class_id);

    MetricsReport rep;
    rep.task = task_name(labels.task());
    rep.split = split;
    rep.metric_name = "accuracy";
    rep.value = accuracy(pred, gold);
    rep.n_examples = static_cast<int64_t>(examples.size());
    for (int c = 0; c < labels.size(); ++c) {
        long n = 0, hit = 0;
        for (size_t i = 0; i < gold.size(); ++i) {
            if (gold[i] != c) continue;
            ++n;
            if (pred[i] == c) ++hit;
        }
        if (n > 0)
            rep.per_label[labels.name(c)] = static_cast<double>(hit) / static_cast<double>(n);
    }
    return rep;
}

template <typename S>
MetricsReport evaluate_tagger(EncoderParams<S>& params, const Tensor<S>& head,
                              const std::vector<LabeledExample>& examples, const LabelSet& labels,
                              const std::string& split, int batch_size = 16) {
    if (examples.empty()) throw ContractError("evaluate_tagger: empty split");
    auto pred = predict_tags(params, head, examples, batch_size);
    std::vector<std::vector<Span>> gold_spans, pred_spans;
    std::vector<std::vector<int>> gold_tags;
    for (size_t i = 0; i < examples.size(); ++i) {
        gold_tags.push_back(examples[i].tags);
        gold_spans.push_back(decode_bio(examples[i].tags, labels.n_types()));
        pred_spans.push_back(decode_bio(pred[i], labels.n_types()));
    }

    MetricsReport rep;
    rep.task = task_name(labels.task());
    rep.split = split;
    rep.metric_name = "span_macro_f1";
    std::map<int, TypeScore> breakdown;
    rep.value = macro_f1(gold_spans, pred_spans, &breakdown);
    rep.n_examples = static_cast<int64_t>(examples.size());
    for (const auto& [type, sc] : breakdown) rep.per_label[labels.type_name(type)] = sc.f1;
    rep.per_label["token_macro_f1"] = token_macro_f1(gold_tags, pred);
    return rep;
}

// ---------------------------------------------------------------------------
// Fine-tuning driver
// ---------------------------------------------------------------------------

struct FinetuneConfig {
    uint64_t seed = 1;
    double lr = 5e-5;
    int epochs = 10;
    int batch_size = 16;
    EncodingConfig encoding;
};

template <typename S>
struct FinetuneResult {
    EncoderParams<S> params;  // best-dev weights
    Tensor<S> head;
    LabelSet labels;
    int best_epoch = 0;              // 1-based epoch whose dev metric won
    std::vector<double> dev_history; // dev metric after each epoch
    MetricsReport dev_report;        // at the selected epoch
    MetricsReport test_report;       // at the selected epoch
};

// Trains a fresh task head (and the whole encoder) on the train split,
// selects the epoch with the best dev metric, and reports test metrics for
// the selected weights. The source encoder is deep-copied, never mutated.
template <typename S>
FinetuneResult<S> finetune(EncoderParams<S>& source, const LabelSet& labels,
                           const std::vector<Dialogue>& train, const std::vector<Dialogue>& dev,
                           const std::vector<Dialogue>& test, const Vocab& vocab,
                           const FinetuneConfig& cfg) {
    if (train.empty() || dev.empty() || test.empty())
        throw DataError("fine-tuning needs non-empty train/dev/test splits");
    if (cfg.epochs < 1 || cfg.batch_size < 1)
        throw ConfigError("fine-tuning needs at least one epoch and a positive batch size");

    FinetuneResult<S> out;
    out.labels = labels;
    out.params = source.deep_copy();
    const Dim d = out.params.cfg.d_model;
    Rng head_rng(derive_seed(cfg.seed, 0, 2));
    out.head = Tensor<S>::randn({d, labels.size()}, out.params.cfg.init_std, head_rng, true);

    auto train_ex = encode_labeled_set(train, vocab, cfg.encoding, labels);
    auto dev_ex = encode_labeled_set(dev, vocab, cfg.encoding, labels);
    auto test_ex = encode_labeled_set(test, vocab, cfg.encoding, labels);

    auto named = out.params.named_tensors();
    named.emplace_back("head.w", out.head);
    auto state = LambState<S>::init(named);

    const int64_t steps_per_epoch = static_cast<int64_t>(
        (train_ex.size() + static_cast<size_t>(cfg.batch_size) - 1) /
        static_cast<size_t>(cfg.batch_size));
    LrSchedule schedule;
    schedule.peak = cfg.lr;
    schedule.total_steps = std::max<int64_t>(2, steps_per_epoch * cfg.epochs + 1);
    schedule.warmup_steps = std::max<int64_t>(1, schedule.total_steps / 10);

    auto eval_dev = [&]() {
        return labels.task() == Task::Ner
                   ? evaluate_tagger(out.params, out.head, dev_ex, labels, "dev", cfg.batch_size)
                   : evaluate_classifier(out.params, out.head, dev_ex, labels, "dev",
                                         cfg.batch_size);
    };

    std::vector<typename Tensor<S>::Vec> best_values;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(train_ex.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, static_cast<uint64_t>(epoch), 3));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(static_cast<int>(i)))]);

        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            std::vector<EncodedDialogue> encs;
            std::vector<int> class_ids;
            std::vector<std::vector<int>> tag_rows;
            for (size_t k = begin; k < end; ++k) {
                const auto& ex = train_ex[order[k]];
                encs.push_back(ex.enc);
                class_ids.push_back(ex.class_id);
                tag_rows.push_back(ex.tags);
            }
            EncodedBatch eb = pad_batch(encs);

            for (auto& [name, t] : named) t.zero_grad();
            Tensor<S> loss;
            {
                GradTape<S> tape;
                Tensor<S> ctx = encode_batch(out.params, eb);
                if (labels.task() == Task::Ner) {
                    loss = ner_loss(ctx, out.head, eb, tag_rows).loss;
                } else {
                    Tensor<S> pooled = pool(out.params, ctx, eb);
                    loss = classification_loss(pooled, out.head, class_ids);
                }
                tape.backward(loss);
            }
            for (auto& [name, t] : named) t.ensure_grad();
            lamb_step(named, state, static_cast<S>(lr_at(state.step + 1, schedule)));
        }

        MetricsReport dev_rep = eval_dev();
        out.dev_history.push_back(dev_rep.value);
        if (best_values.empty() || dev_rep.value > out.dev_report.value) {
            out.best_epoch = epoch + 1;
            out.dev_report = dev_rep;
            best_values.clear();
            for (auto& [name, t] : named) best_values.push_back(t.value());
        }
    }

    for (size_t i = 0; i < named.size(); ++i) named[i].second.value() = best_values[i];
    std::string ckpt_id = "epoch_" + std::to_string(out.best_epoch);
    out.dev_report.checkpoint_id = ckpt_id;
    out.test_report =
        labels.task() == Task::Ner
            ? evaluate_tagger(out.params, out.head, test_ex, labels, "test", cfg.batch_size)
            : evaluate_classifier(out.params, out.head, test_ex, labels, "test", cfg.batch_size);
    out.test_report.checkpoint_id = ckpt_id;
    return out;
}

}  // namespace dialenc
