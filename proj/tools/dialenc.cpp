// Command-line surface for the dialogue encoder: corpus generation,
// self-supervised pre-training, fine-tuning, evaluation, and a gradient
// soundness check. Exit codes: 0 success, 1 usage error, 2 data/numeric error.
#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
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

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dialenc;

// Double precision throughout the CLI: desk-scale runs are cheap and the
// results stay bit-reproducible across optimization levels.
using Scalar = double;

namespace {

ModelConfig make_model_config(const std::string& name, int vocab_size) {
    if (name == "paper") return ModelConfig::base(vocab_size);
    if (name == "tiny") return ModelConfig::tiny(vocab_size);
    if (name == "micro") return ModelConfig::micro(vocab_size);
    throw ConfigError("unknown --config \"" + name + "\"");
}

int default_vocab_target(const std::string& config) {
    return config == "paper" ? 50000 : config == "tiny" ? 1000 : 300;
}

EncodingConfig encoding_for(const ModelConfig& cfg) {
    EncodingConfig e;
    e.max_positions = cfg.max_positions;
    e.max_turns = cfg.max_turns;
    e.add_cls = cfg.pooler == "cls";
    return e;
}

std::vector<std::string> corpus_texts(const std::vector<Dialogue>& corpus) {
    std::vector<std::string> texts;
    for (const auto& d : corpus)
        for (const auto& u : d.utterances) texts.push_back(u.text);
    return texts;
}

Task parse_task(const std::string& name) {
    if (name == "intent") return Task::Intent;
    if (name == "emotion") return Task::Emotion;
    if (name == "ner") return Task::Ner;
    throw ConfigError("unknown --task \"" + name + "\"");
}

std::string resolve_ckpt_path(const std::string& given) {
    if (fs::exists(given)) return given;
    const std::string with_ext = given + ".ckpt";
    if (fs::exists(with_ext)) return with_ext;
    throw IoError("checkpoint not found: \"" + given + "\"");
}

// vocab.txt saved next to the checkpoint by `pretrain` / `finetune`.
std::string sibling_vocab_path(const std::string& ckpt_path, const std::string& override_path) {
    if (!override_path.empty()) return override_path;
    const fs::path p = fs::path(ckpt_path).parent_path() / "vocab.txt";
    if (!fs::exists(p))
        throw IoError("no vocabulary next to the checkpoint; pass --vocab (looked for \"" +
                      p.string() + "\")");
    return p.string();
}

LabelSet labels_from_metadata(const std::map<std::string, std::string>& meta) {
    const auto task_it = meta.find("task");
    if (task_it == meta.end())
        throw DataError("checkpoint metadata carries no task; was it fine-tuned?");
    const Task task = parse_task(task_it->second);
    if (task == Task::Ner) {
        const std::vector<std::string> types = json::parse(meta.at("entity_types"));
        return LabelSet::tagging(types);
    }
    const std::vector<std::string> names = json::parse(meta.at("class_names"));
    return LabelSet::classification(task, names);
}

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

struct GenOpts {
    int n = 1000;
    double mean_turns = 8.59;
    int intents = 8;
    int emotions = 5;
    int entity_types = 4;
    int pool = 400;
    uint64_t seed = 1;
    std::string out;
};

void run_gen(const GenOpts& o) {
    CorpusSpec spec;
    spec.n_dialogues = o.n;
    spec.mean_turns = o.mean_turns;
    spec.n_intents = o.intents;
    spec.n_emotions = o.emotions;
    spec.n_entity_types = o.entity_types;
    spec.vocab_pool = o.pool;
    spec.seed = o.seed;
    const auto corpus = generate_corpus(spec);
    if (const fs::path parent = fs::path(o.out).parent_path(); !parent.empty())
        fs::create_directories(parent);
    save_dialogues_jsonl(o.out, corpus);
    std::cout << "wrote " << corpus.size() << " dialogues to " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainOpts {
    std::string corpus;
    std::string config = "tiny";
    std::string out;
    int epochs = 1;
    int batch = 0;         // 0: 256 for paper, 16 otherwise
    int vocab_target = 0;  // 0: config default
    int workers = 1;
    double lr = 0;         // 0: 1e-4 for paper, 1e-3 otherwise
    int64_t warmup = -1;   // <0: 10,000 for paper, total/10 otherwise
    int64_t total = -1;    // <0: 1,000,000 for paper, run length otherwise
    uint64_t seed = 1;
};

void run_pretrain(const PretrainOpts& o) {
    const auto corpus = load_dialogues_jsonl(o.corpus);
    const int vocab_target = o.vocab_target > 0 ? o.vocab_target : default_vocab_target(o.config);
    const Vocab vocab = Vocab::train_bpe(corpus_texts(corpus), vocab_target);
    const ModelConfig cfg = make_model_config(o.config, vocab.size());

    const bool paper = o.config == "paper";
    PretrainConfig pc;
    pc.epochs = o.epochs;
    pc.batch_size = o.batch > 0 ? o.batch : (paper ? 256 : 16);
    pc.encoding = encoding_for(cfg);
    pc.n_workers = o.workers;

    const int64_t steps_per_epoch =
        (static_cast<int64_t>(corpus.size()) + pc.batch_size - 1) / pc.batch_size;
    pc.schedule.peak = o.lr > 0 ? o.lr : (paper ? 1e-4 : 1e-3);
    pc.schedule.total_steps = o.total >= 0   ? o.total
                              : paper        ? 1000000
                                             : std::max<int64_t>(2, steps_per_epoch * o.epochs + 1);
    pc.schedule.warmup_steps =
        o.warmup >= 0 ? o.warmup : (paper ? 10000 : std::max<int64_t>(1, pc.schedule.total_steps / 10));

    fs::create_directories(o.out);
    pc.checkpoint_dir = o.out;
    pc.history_path = o.out + "/history.jsonl";
    vocab.save(o.out + "/vocab.txt");

    EncoderParams<Scalar> params = EncoderParams<Scalar>::init(cfg, o.seed);
    PretrainHeads<Scalar> heads = PretrainHeads<Scalar>::init(cfg, o.seed);
    auto named = pretrain_named_tensors(params, heads);
    LambState<Scalar> state = LambState<Scalar>::init(named);

    CorruptionPolicy policy;
    policy.seed = o.seed;

    const auto records = pretrain_loop(params, heads, state, corpus, vocab, policy, pc);
    json summary = {{"steps", records.size()},
                    {"checkpoint_dir", o.out},
                    {"history", pc.history_path},
                    {"vocab_size", vocab.size()}};
    if (!records.empty()) summary["final"] = step_record_json(records.back());
    std::cout << summary.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

struct FinetuneOpts {
    std::string task;
    std::string train, dev, test;
    std::string config = "tiny";
    std::string out;
    std::string init;   // pre-trained checkpoint; scratch init when empty
    std::string vocab;  // explicit vocabulary path (default: next to --init)
    int epochs = 10;
    int batch = 16;
    int vocab_target = 0;
    double lr = 5e-5;
    uint64_t seed = 1;
};

void run_finetune(const FinetuneOpts& o) {
    const auto train = load_dialogues_jsonl(o.train);
    const auto dev = load_dialogues_jsonl(o.dev);
    const auto test = load_dialogues_jsonl(o.test);
    const Task task = parse_task(o.task);

    // Encoder + vocabulary: restored from a pre-training checkpoint, or fresh.
    EncoderParams<Scalar> params;
    Vocab vocab = [&] {
        if (!o.init.empty()) {
            const std::string path = resolve_ckpt_path(o.init);
            Vocab v = Vocab::load(sibling_vocab_path(path, o.vocab));
            const CheckpointData<Scalar> data = load_checkpoint<Scalar>(path);
            params = EncoderParams<Scalar>::init(data.config, o.seed);
            PretrainHeads<Scalar> heads = PretrainHeads<Scalar>::init(data.config, o.seed);
            LambState<Scalar> state;
            load_pretrain_checkpoint(path, params, heads, state);
            return v;
        }
        const int vocab_target =
            o.vocab_target > 0 ? o.vocab_target : default_vocab_target(o.config);
        Vocab v = Vocab::train_bpe(corpus_texts(train), vocab_target);
        params = EncoderParams<Scalar>::init(make_model_config(o.config, v.size()), o.seed);
        return v;
    }();

    const LabelSet labels = task == Task::Ner
                                ? LabelSet::tagging(collect_entity_types(train))
                                : LabelSet::classification(task, collect_class_names(train, task));

    FinetuneConfig fc;
    fc.seed = o.seed;
    fc.lr = o.lr;
    fc.epochs = o.epochs;
    fc.batch_size = o.batch;
    fc.encoding = encoding_for(params.cfg);

    FinetuneResult<Scalar> result = finetune(params, labels, train, dev, test, vocab, fc);

    fs::create_directories(o.out);
    vocab.save(o.out + "/vocab.txt");

    CheckpointData<Scalar> ckpt;
    ckpt.config = result.params.cfg;
    ckpt.metadata["phase"] = "finetune";
    ckpt.metadata["task"] = o.task;
    ckpt.metadata["best_epoch"] = std::to_string(result.best_epoch);
    if (task == Task::Ner) {
        std::vector<std::string> types;
        for (int t = 0; t < labels.n_types(); ++t) types.push_back(labels.type_name(t));
        ckpt.metadata["entity_types"] = json(types).dump();
    } else {
        ckpt.metadata["class_names"] = json(labels.names()).dump();
    }
    ckpt.tensors = result.params.named_tensors();
    ckpt.tensors.emplace_back("head.w", result.head);
    save_checkpoint(o.out + "/best.ckpt", ckpt);

    json out = {{"dev", metrics_report_json(result.dev_report)},
                {"test", metrics_report_json(result.test_report)},
                {"dev_history", result.dev_history},
                {"best_epoch", result.best_epoch},
                {"checkpoint", o.out + "/best.ckpt"}};
    std::ofstream metrics(o.out + "/metrics.json");
    if (!metrics.is_open()) throw IoError("cannot write " + o.out + "/metrics.json");
    metrics << out.dump(2) << "\n";
    std::cout << out.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOpts {
    std::string task;
    std::string data;
    std::string ckpt;
    std::string split = "test";
    std::string vocab;
    int batch = 16;
};

void run_evaluate(const EvaluateOpts& o) {
    const std::string path = resolve_ckpt_path(o.ckpt);
    const CheckpointData<Scalar> data = load_checkpoint<Scalar>(path);
    if (auto it = data.metadata.find("phase"); it == data.metadata.end() || it->second != "finetune")
        throw DataError("checkpoint \"" + path + "\" carries no task head; fine-tune first");
    if (!o.task.empty() && o.task != data.metadata.at("task"))
        throw DataError("checkpoint was fine-tuned for task \"" + data.metadata.at("task") +
                        "\", not \"" + o.task + "\"");
    const LabelSet labels = labels_from_metadata(data.metadata);

    EncoderParams<Scalar> params = EncoderParams<Scalar>::init(data.config, 1);
    Tensor<Scalar> head = Tensor<Scalar>::zeros({data.config.d_model, labels.size()}, true);
    auto named = params.named_tensors();
    named.emplace_back("head.w", head);
    apply_checkpoint(data, data.config, named);

    const Vocab vocab = Vocab::load(sibling_vocab_path(path, o.vocab));
    const auto dialogues = load_dialogues_jsonl(o.data);
    const auto examples = encode_labeled_set(dialogues, vocab, encoding_for(data.config), labels);

    MetricsReport rep =
        labels.task() == Task::Ner
            ? evaluate_tagger(params, head, examples, labels, o.split, o.batch)
            : evaluate_classifier(params, head, examples, labels, o.split, o.batch);
    rep.checkpoint_id = fs::path(path).stem().string();
    std::cout << metrics_report_json(rep).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

struct GradCheckOpts {
    std::string config = "micro";
    uint64_t seed = 1;
    double eps = 1e-5;
    double tol = 1e-4;
    size_t coords = 25;  // sampled coordinates per parameter; 0 = all
};

bool run_grad_check(const GradCheckOpts& o) {
    CorpusSpec spec;
    spec.n_dialogues = 8;
    spec.vocab_pool = 80;
    spec.seed = o.seed;
    const auto corpus = generate_corpus(spec);
    const Vocab vocab = Vocab::train_bpe(corpus_texts(corpus), 300);

    ModelConfig cfg = make_model_config(o.config, vocab.size());
    EncoderParams<Scalar> params = EncoderParams<Scalar>::init(cfg, o.seed);
    PretrainHeads<Scalar> heads = PretrainHeads<Scalar>::init(cfg, o.seed);
    auto named = pretrain_named_tensors(params, heads);

    CorruptionPolicy policy;
    policy.seed = o.seed;
    std::vector<Dialogue> batch(corpus.begin(), corpus.begin() + 4);
    const PretrainBatch pb = assemble_pretrain_batch(batch, vocab, encoding_for(cfg), policy, 0);

    const auto loss_fn = [&]() { return total_pretrain_loss(params, heads, pb, policy).total; };
    const GradCheckReport rep = grad_check<Scalar>(named, loss_fn, o.eps, o.coords, o.seed);

    const bool pass = rep.max_rel_err < o.tol;
    json out = {{"max_rel_err", rep.max_rel_err},
                {"max_abs_err", rep.max_abs_err},
                {"worst_param", rep.worst_param},
                {"coords_checked", rep.coords_checked},
                {"tolerance", o.tol},
                {"pass", pass}};
    std::cout << out.dump(2) << "\n";
    return pass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dialenc: pre-train, fine-tune, and evaluate a dialogue encoder"};
    app.require_subcommand(1);

    GenOpts g;
    auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic labeled dialogue corpus");
    gen->add_option("--n", g.n, "number of dialogues")->check(CLI::PositiveNumber);
    gen->add_option("--mean-turns", g.mean_turns, "mean utterances per dialogue (>= 2)");
    gen->add_option("--intents", g.intents, "number of intent labels");
    gen->add_option("--emotions", g.emotions, "number of emotion labels");
    gen->add_option("--entity-types", g.entity_types, "number of entity types");
    gen->add_option("--pool", g.pool, "pseudo-word pool size");
    gen->add_option("--seed", g.seed, "generation seed");
    gen->add_option("--out", g.out, "output JSONL path")->required();

    PretrainOpts p;
    auto* pre = app.add_subcommand("pretrain", "Self-supervised pre-training on a dialogue corpus");
    pre->add_option("--corpus", p.corpus, "training corpus (JSONL)")->required();
    pre->add_option("--config", p.config, "model size")
        ->check(CLI::IsMember({"micro", "tiny", "paper"}));
    pre->add_option("--epochs", p.epochs, "training epochs")->check(CLI::PositiveNumber);
    pre->add_option("--batch", p.batch, "batch size (default 16; 256 for --config paper)");
    pre->add_option("--vocab-size", p.vocab_target, "BPE vocabulary target");
    pre->add_option("--workers", p.workers, "corruption worker threads");
    pre->add_option("--lr", p.lr, "peak learning rate (default 1e-3; 1e-4 for --config paper)");
    pre->add_option("--warmup", p.warmup, "warm-up steps (default total/10; 10000 for paper)");
    pre->add_option("--total-steps", p.total, "schedule length (default run length; 1e6 for paper)");
    pre->add_option("--seed", p.seed, "initialization/corruption seed");
    pre->add_option("--out", p.out, "checkpoint directory")->required();

    FinetuneOpts f;
    auto* fin = app.add_subcommand("finetune", "Fine-tune on a labeled task");
    fin->add_option("--task", f.task, "intent | emotion | ner")
        ->check(CLI::IsMember({"intent", "emotion", "ner"}))
        ->required();
    fin->add_option("--train", f.train, "train split (JSONL)")->required();
    fin->add_option("--dev", f.dev, "dev split (JSONL)")->required();
    fin->add_option("--test", f.test, "test split (JSONL)")->required();
    fin->add_option("--init", f.init, "pre-trained checkpoint to start from (scratch when absent)");
    fin->add_option("--vocab", f.vocab, "vocabulary path (default: next to --init)");
    fin->add_option("--config", f.config, "model size for scratch runs")
        ->check(CLI::IsMember({"micro", "tiny", "paper"}));
    fin->add_option("--vocab-size", f.vocab_target, "BPE vocabulary target for scratch runs");
    fin->add_option("--epochs", f.epochs, "fine-tuning epochs")->check(CLI::PositiveNumber);
    fin->add_option("--batch", f.batch, "batch size")->check(CLI::PositiveNumber);
    fin->add_option("--lr", f.lr, "peak learning rate");
    fin->add_option("--seed", f.seed, "fine-tuning seed");
    fin->add_option("--out", f.out, "output directory")->required();

    EvaluateOpts e;
    auto* ev = app.add_subcommand("evaluate", "Evaluate a fine-tuned checkpoint on a split");
    ev->add_option("--task", e.task, "expected task (checked against the checkpoint)");
    ev->add_option("--data", e.data, "evaluation split (JSONL)")->required();
    ev->add_option("--ckpt", e.ckpt, "fine-tuned checkpoint (\".ckpt\" may be omitted)")->required();
    ev->add_option("--split", e.split, "split name recorded in the report");
    ev->add_option("--vocab", e.vocab, "vocabulary path (default: next to --ckpt)");
    ev->add_option("--batch", e.batch, "evaluation batch size")->check(CLI::PositiveNumber);

    GradCheckOpts gc;
    auto* gck = app.add_subcommand("grad-check", "Finite-difference check of the full loss gradient");
    gck->add_option("--config", gc.config, "model size")
        ->check(CLI::IsMember({"micro", "tiny"}));
    gck->add_option("--seed", gc.seed, "model/batch seed");
    gck->add_option("--eps", gc.eps, "finite-difference step");
    gck->add_option("--tol", gc.tol, "max relative error to pass");
    gck->add_option("--coords", gc.coords, "sampled coordinates per parameter (0 = all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) run_gen(g);
        if (pre->parsed()) run_pretrain(p);
        if (fin->parsed()) run_finetune(f);
        if (ev->parsed()) run_evaluate(e);
        if (gck->parsed() && !run_grad_check(gc)) return 2;
        return 0;
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
}
