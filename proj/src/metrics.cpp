#include "dialenc/metrics.hpp"

#include <algorithm>
#include <set>

namespace dialenc {

const char* task_name(Task t) {
    switch (t) {
        case Task::Intent: return "intent";
        case Task::Emotion: return "emotion";
        case Task::Ner: return "ner";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// LabelSet
// ---------------------------------------------------------------------------

LabelSet LabelSet::classification(Task task, std::vector<std::string> class_names) {
    if (task == Task::Ner)
        throw ContractError("classification label sets cannot carry the tagging task");
    if (class_names.size() < 2) throw ConfigError("a label set needs at least 2 classes");
    LabelSet s;
    s.task_ = task;
    s.names_ = std::move(class_names);
    for (size_t i = 0; i < s.names_.size(); ++i) {
        if (!s.index_.emplace(s.names_[i], static_cast<int>(i)).second)
            throw ConfigError("duplicate label \"" + s.names_[i] + "\"");
    }
    return s;
}

LabelSet LabelSet::tagging(std::vector<std::string> entity_types) {
    if (entity_types.empty()) throw ConfigError("a tagging set needs at least one entity type");
    LabelSet s;
    s.task_ = Task::Ner;
    s.entity_types_ = std::move(entity_types);
    s.names_.push_back("O");
    for (const auto& t : s.entity_types_) {
        s.names_.push_back("B-" + t);
        s.names_.push_back("I-" + t);
    }
    for (size_t i = 0; i < s.names_.size(); ++i) {
        if (!s.index_.emplace(s.names_[i], static_cast<int>(i)).second)
            throw ConfigError("duplicate entity type \"" + s.names_[i] + "\"");
    }
    return s;
}

const std::string& LabelSet::name(int id) const {
    if (id < 0 || id >= size())
        throw IndexError("label id " + std::to_string(id) + " outside [0," +
                         std::to_string(size()) + ")");
    return names_[static_cast<size_t>(id)];
}

int LabelSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown label \"" + name + "\"");
    return it->second;
}

int LabelSet::n_types() const {
    if (task_ != Task::Ner) throw ContractError("n_types: not a tagging label set");
    return static_cast<int>(entity_types_.size());
}

int LabelSet::begin_tag(int type) const {
    if (type < 0 || type >= n_types()) throw IndexError("entity type out of range");
    return 1 + 2 * type;
}

int LabelSet::inside_tag(int type) const {
    if (type < 0 || type >= n_types()) throw IndexError("entity type out of range");
    return 2 + 2 * type;
}

const std::string& LabelSet::type_name(int type) const {
    if (task_ != Task::Ner) throw ContractError("type_name: not a tagging label set");
    if (type < 0 || type >= n_types()) throw IndexError("entity type out of range");
    return entity_types_[static_cast<size_t>(type)];
}

int LabelSet::type_of_tag(int tag) const {
    if (tag < 1 || tag >= size()) throw IndexError("tag " + std::to_string(tag) + " has no type");
    return (tag - 1) / 2;
}

// ---------------------------------------------------------------------------
// BIO decoding
// ---------------------------------------------------------------------------

std::vector<Span> decode_bio(const std::vector<int>& tags, int n_types) {
    if (n_types < 1) throw ContractError("decode_bio: need at least one entity type");
    std::vector<Span> spans;
    int cur_type = -1, cur_begin = -1;
    auto flush = [&](int end) {
        if (cur_type >= 0) spans.push_back({cur_begin, end, cur_type});
        cur_type = -1;
    };
    for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
        int t = tags[static_cast<size_t>(i)];
        if (t == 0 || t == kIgnoreTag) {
            flush(i);
            continue;
        }
        if (t < 0 || t > 2 * n_types)
            throw IndexError("decode_bio: tag " + std::to_string(t) + " outside the label set");
        if (t % 2 == 1) {  // begin
            flush(i);
            cur_type = (t - 1) / 2;
            cur_begin = i;
        } else {  // inside: continues a same-type span, otherwise repaired to begin
            int ty = (t - 2) / 2;
            if (cur_type != ty) {
                flush(i);
                cur_type = ty;
                cur_begin = i;
            }
        }
    }
    flush(static_cast<int>(tags.size()));
    return spans;
}

std::vector<Span> decode_bio(const std::vector<std::string>& names, const LabelSet& labels) {
    std::vector<int> tags;
    tags.reserve(names.size());
    for (const auto& n : names) tags.push_back(labels.index_of(n));
    return decode_bio(tags, labels.n_types());
}

// ---------------------------------------------------------------------------
// Gold-tag projection
// ---------------------------------------------------------------------------

std::vector<int> project_entity_tags(const EncodedDialogue& enc, const Dialogue& dialogue,
                                     const LabelSet& labels) {
    std::vector<int> tags(static_cast<size_t>(enc.length()), 0);
    for (int p = 0; p < enc.length(); ++p) {
        const auto& o = enc.origins[static_cast<size_t>(p)];
        if (o.is_tag || o.utterance < 0) tags[static_cast<size_t>(p)] = kIgnoreTag;
    }
    for (const auto& e : dialogue.entities) {
        auto range = entity_token_range(enc, e);  // [first, last)
        if (!range) continue;  // clipped or misaligned by encoding: no supervision
        int type = labels.type_of_tag(labels.index_of("B-" + e.type));
        for (int p = range->first; p < range->second; ++p) {
            if (tags[static_cast<size_t>(p)] != 0)
                throw DataError("dialogue \"" + dialogue.id + "\": overlapping entities at token " +
                                std::to_string(p));
            tags[static_cast<size_t>(p)] =
                p == range->first ? labels.begin_tag(type) : labels.inside_tag(type);
        }
    }
    return tags;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double accuracy(const std::vector<int>& predictions, const std::vector<int>& gold) {
    if (predictions.size() != gold.size())
        throw ContractError("accuracy: " + std::to_string(predictions.size()) +
                            " predictions vs " + std::to_string(gold.size()) + " labels");
    if (predictions.empty()) throw ContractError("accuracy: empty input");
    long hit = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == gold[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

double macro_f1(const std::vector<std::vector<Span>>& gold,
                const std::vector<std::vector<Span>>& pred,
                std::map<int, TypeScore>* breakdown) {
    if (gold.size() != pred.size())
        throw ContractError("macro_f1: example count mismatch");
    std::set<int> types;
    for (const auto& ex : gold)
        for (const auto& s : ex) types.insert(s.type);
    for (const auto& ex : pred)
        for (const auto& s : ex) types.insert(s.type);
    if (types.empty()) throw ContractError("macro_f1: no entity types in gold or predictions");

    if (breakdown) breakdown->clear();
    double sum_f1 = 0.0;
    for (int ty : types) {
        TypeScore sc;
        for (size_t e = 0; e < gold.size(); ++e) {
            std::vector<Span> g, p;
            for (const auto& s : gold[e])
                if (s.type == ty) g.push_back(s);
            for (const auto& s : pred[e])
                if (s.type == ty) p.push_back(s);
            std::sort(g.begin(), g.end());
            std::sort(p.begin(), p.end());
            std::vector<Span> inter;
            std::set_intersection(g.begin(), g.end(), p.begin(), p.end(),
                                  std::back_inserter(inter));
            sc.tp += static_cast<long>(inter.size());
            sc.fp += static_cast<long>(p.size() - inter.size());
            sc.fn += static_cast<long>(g.size() - inter.size());
        }
        sc.precision = (sc.tp + sc.fp) > 0 ? static_cast<double>(sc.tp) / (sc.tp + sc.fp) : 0.0;
        sc.recall = (sc.tp + sc.fn) > 0 ? static_cast<double>(sc.tp) / (sc.tp + sc.fn) : 0.0;
        sc.f1 = (sc.precision + sc.recall) > 0.0
                    ? 2.0 * sc.precision * sc.recall / (sc.precision + sc.recall)
                    : 0.0;
        sum_f1 += sc.f1;
        if (breakdown) (*breakdown)[ty] = sc;
    }
    return sum_f1 / static_cast<double>(types.size());
}

double token_macro_f1(const std::vector<std::vector<int>>& gold,
                      const std::vector<std::vector<int>>& pred) {
    if (gold.size() != pred.size()) throw ContractError("token_macro_f1: example count mismatch");
    std::set<int> tags;
    std::map<int, TypeScore> counts;
    for (size_t e = 0; e < gold.size(); ++e) {
        if (gold[e].size() != pred[e].size())
            throw ContractError("token_macro_f1: tag row length mismatch in example " +
                                std::to_string(e));
        for (size_t i = 0; i < gold[e].size(); ++i) {
            int g = gold[e][i], p = pred[e][i];
            if (g == kIgnoreTag) continue;  // unsupervised position
            if (g > 0) tags.insert(g);
            if (p > 0) tags.insert(p);
            if (g == p && g > 0) ++counts[g].tp;
            if (g != p) {
                if (p > 0) ++counts[p].fp;
                if (g > 0) ++counts[g].fn;
            }
        }
    }
    if (tags.empty()) throw ContractError("token_macro_f1: no entity tags in gold or predictions");
    double sum = 0.0;
    for (int t : tags) {
        auto& sc = counts[t];
        double prec = (sc.tp + sc.fp) > 0 ? static_cast<double>(sc.tp) / (sc.tp + sc.fp) : 0.0;
        double rec = (sc.tp + sc.fn) > 0 ? static_cast<double>(sc.tp) / (sc.tp + sc.fn) : 0.0;
        sum += (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    return sum / static_cast<double>(tags.size());
}

}  // namespace dialenc
