#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dialenc/dialogue.hpp"
#include "dialenc/encoding.hpp"
#include "dialenc/error.hpp"

namespace dialenc {

// ---------------------------------------------------------------------------
// Label sets
// ---------------------------------------------------------------------------

enum class Task { Intent, Emotion, Ner };

const char* task_name(Task t);

// Marks token positions that carry no supervision (role tags, the optional
// classification token, padding).
inline constexpr int kIgnoreTag = -1;

// An ordered label vocabulary. Classification sets hold one name per class;
// the tagging set is {O} followed by B-type/I-type pairs, so a set with E
// entity types has 2E + 1 tags: tag 0 is outside, 1 + 2k begins type k and
// 2 + 2k continues it.
class LabelSet {
public:
    static LabelSet classification(Task task, std::vector<std::string> class_names);
    static LabelSet tagging(std::vector<std::string> entity_types);

    Task task() const { return task_; }
    int size() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(int id) const;
    int index_of(const std::string& name) const;  // DataError on unknown names

    // Tagging-set accessors; ContractError when called on a classification set.
    int n_types() const;
    int begin_tag(int type) const;
    int inside_tag(int type) const;
    const std::string& type_name(int type) const;
    int type_of_tag(int tag) const;  // tag 1/2 -> 0, 3/4 -> 1, ...

private:
    Task task_ = Task::Intent;
    std::vector<std::string> names_;
    std::vector<std::string> entity_types_;
    std::map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Spans and BIO decoding
// ---------------------------------------------------------------------------

// Half-open token range [begin, end) carrying an entity-type index.
struct Span {
    int begin = 0;
    int end = 0;
    int type = 0;
    friend bool operator==(const Span&, const Span&) = default;
    friend auto operator<=>(const Span&, const Span&) = default;
};

// Decodes a BIO tag row into maximal spans. An inside tag that does not
// continue a compatible open span is repaired to a begin; the ignore tag acts
// like outside (it closes any open span without starting one).
std::vector<Span> decode_bio(const std::vector<int>& tags, int n_types);

// Name-level variant; unknown label strings are a data error.
std::vector<Span> decode_bio(const std::vector<std::string>& names, const LabelSet& labels);

// Projects gold entities onto the encoded token grid: role-tag positions get
// the ignore tag, content positions default to outside, and every entity that
// survived encoding (exact token coverage) becomes a B/I run. Entities
// clipped or misaligned by encoding are dropped; overlaps are a data error.
std::vector<int> project_entity_tags(const EncodedDialogue& enc, const Dialogue& dialogue,
                                     const LabelSet& labels);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double accuracy(const std::vector<int>& predictions, const std::vector<int>& gold);

struct TypeScore {
    long tp = 0, fp = 0, fn = 0;
    double precision = 0, recall = 0, f1 = 0;
};

// Span-level exact-match macro F1. The type universe is every type present in
// gold or predictions across all examples; zero-denominator precision/recall
// collapse to 0. An empty universe has no defined score.
double macro_f1(const std::vector<std::vector<Span>>& gold,
                const std::vector<std::vector<Span>>& pred,
                std::map<int, TypeScore>* breakdown = nullptr);

// Position-level macro F1 over non-outside tag ids, reported alongside the
// span score for transparency. Ignore-tagged positions never count.
double token_macro_f1(const std::vector<std::vector<int>>& gold,
                      const std::vector<std::vector<int>>& pred);

}  // namespace dialenc
