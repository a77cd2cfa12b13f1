#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dialenc/dialogue.hpp"

namespace dialenc {

// Shape of the generated corpus. Defaults mirror the reference corpus
// statistics at desk scale: conversations average 8.59 utterances, with 8
// intents, 5 emotions, and 4 entity types.
struct CorpusSpec {
    int n_dialogues = 1000;
    double mean_turns = 8.59;
    int n_intents = 8;      // up to 102
    int n_emotions = 5;
    int n_entity_types = 4; // up to 28
    int vocab_pool = 400;   // distinct pseudo-words available to the generator
    uint64_t seed = 1;

    void validate() const;
};

// Deterministic pseudo-word: two or three consonant-vowel syllables chosen by
// index, distinct for every index.
std::string pseudo_word(int index);

// The word pools the generator plants: one distinguishing keyword per intent
// and per emotion (always placed in the first questioner utterance), disjoint
// value-word pools per entity type, and neutral filler. Labels are therefore
// recoverable by rule: scan for the keyword, and group consecutive value-pool
// words into typed spans.
struct CorpusLexicon {
    std::vector<std::string> intent_names;
    std::vector<std::string> emotion_names;
    std::vector<std::string> entity_type_names;
    std::vector<std::string> intent_keywords;               // aligned with intent_names
    std::vector<std::string> emotion_keywords;              // aligned with emotion_names
    std::vector<std::vector<std::string>> entity_values;    // per type
    std::vector<std::string> filler;
};

CorpusLexicon build_lexicon(const CorpusSpec& spec);

// Pure function of the spec: dialogue i depends only on (seed, i). Roles
// strictly alternate starting with the questioner; the turn count is
// 2 + geometric so the mean matches spec.mean_turns; every dialogue carries
// an intent, an emotion, and any planted entity spans.
std::vector<Dialogue> generate_corpus(const CorpusSpec& spec);

}  // namespace dialenc
