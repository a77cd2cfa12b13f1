#include "dialenc/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "dialenc/error.hpp"
#include "dialenc/rng.hpp"

namespace dialenc {

namespace {

constexpr int kValuesPerType = 6;
constexpr int kMinFiller = 30;

// Salt for the per-dialogue seed stream.
constexpr uint64_t kDialogueSalt = 0xC0;

std::string numbered_name(const char* prefix, int i) {
    std::string n = std::to_string(i);
    if (n.size() < 2) n.insert(n.begin(), '0');
    return std::string(prefix) + n;
}

}  // namespace

void CorpusSpec::validate() const {
    if (n_dialogues < 1) throw ConfigError("CorpusSpec: n_dialogues must be >= 1");
    if (mean_turns < 2.0) throw ConfigError("CorpusSpec: mean_turns must be >= 2");
    if (n_intents < 1 || n_intents > 102)
        throw ConfigError("CorpusSpec: n_intents must be in [1,102]");
    if (n_emotions < 1) throw ConfigError("CorpusSpec: n_emotions must be >= 1");
    if (n_entity_types < 1 || n_entity_types > 28)
        throw ConfigError("CorpusSpec: n_entity_types must be in [1,28]");
    const int reserved = n_intents + n_emotions + kValuesPerType * n_entity_types;
    if (vocab_pool < reserved + kMinFiller)
        throw ConfigError("CorpusSpec: vocab_pool of " + std::to_string(vocab_pool) +
                          " words cannot realize " + std::to_string(reserved) +
                          " distinct planted patterns plus filler");
}

std::string pseudo_word(int index) {
    if (index < 0) throw IndexError("pseudo_word: negative index");
    static const char* kSyllables[] = {
        "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du",
        "fa", "fe", "fi", "fo", "fu", "ga", "ge", "gi", "go", "gu",
        "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu",
        "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu",
        "pa", "pe", "pi", "po", "pu", "ra", "re", "ri", "ro", "ru",
        "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu",
        "va", "ve", "vi", "vo", "vu", "za", "ze", "zi", "zo", "zu",
    };
    constexpr int kNumSyllables = 70;
    constexpr int kTwoSyllable = kNumSyllables * kNumSyllables;  // 4900
    if (index < kTwoSyllable)
        return std::string(kSyllables[index / kNumSyllables]) + kSyllables[index % kNumSyllables];
    int rest = index - kTwoSyllable;
    std::string w = kSyllables[rest % kNumSyllables];
    rest /= kNumSyllables;
    w += kSyllables[rest % kNumSyllables];
    rest /= kNumSyllables;
    if (rest >= kNumSyllables)
        throw IndexError("pseudo_word: index exceeds the three-syllable range");
    return w + kSyllables[rest];
}

CorpusLexicon build_lexicon(const CorpusSpec& spec) {
    spec.validate();
    CorpusLexicon lex;
    int next = 0;
    auto take = [&next]() { return pseudo_word(next++); };

    for (int i = 0; i < spec.n_intents; ++i) {
        lex.intent_names.push_back(numbered_name("intent_", i));
        lex.intent_keywords.push_back(take());
    }
    for (int i = 0; i < spec.n_emotions; ++i) {
        lex.emotion_names.push_back(numbered_name("emotion_", i));
        lex.emotion_keywords.push_back(take());
    }
    for (int t = 0; t < spec.n_entity_types; ++t) {
        lex.entity_type_names.push_back(numbered_name("etype_", t));
        std::vector<std::string> values;
        values.reserve(kValuesPerType);
        for (int v = 0; v < kValuesPerType; ++v) values.push_back(take());
        lex.entity_values.push_back(std::move(values));
    }
    while (next < spec.vocab_pool) lex.filler.push_back(take());
    return lex;
}

namespace {

// Number of utterances: 2 + geometric(p) with p = 1/(mean - 1), so the
// expectation is exactly the configured mean and every dialogue has at least
// one exchange.
int draw_turn_count(Rng& rng, double mean_turns) {
    const double p = 1.0 / (mean_turns - 1.0);
    if (p >= 1.0) return 2;
    const double u = rng.uniform();
    const int extra = static_cast<int>(std::floor(std::log1p(-u) / std::log1p(-p)));
    return 2 + std::max(0, extra);
}

std::string join_words(const std::vector<std::string>& words) {
    std::string text;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i > 0) text += ' ';
        text += words[i];
    }
    return text;
}

// Character span of the consecutive word block [first, first+count) after
// single-space joining.
std::pair<int, int> word_block_span(const std::vector<std::string>& words, int first, int count) {
    int begin = 0;
    for (int i = 0; i < first; ++i) begin += static_cast<int>(words[i].size()) + 1;
    int end = begin;
    for (int i = first; i < first + count; ++i) {
        if (i > first) ++end;
        end += static_cast<int>(words[i].size());
    }
    return {begin, end};
}

}  // namespace

std::vector<Dialogue> generate_corpus(const CorpusSpec& spec) {
    const CorpusLexicon lex = build_lexicon(spec);
    const int n_filler = static_cast<int>(lex.filler.size());

    std::vector<Dialogue> corpus;
    corpus.reserve(static_cast<size_t>(spec.n_dialogues));
    for (int di = 0; di < spec.n_dialogues; ++di) {
        Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(di), kDialogueSalt));
        Dialogue d;
        d.id = "syn_" + std::to_string(di);

        const int n_turns = draw_turn_count(rng, spec.mean_turns);
        const int intent = rng.uniform_int(spec.n_intents);
        const int emotion = rng.uniform_int(spec.n_emotions);
        d.intent = lex.intent_names[static_cast<size_t>(intent)];
        d.emotion = lex.emotion_names[static_cast<size_t>(emotion)];

        for (int ui = 0; ui < n_turns; ++ui) {
            Utterance utt;
            utt.role = (ui % 2 == 0) ? Role::Q : Role::A;
            std::vector<std::string> words;
            if (ui == 0) {
                // The opening question carries both label keywords up front so
                // they always survive length clipping.
                const bool intent_first = rng.bernoulli(0.5);
                const std::string& ik = lex.intent_keywords[static_cast<size_t>(intent)];
                const std::string& ek = lex.emotion_keywords[static_cast<size_t>(emotion)];
                words.push_back(intent_first ? ik : ek);
                words.push_back(intent_first ? ek : ik);
                const int n_fill = 2 + rng.uniform_int(3);
                for (int w = 0; w < n_fill; ++w)
                    words.push_back(lex.filler[static_cast<size_t>(rng.uniform_int(n_filler))]);
            } else {
                const int n_fill = 2 + rng.uniform_int(5);
                for (int w = 0; w < n_fill; ++w)
                    words.push_back(lex.filler[static_cast<size_t>(rng.uniform_int(n_filler))]);
                if (rng.bernoulli(0.35)) {
                    const int type = rng.uniform_int(spec.n_entity_types);
                    const auto& pool = lex.entity_values[static_cast<size_t>(type)];
                    const int n_words = rng.bernoulli(0.5) ? 2 : 1;
                    const int first = rng.uniform_int(static_cast<int>(words.size()) + 1);
                    int v0 = rng.uniform_int(static_cast<int>(pool.size()));
                    words.insert(words.begin() + first, pool[static_cast<size_t>(v0)]);
                    if (n_words == 2) {
                        int v1 = rng.uniform_int(static_cast<int>(pool.size()) - 1);
                        if (v1 >= v0) ++v1;  // two distinct values
                        words.insert(words.begin() + first + 1, pool[static_cast<size_t>(v1)]);
                    }
                    const auto span = word_block_span(words, first, n_words);
                    Entity e;
                    e.utterance = ui;
                    e.begin = span.first;
                    e.end = span.second;
                    e.type = lex.entity_type_names[static_cast<size_t>(type)];
                    d.entities.push_back(e);
                }
            }
            utt.text = join_words(words);
            d.utterances.push_back(std::move(utt));
        }
        corpus.push_back(std::move(d));
    }
    return corpus;
}

}  // namespace dialenc
