#include "dialenc/vocab.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "dialenc/error.hpp"

namespace dialenc {

namespace {

constexpr const char* kReservedNames[Vocab::kNumReserved] = {"<pad>", "<unk>", "<mask>", "<q>",
                                                             "<a>",   "<cls>", "<sep>"};

// Words are maximal runs of non-whitespace; offsets index the original text.
struct WordAt {
    std::string word;
    int begin = 0;
};

std::vector<WordAt> split_words(const std::string& text) {
    std::vector<WordAt> out;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) out.push_back({text.substr(start, i - start), static_cast<int>(start)});
    }
    return out;
}

long long pack_pair(int a, int b) { return (static_cast<long long>(a) << 32) | static_cast<unsigned>(b); }

}  // namespace

Vocab Vocab::train_bpe(const std::vector<std::string>& texts, int target_size) {
    if (target_size < kNumReserved + 1)
        throw ConfigError("vocab target size " + std::to_string(target_size) +
                          " leaves no room for content tokens");

    Vocab v;
    for (const char* name : kReservedNames) v.tokens_.emplace_back(name);

    // Word frequencies from whitespace segmentation.
    std::map<std::string, long> word_freq;
    for (const std::string& t : texts)
        for (const WordAt& w : split_words(t)) ++word_freq[w.word];

    // Single-character alphabet, sorted for a deterministic id assignment.
    std::set<char> alphabet;
    for (const auto& [word, freq] : word_freq)
        for (char c : word) alphabet.insert(c);
    for (char c : alphabet) {
        if (static_cast<int>(v.tokens_.size()) >= target_size) break;
        v.char_to_id_[std::string(1, c)] = static_cast<int>(v.tokens_.size());
        v.tokens_.emplace_back(1, c);
    }

    // Distinct words as id sequences, weighted by frequency.
    struct Entry {
        std::vector<int> ids;
        long freq;
    };
    std::vector<Entry> entries;
    for (const auto& [word, freq] : word_freq) {
        Entry e;
        e.freq = freq;
        for (char c : word) {
            auto it = v.char_to_id_.find(std::string(1, c));
            if (it == v.char_to_id_.end()) {
                e.ids.clear();  // alphabet truncated by target size; skip word
                break;
            }
            e.ids.push_back(it->second);
        }
        if (!e.ids.empty()) entries.push_back(std::move(e));
    }

    while (static_cast<int>(v.tokens_.size()) < target_size) {
        // Count all adjacent pairs.
        std::map<std::pair<int, int>, long> pair_count;
        for (const Entry& e : entries)
            for (size_t i = 0; i + 1 < e.ids.size(); ++i)
                pair_count[{e.ids[i], e.ids[i + 1]}] += e.freq;

        // Best pair: max count, ties by lexicographically smallest texts.
        long best_count = 0;
        std::pair<int, int> best{-1, -1};
        for (const auto& [pr, count] : pair_count) {
            if (count < 2) continue;
            if (count > best_count) {
                best_count = count;
                best = pr;
            } else if (count == best_count) {
                auto key = std::make_pair(v.tokens_[static_cast<size_t>(pr.first)],
                                          v.tokens_[static_cast<size_t>(pr.second)]);
                auto best_key = std::make_pair(v.tokens_[static_cast<size_t>(best.first)],
                                               v.tokens_[static_cast<size_t>(best.second)]);
                if (key < best_key) best = pr;
            }
        }
        if (best_count < 2) break;

        int new_id = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(v.tokens_[static_cast<size_t>(best.first)] +
                            v.tokens_[static_cast<size_t>(best.second)]);
        v.merge_rank_[pack_pair(best.first, best.second)] = static_cast<int>(v.merges_.size());
        v.merge_result_.push_back(new_id);
        v.merges_.push_back(best);

        // Replace the pair everywhere, left to right.
        for (Entry& e : entries) {
            std::vector<int> merged;
            merged.reserve(e.ids.size());
            for (size_t i = 0; i < e.ids.size(); ++i) {
                if (i + 1 < e.ids.size() && e.ids[i] == best.first && e.ids[i + 1] == best.second) {
                    merged.push_back(new_id);
                    ++i;
                } else {
                    merged.push_back(e.ids[i]);
                }
            }
            e.ids = std::move(merged);
        }
    }
    return v;
}

std::vector<Vocab::TokenSpan> Vocab::encode_with_spans(const std::string& text) const {
    std::vector<TokenSpan> out;
    for (const WordAt& w : split_words(text)) {
        // Start from single characters, then apply merges lowest rank first.
        std::vector<TokenSpan> syms;
        for (size_t i = 0; i < w.word.size(); ++i) {
            auto it = char_to_id_.find(std::string(1, w.word[i]));
            int id = it == char_to_id_.end() ? kUnk : it->second;
            int at = w.begin + static_cast<int>(i);
            syms.push_back({id, at, at + 1});
        }
        while (syms.size() > 1) {
            int best_rank = -1;
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = merge_rank_.find(pack_pair(syms[i].id, syms[i + 1].id));
                if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank))
                    best_rank = it->second;
            }
            if (best_rank < 0) break;
            const auto [left, right] = merges_[static_cast<size_t>(best_rank)];
            std::vector<TokenSpan> next;
            next.reserve(syms.size());
            for (size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i].id == left && syms[i + 1].id == right) {
                    next.push_back({merge_result_[static_cast<size_t>(best_rank)], syms[i].begin,
                                    syms[i + 1].end});
                    ++i;
                } else {
                    next.push_back(syms[i]);
                }
            }
            syms = std::move(next);
        }
        out.insert(out.end(), syms.begin(), syms.end());
    }
    return out;
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> out;
    for (const TokenSpan& s : encode_with_spans(text)) out.push_back(s.id);
    return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) out += token_text(id);
    return out;
}

const std::string& Vocab::token_text(int id) const {
    if (id < 0 || id >= size())
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(size()));
    return tokens_[static_cast<size_t>(id)];
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary to \"" + path + "\"");
    out << "dialenc-vocab v1\n";
    out << size() << "\n";
    // Learned tokens are reconstructable from the alphabet plus merges, so
    // only single-character tokens need their text on disk.
    int n_alpha = 0;
    for (int id = kNumReserved; id < size(); ++id)
        if (tokens_[static_cast<size_t>(id)].size() == 1 &&
            char_to_id_.count(tokens_[static_cast<size_t>(id)]))
            ++n_alpha;
    out << n_alpha << "\n";
    for (int id = kNumReserved; id < kNumReserved + n_alpha; ++id)
        out << static_cast<int>(static_cast<unsigned char>(tokens_[static_cast<size_t>(id)][0]))
            << "\n";
    out << merges_.size() << "\n";
    for (const auto& [l, r] : merges_) out << l << " " << r << "\n";
    if (!out) throw IoError("write failed for \"" + path + "\"");
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary \"" + path + "\"");
    std::string header;
    std::getline(in, header);
    if (header != "dialenc-vocab v1")
        throw DataError("\"" + path + "\" is not a v1 vocabulary file (header \"" + header + "\")");
    int total = 0, n_alpha = 0;
    in >> total >> n_alpha;
    if (!in || total < kNumReserved || n_alpha < 0)
        throw DataError("corrupt vocabulary header in \"" + path + "\"");

    Vocab v;
    for (const char* name : kReservedNames) v.tokens_.emplace_back(name);
    for (int i = 0; i < n_alpha; ++i) {
        int byte = 0;
        in >> byte;
        if (!in || byte < 0 || byte > 255) throw DataError("corrupt alphabet in \"" + path + "\"");
        std::string s(1, static_cast<char>(byte));
        v.char_to_id_[s] = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(s);
    }
    size_t n_merges = 0;
    in >> n_merges;
    for (size_t i = 0; i < n_merges; ++i) {
        int l = 0, r = 0;
        in >> l >> r;
        int limit = static_cast<int>(v.tokens_.size());
        if (!in || l < kNumReserved || r < kNumReserved || l >= limit || r >= limit)
            throw DataError("corrupt merge table in \"" + path + "\"");
        int new_id = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(v.tokens_[static_cast<size_t>(l)] + v.tokens_[static_cast<size_t>(r)]);
        v.merge_rank_[pack_pair(l, r)] = static_cast<int>(i);
        v.merge_result_.push_back(new_id);
        v.merges_.emplace_back(l, r);
    }
    if (v.size() != total)
        throw DataError("vocabulary size mismatch in \"" + path + "\": header says " +
                        std::to_string(total) + ", reconstructed " + std::to_string(v.size()));
    return v;
}

}  // namespace dialenc
