#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace dialenc {

// Byte-pair-encoded vocabulary over whitespace-separated words. Seven ids are
// reserved ahead of the learned inventory; content tokens start at
// kNumReserved. Merges never cross word boundaries, so no learned token ever
// contains whitespace.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kMask = 2;
    static constexpr int kQTag = 3;
    static constexpr int kATag = 4;
    static constexpr int kCls = 5;
    static constexpr int kSep = 6;
    static constexpr int kNumReserved = 7;

    // Trains greedily: most frequent adjacent pair first, ties broken by the
    // lexicographically smallest (left text, right text); stops at target_size
    // or when no pair occurs at least twice.
    static Vocab train_bpe(const std::vector<std::string>& texts, int target_size);

    int size() const { return static_cast<int>(tokens_.size()); }
    static bool is_content(int id) { return id >= kNumReserved; }

    struct TokenSpan {
        int id = 0;
        int begin = 0;  // char offsets into the original text
        int end = 0;
    };

    std::vector<TokenSpan> encode_with_spans(const std::string& text) const;
    std::vector<int> encode(const std::string& text) const;
    // Debug helper; concatenates token texts, so word boundaries are lost.
    std::string decode(const std::vector<int>& ids) const;
    const std::string& token_text(int id) const;

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    Vocab() = default;

    std::vector<std::string> tokens_;                   // id -> text
    std::vector<std::pair<int, int>> merges_;           // rank -> (left id, right id)
    std::unordered_map<std::string, int> char_to_id_;   // single-char alphabet
    std::unordered_map<long long, int> merge_rank_;     // packed pair -> rank
    std::vector<int> merge_result_;                     // rank -> merged id
};

}  // namespace dialenc
