#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "dialenc/dialogue.hpp"
#include "dialenc/vocab.hpp"

namespace dialenc {

struct EncodingConfig {
    int max_positions = 128;
    int max_turns = 32;
    int max_content_tokens = 15;  // per utterance, after the role tag
    bool add_cls = false;         // prepend a classification token at position 0
};

// Where a token came from: utterance index plus the character span it covers.
// Role tags and the optional classification token carry is_tag and an empty
// character span.
struct TokenOrigin {
    int utterance = -1;  // -1 for the classification token
    int char_begin = 0;
    int char_end = 0;
    bool is_tag = false;
};

// One dialogue flattened to parallel id rows. Each encoded utterance occupies
// a contiguous slot: its role tag followed by up to max_content_tokens
// content tokens. Positions are global (0..length-1), turn ids are 1-based
// per utterance, role ids are 0 none / 1 questioner / 2 answerer.
struct EncodedDialogue {
    std::vector<int> token_ids;
    std::vector<int> role_ids;
    std::vector<int> turn_ids;
    std::vector<int> position_ids;
    std::vector<TokenOrigin> origins;
    std::vector<int> utt_begin;  // slot start per encoded utterance
    std::vector<int> utt_count;  // slot length (tag + content)
    int n_utterances = 0;
    bool dropped_turns = false;  // some utterances did not fit the caps

    int length() const { return static_cast<int>(token_ids.size()); }
};

EncodedDialogue encode_dialogue(const Dialogue& d, const Vocab& vocab, const EncodingConfig& cfg);

// Token index range [first,last) covering the entity exactly; empty when the
// entity was clipped or truncated away (such entities are dropped outright).
std::optional<std::pair<int, int>> entity_token_range(const EncodedDialogue& enc, const Entity& e);

// Dialogues padded to a common length with an attention mask; row-major B x N.
struct EncodedBatch {
    int batch = 0;
    int seq = 0;
    std::vector<int> token_ids;
    std::vector<int> role_ids;
    std::vector<int> turn_ids;
    std::vector<int> position_ids;
    std::vector<uint8_t> mask;  // 1 = real token, 0 = padding

    std::vector<uint8_t> row_mask(int b) const {
        return {mask.begin() + static_cast<long>(b) * seq,
                mask.begin() + static_cast<long>(b + 1) * seq};
    }
};

EncodedBatch pad_batch(const std::vector<EncodedDialogue>& items);

}  // namespace dialenc
