#include "dialenc/encoding.hpp"

#include <algorithm>

#include "dialenc/error.hpp"

namespace dialenc {

EncodedDialogue encode_dialogue(const Dialogue& d, const Vocab& vocab, const EncodingConfig& cfg) {
    if (cfg.max_positions < 2 || cfg.max_turns < 1 || cfg.max_content_tokens < 0)
        throw ConfigError("encoding caps must allow at least one tagged utterance");

    EncodedDialogue enc;
    auto push = [&](int token, int role, int turn, TokenOrigin origin) {
        enc.position_ids.push_back(enc.length());
        enc.token_ids.push_back(token);
        enc.role_ids.push_back(role);
        enc.turn_ids.push_back(turn);
        enc.origins.push_back(origin);
    };

    if (cfg.add_cls) push(Vocab::kCls, 0, 0, TokenOrigin{-1, 0, 0, true});

    const int n_utts = static_cast<int>(d.utterances.size());
    for (int ui = 0; ui < n_utts; ++ui) {
        if (ui >= cfg.max_turns) {
            enc.dropped_turns = true;
            break;
        }
        int remaining = cfg.max_positions - enc.length();
        if (remaining < 1) {
            enc.dropped_turns = true;
            break;
        }
        const Utterance& u = d.utterances[static_cast<size_t>(ui)];
        const int role = u.role == Role::Q ? 1 : 2;
        const int tag = u.role == Role::Q ? Vocab::kQTag : Vocab::kATag;
        const int turn = ui + 1;

        auto spans = vocab.encode_with_spans(u.text);
        const int want = std::min(static_cast<int>(spans.size()), cfg.max_content_tokens);
        const int keep = std::min(want, remaining - 1);
        if (keep < want) enc.dropped_turns = true;  // position budget cut content

        enc.utt_begin.push_back(enc.length());
        push(tag, role, turn, TokenOrigin{ui, 0, 0, true});
        for (int t = 0; t < keep; ++t)
            push(spans[static_cast<size_t>(t)].id, role, turn,
                 TokenOrigin{ui, spans[static_cast<size_t>(t)].begin,
                             spans[static_cast<size_t>(t)].end, false});
        enc.utt_count.push_back(1 + keep);
        ++enc.n_utterances;
    }
    return enc;
}

std::optional<std::pair<int, int>> entity_token_range(const EncodedDialogue& enc, const Entity& e) {
    int first = -1, last = -1;
    int min_begin = -1, max_end = -1;
    for (int t = 0; t < enc.length(); ++t) {
        const TokenOrigin& o = enc.origins[static_cast<size_t>(t)];
        if (o.utterance != e.utterance || o.is_tag) continue;
        if (o.char_begin >= e.begin && o.char_end <= e.end) {
            if (first < 0) first = t;
            last = t;
            min_begin = min_begin < 0 ? o.char_begin : std::min(min_begin, o.char_begin);
            max_end = std::max(max_end, o.char_end);
        }
    }
    if (first < 0) return std::nullopt;
    // Both span boundaries must land exactly on token boundaries; anything
    // clipped or straddling loses the entity outright. Characters between the
    // covering tokens are necessarily the word separators the tokenizer never
    // covers, so multi-word entities survive.
    if (min_begin != e.begin || max_end != e.end) return std::nullopt;
    // The range must hold entity tokens only (no foreign token inside it).
    for (int t = first; t <= last; ++t) {
        const TokenOrigin& o = enc.origins[static_cast<size_t>(t)];
        if (o.utterance != e.utterance || o.is_tag || o.char_begin < e.begin || o.char_end > e.end)
            return std::nullopt;
    }
    return std::make_pair(first, last + 1);
}

EncodedBatch pad_batch(const std::vector<EncodedDialogue>& items) {
    if (items.empty()) throw ContractError("pad_batch: empty batch");
    EncodedBatch b;
    b.batch = static_cast<int>(items.size());
    for (const auto& it : items) b.seq = std::max(b.seq, it.length());
    if (b.seq == 0) throw ContractError("pad_batch: all dialogues encoded to zero tokens");
    const size_t total = static_cast<size_t>(b.batch) * static_cast<size_t>(b.seq);
    b.token_ids.assign(total, Vocab::kPad);
    b.role_ids.assign(total, 0);
    b.turn_ids.assign(total, 0);
    b.position_ids.assign(total, 0);
    b.mask.assign(total, 0);
    for (int i = 0; i < b.batch; ++i) {
        const EncodedDialogue& e = items[static_cast<size_t>(i)];
        const size_t base = static_cast<size_t>(i) * static_cast<size_t>(b.seq);
        for (int t = 0; t < e.length(); ++t) {
            b.token_ids[base + static_cast<size_t>(t)] = e.token_ids[static_cast<size_t>(t)];
            b.role_ids[base + static_cast<size_t>(t)] = e.role_ids[static_cast<size_t>(t)];
            b.turn_ids[base + static_cast<size_t>(t)] = e.turn_ids[static_cast<size_t>(t)];
            b.position_ids[base + static_cast<size_t>(t)] = e.position_ids[static_cast<size_t>(t)];
            b.mask[base + static_cast<size_t>(t)] = 1;
        }
    }
    return b;
}

}  // namespace dialenc
