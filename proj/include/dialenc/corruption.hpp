#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dialenc/dialogue.hpp"
#include "dialenc/encoding.hpp"
#include "dialenc/rng.hpp"
#include "dialenc/vocab.hpp"

namespace dialenc {

// How pre-training batches are corrupted. Every random decision for sample i
// of step s flows from derive_seed(seed, s, i), so results do not depend on
// worker count or batch processing order.
struct CorruptionPolicy {
    uint64_t seed = 1;
    double mlm_rate = 0.15;    // token positions selected for masked-token prediction
    double mask_prob = 0.8;    // of selected: replaced by the mask token
    double random_prob = 0.1;  // of selected: replaced by a random content token
    double repl_prob = 0.5;    // replacement probe: chance the slot is actually replaced
    double swap_prob = 0.5;    // exchange probe: chance the pair is actually exchanged

    // Dynamic masking re-draws every corruption each step (the default).
    // Static masking (false) freezes the draw — every step sees the same
    // corrupted view of a given sample, which makes small-corpus overfit runs
    // a fixed deterministic objective.
    bool resample_each_step = true;

    bool mlm = true;
    bool mum = true;        // masked-utterance modeling
    bool repl_disc = true;  // replaced-utterance discrimination
    bool turn_disc = true;  // exchanged-turn discrimination
    bool ressel = true;     // response selection
};

// Which structural corruption was applied to a sample (besides token-level
// masking). Exactly one per sample, assigned round-robin.
enum class StructuralTask { None, UtteranceMask, Replacement, TurnSwap };

const char* structural_task_name(StructuralTask t);

struct CorruptedSample {
    EncodedDialogue enc;  // corrupted copy; origins are the original's
    std::vector<int> mlm_positions, mlm_targets;
    std::vector<int> mum_positions, mum_targets;
    StructuralTask task = StructuralTask::None;
    uint8_t disc_label = 0;  // Replacement / TurnSwap: 1 when the change happened
};

// --- individual corruptions (exposed for testing) ---------------------------

// Masks every content token of one utterance (the role tag survives).
// Requires at least two utterances, one of which has content.
void apply_utterance_mask(EncodedDialogue& enc, Rng& rng, std::vector<int>& positions,
                          std::vector<int>& targets);

// Overwrites one slot's content with a donor utterance's content (clipped to
// the slot, padded with the padding id; role/turn/position rows are kept).
// Returns 1 when the replacement actually happened.
uint8_t apply_replacement(EncodedDialogue& enc, const EncodedDialogue& donor, Rng& rng,
                          double repl_prob, int* chosen_slot = nullptr);

// Exchanges the full slot content (tag included) of two utterances without
// moving the turn-id row; role ids travel with the content. Returns 1 when
// the exchange actually happened.
uint8_t apply_turn_swap(EncodedDialogue& enc, Rng& rng, double swap_prob,
                        int* slot_a = nullptr, int* slot_b = nullptr);

// Standard masked-token corruption over content positions outside the
// excluded slots: rate-selected positions become mask / random / unchanged.
void apply_token_mask(EncodedDialogue& enc, Rng& rng, const CorruptionPolicy& policy,
                      const std::vector<uint8_t>& excluded_slots, int vocab_size,
                      std::vector<int>& positions, std::vector<int>& targets);

// --- batch assembly ----------------------------------------------------------

// Corrupts one batch for step `step`. Structural tasks rotate round-robin over
// the enabled ones; a task that cannot apply to a sample falls back to the
// next in order (utterance mask, replacement, exchange, none). n_workers
// only splits the work; results are identical for any value.
std::vector<CorruptedSample> corrupt_batch(const std::vector<EncodedDialogue>& originals,
                                           const CorruptionPolicy& policy, long step,
                                           int vocab_size, int n_workers = 1);

// Response selection: contexts are dialogues with the final utterance removed,
// candidates are that utterance alone; matching index is the target. Only
// dialogues whose last utterance is an answer qualify; fewer than two
// eligible dialogues cannot form a discrimination batch.
struct ResponseBatch {
    EncodedBatch context;
    EncodedBatch candidate;
    std::vector<int> dialogue_indices;  // into the input list
    int size() const { return static_cast<int>(dialogue_indices.size()); }
};

ResponseBatch build_response_batch(const std::vector<Dialogue>& dialogues, const Vocab& vocab,
                                   const EncodingConfig& cfg);

// One JSON line per sample, for eyeballing corruption behaviour.
void dump_corrupted_jsonl(const std::string& path, const std::vector<CorruptedSample>& samples);

}  // namespace dialenc
