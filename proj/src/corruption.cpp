#include "dialenc/corruption.hpp"

#include <json.hpp>

#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "dialenc/error.hpp"

namespace dialenc {

namespace {

// Content positions of a slot exclude its leading role tag.
int slot_content_begin(const EncodedDialogue& e, int u) {
    return e.utt_begin[static_cast<size_t>(u)] + 1;
}
int slot_content_count(const EncodedDialogue& e, int u) {
    return e.utt_count[static_cast<size_t>(u)] - 1;
}

std::vector<int> slots_with_content(const EncodedDialogue& e) {
    std::vector<int> out;
    for (int u = 0; u < e.n_utterances; ++u)
        if (slot_content_count(e, u) > 0) out.push_back(u);
    return out;
}

}  // namespace

const char* structural_task_name(StructuralTask t) {
    switch (t) {
        case StructuralTask::UtteranceMask: return "utterance_mask";
        case StructuralTask::Replacement: return "replacement";
        case StructuralTask::TurnSwap: return "turn_swap";
        default: return "none";
    }
}

void apply_utterance_mask(EncodedDialogue& enc, Rng& rng, std::vector<int>& positions,
                          std::vector<int>& targets) {
    if (enc.n_utterances < 2)
        throw NotEnoughContext("utterance masking needs at least two utterances");
    auto eligible = slots_with_content(enc);
    if (eligible.empty())
        throw NotEnoughContext("utterance masking needs an utterance with content");
    int u = eligible[static_cast<size_t>(rng.uniform_int(static_cast<int>(eligible.size())))];
    const int begin = slot_content_begin(enc, u), count = slot_content_count(enc, u);
    for (int p = begin; p < begin + count; ++p) {
        positions.push_back(p);
        targets.push_back(enc.token_ids[static_cast<size_t>(p)]);
        enc.token_ids[static_cast<size_t>(p)] = Vocab::kMask;
    }
}

uint8_t apply_replacement(EncodedDialogue& enc, const EncodedDialogue& donor, Rng& rng,
                          double repl_prob, int* chosen_slot) {
    auto own = slots_with_content(enc);
    if (own.empty()) throw NotEnoughContext("replacement probe needs a slot with content");
    auto donor_slots = slots_with_content(donor);
    if (donor_slots.empty()) throw NotEnoughContext("replacement probe needs donor content");

    int u = own[static_cast<size_t>(rng.uniform_int(static_cast<int>(own.size())))];
    if (chosen_slot) *chosen_slot = u;
    uint8_t label = rng.bernoulli(repl_prob) ? 1 : 0;
    if (!label) return 0;

    int du = donor_slots[static_cast<size_t>(rng.uniform_int(static_cast<int>(donor_slots.size())))];
    const int begin = slot_content_begin(enc, u), count = slot_content_count(enc, u);
    const int dbegin = slot_content_begin(donor, du), dcount = slot_content_count(donor, du);
    for (int t = 0; t < count; ++t)
        enc.token_ids[static_cast<size_t>(begin + t)] =
            t < dcount ? donor.token_ids[static_cast<size_t>(dbegin + t)] : Vocab::kPad;
    return 1;
}

uint8_t apply_turn_swap(EncodedDialogue& enc, Rng& rng, double swap_prob, int* slot_a,
                        int* slot_b) {
    if (enc.n_utterances < 2) throw NotEnoughContext("turn exchange needs at least two utterances");
    int a = rng.uniform_int(enc.n_utterances);
    int b = rng.uniform_int(enc.n_utterances - 1);
    if (b >= a) ++b;
    if (a > b) std::swap(a, b);
    if (slot_a) *slot_a = a;
    if (slot_b) *slot_b = b;
    uint8_t label = rng.bernoulli(swap_prob) ? 1 : 0;
    if (!label) return 0;

    // The whole slot (tag + content) moves, clipped or padded to the target
    // slot's width; role ids travel with the content while the turn-id,
    // position, and slot layout stay exactly as encoded.
    auto slot_tokens = [&](int u) {
        int begin = enc.utt_begin[static_cast<size_t>(u)], count = enc.utt_count[static_cast<size_t>(u)];
        return std::vector<int>(enc.token_ids.begin() + begin, enc.token_ids.begin() + begin + count);
    };
    std::vector<int> ta = slot_tokens(a), tb = slot_tokens(b);
    int role_a = enc.role_ids[static_cast<size_t>(enc.utt_begin[static_cast<size_t>(a)])];
    int role_b = enc.role_ids[static_cast<size_t>(enc.utt_begin[static_cast<size_t>(b)])];
    auto write = [&](int u, const std::vector<int>& tokens, int role) {
        int begin = enc.utt_begin[static_cast<size_t>(u)], count = enc.utt_count[static_cast<size_t>(u)];
        for (int t = 0; t < count; ++t) {
            enc.token_ids[static_cast<size_t>(begin + t)] =
                t < static_cast<int>(tokens.size()) ? tokens[static_cast<size_t>(t)] : Vocab::kPad;
            enc.role_ids[static_cast<size_t>(begin + t)] = role;
        }
    };
    write(a, tb, role_b);
    write(b, ta, role_a);
    return 1;
}

void apply_token_mask(EncodedDialogue& enc, Rng& rng, const CorruptionPolicy& policy,
                      const std::vector<uint8_t>& excluded_slots, int vocab_size,
                      std::vector<int>& positions, std::vector<int>& targets) {
    const int n_content_ids = vocab_size - Vocab::kNumReserved;
    if (n_content_ids < 1) throw ConfigError("vocabulary has no content ids to sample from");
    for (int p = 0; p < enc.length(); ++p) {
        const TokenOrigin& o = enc.origins[static_cast<size_t>(p)];
        if (o.is_tag || o.utterance < 0) continue;
        if (o.utterance < static_cast<int>(excluded_slots.size()) &&
            excluded_slots[static_cast<size_t>(o.utterance)])
            continue;
        if (enc.token_ids[static_cast<size_t>(p)] < Vocab::kNumReserved) continue;
        if (!rng.bernoulli(policy.mlm_rate)) continue;

        positions.push_back(p);
        targets.push_back(enc.token_ids[static_cast<size_t>(p)]);
        double r = rng.uniform();
        if (r < policy.mask_prob) {
            enc.token_ids[static_cast<size_t>(p)] = Vocab::kMask;
        } else if (r < policy.mask_prob + policy.random_prob) {
            enc.token_ids[static_cast<size_t>(p)] = Vocab::kNumReserved + rng.uniform_int(n_content_ids);
        }  // else: kept as is, still predicted
    }
}

namespace {

CorruptedSample corrupt_one(const std::vector<EncodedDialogue>& originals,
                            const CorruptionPolicy& policy, long step, int vocab_size, int i) {
    const int B = static_cast<int>(originals.size());
    if (!policy.resample_each_step) step = 0;  // static masking: one draw, reused forever
    Rng rng(derive_seed(policy.seed, static_cast<uint64_t>(step), static_cast<uint64_t>(i)));
    CorruptedSample cs;
    cs.enc = originals[static_cast<size_t>(i)];

    std::vector<StructuralTask> enabled;
    if (policy.mum) enabled.push_back(StructuralTask::UtteranceMask);
    if (policy.repl_disc) enabled.push_back(StructuralTask::Replacement);
    if (policy.turn_disc) enabled.push_back(StructuralTask::TurnSwap);

    std::vector<StructuralTask> attempts;
    if (!enabled.empty()) {
        size_t assigned = (static_cast<size_t>(step) * static_cast<size_t>(B) +
                           static_cast<size_t>(i)) %
                          enabled.size();
        attempts.push_back(enabled[assigned]);
        for (size_t k = 0; k < enabled.size(); ++k)
            if (k != assigned) attempts.push_back(enabled[k]);
    }

    std::vector<uint8_t> excluded(static_cast<size_t>(cs.enc.n_utterances), 0);
    for (StructuralTask task : attempts) {
        try {
            switch (task) {
                case StructuralTask::UtteranceMask: {
                    apply_utterance_mask(cs.enc, rng, cs.mum_positions, cs.mum_targets);
                    // Exclude the masked slot so token masking never overlaps.
                    for (int p : cs.mum_positions) {
                        int u = cs.enc.origins[static_cast<size_t>(p)].utterance;
                        if (u >= 0) excluded[static_cast<size_t>(u)] = 1;
                    }
                    break;
                }
                case StructuralTask::Replacement: {
                    if (B < 2) throw NotEnoughContext("replacement probe needs a donor dialogue");
                    int donor = (i + 1 + rng.uniform_int(B - 1)) % B;
                    int slot = -1;
                    cs.disc_label = apply_replacement(
                        cs.enc, originals[static_cast<size_t>(donor)], rng, policy.repl_prob, &slot);
                    excluded[static_cast<size_t>(slot)] = 1;
                    break;
                }
                case StructuralTask::TurnSwap: {
                    int a = -1, b = -1;
                    cs.disc_label = apply_turn_swap(cs.enc, rng, policy.swap_prob, &a, &b);
                    excluded[static_cast<size_t>(a)] = 1;
                    excluded[static_cast<size_t>(b)] = 1;
                    break;
                }
                default:
                    break;
            }
            cs.task = task;
            break;
        } catch (const NotEnoughContext&) {
            continue;  // fall back to the next structural task
        }
    }

    if (policy.mlm)
        apply_token_mask(cs.enc, rng, policy, excluded, vocab_size, cs.mlm_positions,
                         cs.mlm_targets);
    return cs;
}

}  // namespace

std::vector<CorruptedSample> corrupt_batch(const std::vector<EncodedDialogue>& originals,
                                           const CorruptionPolicy& policy, long step,
                                           int vocab_size, int n_workers) {
    if (originals.empty()) throw ContractError("corrupt_batch: empty batch");
    const int B = static_cast<int>(originals.size());
    std::vector<CorruptedSample> out(static_cast<size_t>(B));
    if (n_workers <= 1 || B == 1) {
        for (int i = 0; i < B; ++i)
            out[static_cast<size_t>(i)] = corrupt_one(originals, policy, step, vocab_size, i);
        return out;
    }

    std::exception_ptr first_error;
    std::mutex error_mu;
    std::vector<std::thread> workers;
    const int n = std::min(n_workers, B);
    for (int w = 0; w < n; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (int i = w; i < B; i += n)
                    out[static_cast<size_t>(i)] = corrupt_one(originals, policy, step, vocab_size, i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

ResponseBatch build_response_batch(const std::vector<Dialogue>& dialogues, const Vocab& vocab,
                                   const EncodingConfig& cfg) {
    ResponseBatch rb;
    std::vector<EncodedDialogue> contexts, candidates;
    for (size_t i = 0; i < dialogues.size(); ++i) {
        const Dialogue& d = dialogues[i];
        if (d.utterances.size() < 2 || d.utterances.back().role != Role::A) continue;
        Dialogue ctx = d;
        ctx.utterances.pop_back();
        Dialogue cand;
        cand.id = d.id + "#response";
        cand.utterances = {d.utterances.back()};
        contexts.push_back(encode_dialogue(ctx, vocab, cfg));
        candidates.push_back(encode_dialogue(cand, vocab, cfg));
        rb.dialogue_indices.push_back(static_cast<int>(i));
    }
    if (rb.size() < 2)
        throw DegenerateBatch("response selection needs at least two eligible dialogues, found " +
                              std::to_string(rb.size()));
    rb.context = pad_batch(contexts);
    rb.candidate = pad_batch(candidates);
    return rb;
}

void dump_corrupted_jsonl(const std::string& path, const std::vector<CorruptedSample>& samples) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write corruption dump \"" + path + "\"");
    for (const CorruptedSample& s : samples) {
        nlohmann::json j;
        j["tokens"] = s.enc.token_ids;
        j["roles"] = s.enc.role_ids;
        j["turns"] = s.enc.turn_ids;
        j["task"] = structural_task_name(s.task);
        j["disc_label"] = static_cast<int>(s.disc_label);
        j["mlm_positions"] = s.mlm_positions;
        j["mlm_targets"] = s.mlm_targets;
        j["mum_positions"] = s.mum_positions;
        j["mum_targets"] = s.mum_targets;
        out << j.dump() << "\n";
    }
}

}  // namespace dialenc
