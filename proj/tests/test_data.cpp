#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dialenc/dialogue.hpp"
#include "dialenc/encoding.hpp"
#include "dialenc/error.hpp"
#include "dialenc/vocab.hpp"

using namespace dialenc;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "dialenc_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

Dialogue sample_dialogue() {
    Dialogue d;
    d.id = "d-1";
    d.utterances = {{Role::Q, "where is my food order"}, {Role::A, "your order ships monday"}};
    d.intent = "order_status";
    d.emotion = "neutral";
    d.entities = {{0, 12, 16, "item"}, {1, 17, 23, "date"}};
    return d;
}

}  // namespace

TEST_CASE("dialogue JSON round trip keeps every field") {
    Dialogue d = sample_dialogue();
    Dialogue back = dialogue_from_json_line(dialogue_to_json_line(d));
    CHECK(back.id == d.id);
    REQUIRE(back.utterances.size() == 2);
    CHECK(back.utterances[0].role == Role::Q);
    CHECK(back.utterances[1].text == "your order ships monday");
    CHECK(*back.intent == "order_status");
    CHECK(*back.emotion == "neutral");
    REQUIRE(back.entities.size() == 2);
    CHECK(back.entities[1].begin == 17);
    CHECK(back.entities[1].type == "date");

    Dialogue bare;
    bare.id = "d-2";
    bare.utterances = {{Role::Q, "hi"}};
    Dialogue bare_back = dialogue_from_json_line(dialogue_to_json_line(bare));
    CHECK_FALSE(bare_back.intent.has_value());
    CHECK(bare_back.entities.empty());
}

TEST_CASE("dialogue JSONL file round trip") {
    auto path = temp_file("dialogues.jsonl");
    std::vector<Dialogue> ds = {sample_dialogue(), sample_dialogue()};
    ds[1].id = "d-9";
    save_dialogues_jsonl(path.string(), ds);
    auto back = load_dialogues_jsonl(path.string());
    REQUIRE(back.size() == 2);
    CHECK(back[1].id == "d-9");
    CHECK(back[0].utterances[0].text == "where is my food order");
}

TEST_CASE("dialogue parsing rejects malformed input") {
    CHECK_THROWS_AS((void)dialogue_from_json_line("{not json"), DataError);
    CHECK_THROWS_AS((void)dialogue_from_json_line(R"({"id":"x"})"), DataError);
    CHECK_THROWS_AS((void)dialogue_from_json_line(
                        R"({"id":"x","utterances":[{"role":"bot","text":"hi"}]})"),
                    DataError);
    CHECK_THROWS_AS((void)dialogue_from_json_line(
                        R"({"id":"x","utterances":[{"role":"q","text":"hi"}],)"
                        R"("entities":[{"utt":5,"start":0,"end":1,"type":"t"}]})"),
                    DataError);
    CHECK_THROWS_AS((void)dialogue_from_json_line(
                        R"({"id":"x","utterances":[{"role":"q","text":"hi"}],)"
                        R"("entities":[{"utt":0,"start":1,"end":1,"type":"t"}]})"),
                    DataError);
    CHECK_THROWS_AS((void)load_dialogues_jsonl("/nonexistent/nowhere.jsonl"), IoError);
}

TEST_CASE("bpe training merges the most frequent pair first") {
    // (a,n) occurs 6x in banana-words, more than any other pair.
    std::vector<std::string> texts = {"banana banana banana", "bana"};
    Vocab v = Vocab::train_bpe(texts, 64);
    // First learned token after the alphabet must be "an".
    // Alphabet = {a, b, n} -> ids 7, 8, 9; first merge -> id 10.
    CHECK(v.token_text(7) == "a");
    CHECK(v.token_text(8) == "b");
    CHECK(v.token_text(9) == "n");
    CHECK(v.token_text(10) == "an");
}

TEST_CASE("bpe tie-break picks the lexicographically smallest pair") {
    // (c,d) and (a,b) both occur twice; ("a","b") < ("c","d").
    std::vector<std::string> texts = {"ab cd", "ab cd"};
    Vocab v = Vocab::train_bpe(texts, 64);
    CHECK(v.token_text(Vocab::kNumReserved + 4) == "ab");  // after alphabet a,b,c,d
    CHECK(v.token_text(Vocab::kNumReserved + 5) == "cd");
}

TEST_CASE("bpe stops when no pair repeats") {
    std::vector<std::string> texts = {"ab cd ef"};
    Vocab v = Vocab::train_bpe(texts, 1000);
    CHECK(v.size() == Vocab::kNumReserved + 6);  // alphabet only, no merges
}

TEST_CASE("bpe respects the target size") {
    std::vector<std::string> texts = {"aaaa aaaa aaaa bbbb bbbb cccc cccc"};
    Vocab v = Vocab::train_bpe(texts, Vocab::kNumReserved + 4);
    CHECK(v.size() <= Vocab::kNumReserved + 4);
}

TEST_CASE("encoding emits only content ids and exact character spans") {
    std::vector<std::string> texts = {"banana split banana split extra"};
    Vocab v = Vocab::train_bpe(texts, 128);
    auto spans = v.encode_with_spans("  banana   split ");
    REQUIRE(!spans.empty());
    int first_begin = spans.front().begin;
    CHECK(first_begin == 2);
    // Spans tile each word exactly.
    std::string text = "  banana   split ";
    for (const auto& s : spans) {
        CHECK(s.id >= Vocab::kNumReserved);
        CHECK(v.token_text(s.id) == text.substr(static_cast<size_t>(s.begin),
                                                static_cast<size_t>(s.end - s.begin)));
    }
    // "banana" fully merges given enough budget; both occurrences equal.
    auto ids = v.encode("banana banana");
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == ids[1]);
}

TEST_CASE("unknown characters fall back to the unknown id with spans") {
    Vocab v = Vocab::train_bpe({"aa bb aa"}, 64);
    auto spans = v.encode_with_spans("aZa");
    REQUIRE(spans.size() == 3);
    CHECK(spans[1].id == Vocab::kUnk);
    CHECK(spans[1].begin == 1);
    CHECK(spans[1].end == 2);
}

TEST_CASE("vocab save/load round trip preserves encodings") {
    std::vector<std::string> texts = {"the cat sat on the mat", "the cat ran", "a cat sat"};
    Vocab v = Vocab::train_bpe(texts, 48);
    auto path = temp_file("vocab.txt");
    v.save(path.string());
    Vocab w = Vocab::load(path.string());
    CHECK(w.size() == v.size());
    for (const char* probe : {"the cat", "on a mat", "zzz unseen"}) {
        auto a = v.encode(probe);
        auto b = w.encode(probe);
        CHECK(a == b);
    }
    auto bad = temp_file("notvocab.txt");
    std::ofstream(bad.string()) << "something else\n";
    CHECK_THROWS_AS((void)Vocab::load(bad.string()), DataError);
}

TEST_CASE("bpe training is deterministic") {
    std::vector<std::string> texts = {"red green blue red green", "blue red blue green red"};
    Vocab a = Vocab::train_bpe(texts, 40);
    Vocab b = Vocab::train_bpe(texts, 40);
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) CHECK(a.token_text(i) == b.token_text(i));
}

// ---------------------------------------------------------------------------
// Dialogue encoding
// ---------------------------------------------------------------------------

namespace {

Vocab tiny_vocab() {
    return Vocab::train_bpe({"alpha bravo charlie delta echo foxtrot golf hotel india juliet "
                             "alpha bravo charlie delta echo foxtrot golf hotel india juliet"},
                            256);
}

}  // namespace

TEST_CASE("encode_dialogue lays out tag-prefixed slots with aligned id rows") {
    Vocab v = tiny_vocab();
    Dialogue d;
    d.id = "e-1";
    d.utterances = {{Role::Q, "alpha bravo"}, {Role::A, "charlie"}, {Role::Q, "delta echo"}};
    EncodingConfig cfg;
    auto enc = encode_dialogue(d, v, cfg);

    REQUIRE(enc.n_utterances == 3);
    CHECK_FALSE(enc.dropped_turns);
    CHECK(enc.token_ids[0] == Vocab::kQTag);
    CHECK(enc.origins[0].is_tag);
    // Slot boundaries: tag + content per utterance.
    REQUIRE(enc.utt_begin.size() == 3);
    CHECK(enc.utt_begin[0] == 0);
    CHECK(enc.utt_count[0] == 1 + static_cast<int>(v.encode("alpha bravo").size()));
    int a_slot = enc.utt_begin[1];
    CHECK(enc.token_ids[static_cast<size_t>(a_slot)] == Vocab::kATag);
    // Role/turn/position rows.
    for (int t = 0; t < enc.length(); ++t) {
        CHECK(enc.position_ids[static_cast<size_t>(t)] == t);
        int ui = enc.origins[static_cast<size_t>(t)].utterance;
        CHECK(enc.turn_ids[static_cast<size_t>(t)] == ui + 1);
        int expect_role = d.utterances[static_cast<size_t>(ui)].role == Role::Q ? 1 : 2;
        CHECK(enc.role_ids[static_cast<size_t>(t)] == expect_role);
    }
}

TEST_CASE("encode_dialogue clips content to the per-utterance cap") {
    Vocab v = tiny_vocab();
    std::string long_text;
    for (int i = 0; i < 30; ++i) long_text += "alpha ";
    Dialogue d;
    d.id = "e-2";
    d.utterances = {{Role::Q, long_text}};
    auto enc = encode_dialogue(d, v, EncodingConfig{});
    CHECK(enc.utt_count[0] == 16);  // tag + 15
    CHECK_FALSE(enc.dropped_turns);  // per-utterance cap is not a drop
}

TEST_CASE("encode_dialogue drops turns beyond the caps and flags it") {
    Vocab v = tiny_vocab();
    Dialogue d;
    d.id = "e-3";
    for (int i = 0; i < 40; ++i)
        d.utterances.push_back({i % 2 == 0 ? Role::Q : Role::A, "alpha"});
    auto enc = encode_dialogue(d, v, EncodingConfig{});
    CHECK(enc.n_utterances == 32);
    CHECK(enc.dropped_turns);

    // Position budget: utterances of 15 long words fill 128 positions quickly.
    Dialogue d2;
    d2.id = "e-4";
    std::string text15;
    for (int i = 0; i < 15; ++i) text15 += "alpha ";
    for (int i = 0; i < 10; ++i) d2.utterances.push_back({Role::Q, text15});
    auto enc2 = encode_dialogue(d2, v, EncodingConfig{});
    CHECK(enc2.length() <= 128);
    CHECK(enc2.dropped_turns);
    CHECK(enc2.n_utterances < 10);
}

TEST_CASE("classification-token variant prepends one tagged position") {
    Vocab v = tiny_vocab();
    Dialogue d;
    d.id = "e-5";
    d.utterances = {{Role::Q, "alpha"}};
    EncodingConfig cfg;
    cfg.add_cls = true;
    auto enc = encode_dialogue(d, v, cfg);
    CHECK(enc.token_ids[0] == Vocab::kCls);
    CHECK(enc.role_ids[0] == 0);
    CHECK(enc.turn_ids[0] == 0);
    CHECK(enc.origins[0].utterance == -1);
    CHECK(enc.token_ids[1] == Vocab::kQTag);
    CHECK(enc.position_ids[2] == 2);
}

TEST_CASE("entity_token_range requires exact surviving coverage") {
    Vocab v = Vocab::train_bpe({"aa bb aa bb"}, 64);  // "aa" and "bb" merge; others split
    Dialogue d;
    d.id = "e-6";
    d.utterances = {{Role::Q, "aa bb cc"}};
    d.entities = {{0, 0, 2, "x"}, {0, 3, 5, "y"}, {0, 6, 8, "z"}};
    auto enc = encode_dialogue(d, v, EncodingConfig{});

    auto rx = entity_token_range(enc, d.entities[0]);
    REQUIRE(rx.has_value());
    CHECK(rx->second - rx->first == 1);  // "aa" is one merged token
    auto rz = entity_token_range(enc, d.entities[2]);
    REQUIRE(rz.has_value());
    CHECK(rz->second - rz->first == 2);  // "cc" stays two chars

    // Clip the utterance so "cc" is cut: entity must vanish entirely.
    EncodingConfig tight;
    tight.max_content_tokens = 3;  // aa, bb, first c
    auto enc2 = encode_dialogue(d, v, tight);
    CHECK_FALSE(entity_token_range(enc2, d.entities[2]).has_value());
    CHECK(entity_token_range(enc2, d.entities[0]).has_value());

    // A span not aligned to token boundaries cannot be represented.
    Entity partial{0, 0, 1, "x"};
    CHECK_FALSE(entity_token_range(enc, partial).has_value());

    // Multi-word spans survive: the uncovered separator is whitespace.
    Entity both{0, 0, 5, "w"};
    auto rw = entity_token_range(enc, both);
    REQUIRE(rw.has_value());
    CHECK(rw->second - rw->first == 2);  // "aa" and "bb", one merged token each
    // But a span that swallows the separator yet cuts a word does not.
    Entity cut{0, 0, 4, "w"};
    CHECK_FALSE(entity_token_range(enc, cut).has_value());
}

TEST_CASE("pad_batch pads to the longest row and masks padding") {
    Vocab v = tiny_vocab();
    Dialogue d1, d2;
    d1.id = "b-1";
    d1.utterances = {{Role::Q, "alpha bravo charlie"}};
    d2.id = "b-2";
    d2.utterances = {{Role::Q, "alpha"}, {Role::A, "bravo"}};
    auto e1 = encode_dialogue(d1, v, EncodingConfig{});
    auto e2 = encode_dialogue(d2, v, EncodingConfig{});
    auto batch = pad_batch({e1, e2});
    CHECK(batch.batch == 2);
    CHECK(batch.seq == std::max(e1.length(), e2.length()));
    for (int i = 0; i < batch.batch; ++i) {
        const auto& src = i == 0 ? e1 : e2;
        for (int t = 0; t < batch.seq; ++t) {
            size_t at = static_cast<size_t>(i) * batch.seq + static_cast<size_t>(t);
            if (t < src.length()) {
                CHECK(batch.mask[at] == 1);
                CHECK(batch.token_ids[at] == src.token_ids[static_cast<size_t>(t)]);
            } else {
                CHECK(batch.mask[at] == 0);
                CHECK(batch.token_ids[at] == Vocab::kPad);
                CHECK(batch.turn_ids[at] == 0);
            }
        }
    }
    CHECK_THROWS_AS((void)pad_batch({}), ContractError);
}
