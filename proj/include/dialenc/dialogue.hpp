#pragma once

#include <optional>
#include <string>
#include <vector>

namespace dialenc {

enum class Role { Q, A };

inline const char* role_name(Role r) { return r == Role::Q ? "q" : "a"; }

// Character span [begin,end) inside the text of one utterance.
struct Entity {
    int utterance = 0;
    int begin = 0;
    int end = 0;
    std::string type;
};

struct Utterance {
    Role role = Role::Q;
    std::string text;
};

struct Dialogue {
    std::string id;
    std::vector<Utterance> utterances;
    std::optional<std::string> intent;
    std::optional<std::string> emotion;
    std::vector<Entity> entities;
};

// JSONL, one dialogue per line:
//   {"id": "...", "utterances": [{"role": "q"|"a", "text": "..."}, ...],
//    "intent"?: "...", "emotion"?: "...",
//    "entities"?: [{"utt": i, "start": b, "end": e, "type": "..."}]}
std::vector<Dialogue> load_dialogues_jsonl(const std::string& path);
void save_dialogues_jsonl(const std::string& path, const std::vector<Dialogue>& dialogues);

std::string dialogue_to_json_line(const Dialogue& d);
Dialogue dialogue_from_json_line(const std::string& line);

}  // namespace dialenc
