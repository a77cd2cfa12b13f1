#include "dialenc/dialogue.hpp"

#include <json.hpp>

#include <fstream>

#include "dialenc/error.hpp"

namespace dialenc {

namespace {

using nlohmann::json;

Role parse_role(const std::string& s) {
    if (s == "q") return Role::Q;
    if (s == "a") return Role::A;
    throw DataError("unknown role \"" + s + "\" (expected \"q\" or \"a\")");
}

void validate(const Dialogue& d) {
    if (d.utterances.empty()) throw DataError("dialogue \"" + d.id + "\" has no utterances");
    for (const Entity& e : d.entities) {
        if (e.utterance < 0 || e.utterance >= static_cast<int>(d.utterances.size()))
            throw DataError("dialogue \"" + d.id + "\": entity utterance index " +
                            std::to_string(e.utterance) + " out of range");
        const std::string& text = d.utterances[static_cast<size_t>(e.utterance)].text;
        if (e.begin < 0 || e.end <= e.begin || e.end > static_cast<int>(text.size()))
            throw DataError("dialogue \"" + d.id + "\": entity span [" + std::to_string(e.begin) +
                            "," + std::to_string(e.end) + ") invalid for utterance of length " +
                            std::to_string(text.size()));
        if (e.type.empty()) throw DataError("dialogue \"" + d.id + "\": entity with empty type");
    }
}

}  // namespace

Dialogue dialogue_from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed dialogue JSON: ") + e.what());
    }
    try {
        Dialogue d;
        d.id = j.at("id").get<std::string>();
        for (const auto& ju : j.at("utterances")) {
            Utterance u;
            u.role = parse_role(ju.at("role").get<std::string>());
            u.text = ju.at("text").get<std::string>();
            d.utterances.push_back(std::move(u));
        }
        if (j.contains("intent")) d.intent = j.at("intent").get<std::string>();
        if (j.contains("emotion")) d.emotion = j.at("emotion").get<std::string>();
        if (j.contains("entities")) {
            for (const auto& je : j.at("entities")) {
                Entity e;
                e.utterance = je.at("utt").get<int>();
                e.begin = je.at("start").get<int>();
                e.end = je.at("end").get<int>();
                e.type = je.at("type").get<std::string>();
                d.entities.push_back(std::move(e));
            }
        }
        validate(d);
        return d;
    } catch (const json::exception& e) {
        throw DataError(std::string("dialogue JSON missing or mistyped field: ") + e.what());
    }
}

std::string dialogue_to_json_line(const Dialogue& d) {
    json j;
    j["id"] = d.id;
    j["utterances"] = json::array();
    for (const Utterance& u : d.utterances)
        j["utterances"].push_back({{"role", role_name(u.role)}, {"text", u.text}});
    if (d.intent) j["intent"] = *d.intent;
    if (d.emotion) j["emotion"] = *d.emotion;
    if (!d.entities.empty()) {
        j["entities"] = json::array();
        for (const Entity& e : d.entities)
            j["entities"].push_back(
                {{"utt", e.utterance}, {"start", e.begin}, {"end", e.end}, {"type", e.type}});
    }
    return j.dump();
}

std::vector<Dialogue> load_dialogues_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dialogue file \"" + path + "\"");
    std::vector<Dialogue> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(dialogue_from_json_line(line));
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_dialogues_jsonl(const std::string& path, const std::vector<Dialogue>& dialogues) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dialogue file \"" + path + "\"");
    for (const Dialogue& d : dialogues) out << dialogue_to_json_line(d) << "\n";
    if (!out) throw IoError("write failed for \"" + path + "\"");
}

}  // namespace dialenc
