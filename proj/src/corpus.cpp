#include "auxlm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace auxlm {

using nlohmann::json;

const char* to_string(Speaker s) { return s == Speaker::AgentA ? "A" : "B"; }

const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        default: return "test";
    }
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "valid" || s == "validation") return Split::Valid;
    if (s == "test") return Split::Test;
    throw SchemaError("unknown split '" + s + "'");
}

namespace {

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

DialogueSession session_from_texts(std::string id, std::vector<std::string> persona,
                                   const std::vector<std::string>& texts, Split split) {
    DialogueSession s;
    s.id = std::move(id);
    s.persona = std::move(persona);
    s.split = split;
    s.turns.reserve(texts.size());
    for (size_t i = 0; i < texts.size(); ++i) {
        s.turns.push_back({i % 2 == 0 ? Speaker::AgentA : Speaker::AgentB, texts[i]});
    }
    return s;
}

}  // namespace

void validate_session(const DialogueSession& s) {
    if (s.turns.size() < 2) {
        throw SchemaError("session '" + s.id + "': needs >= 2 turns, has " +
                          std::to_string(s.turns.size()));
    }
    for (size_t i = 0; i < s.turns.size(); ++i) {
        if (is_blank(s.turns[i].text)) {
            throw SchemaError("session '" + s.id + "': turn " + std::to_string(i) + " is blank");
        }
        if (i > 0 && s.turns[i].speaker == s.turns[i - 1].speaker) {
            throw SchemaError("session '" + s.id + "': speakers do not alternate at turn " +
                              std::to_string(i));
        }
    }
}

std::vector<DialogueSession> load_dailydialog(const std::string& path, Split split,
                                              LoadStats* stats) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");

    static const std::string kDelim = "__eou__";
    std::vector<DialogueSession> out;
    LoadStats st;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (is_blank(line)) continue;
        std::vector<std::string> texts;
        size_t pos = 0;
        while (pos <= line.size()) {
            size_t hit = line.find(kDelim, pos);
            std::string seg = trim(hit == std::string::npos ? line.substr(pos)
                                                            : line.substr(pos, hit - pos));
            if (!seg.empty()) texts.push_back(std::move(seg));
            if (hit == std::string::npos) break;
            pos = hit + kDelim.size();
        }
        if (texts.size() < 2) {
            ++st.skipped;
            continue;
        }
        std::string id = std::string("dd-") + to_string(split) + "-" + std::to_string(lineno);
        out.push_back(session_from_texts(std::move(id), {}, texts, split));
        ++st.sessions;
        st.utterances += texts.size();
    }
    if (in.bad()) throw IoError("read failure on '" + path + "'");
    if (stats) *stats = st;
    return out;
}

std::vector<DialogueSession> load_personachat(const std::string& path, Split split,
                                              LoadStats* stats) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");

    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("'" + path + "': " + e.what());  // message carries the byte offset
    }
    if (!doc.is_array()) throw SchemaError("'" + path + "': top level must be a JSON array");

    std::vector<DialogueSession> out;
    LoadStats st;
    for (size_t i = 0; i < doc.size(); ++i) {
        const json& d = doc[i];
        if (!d.is_object()) {
            throw SchemaError("'" + path + "': dialogue " + std::to_string(i) + " is not an object");
        }
        for (const char* key : {"personality", "utterances"}) {
            if (!d.contains(key)) {
                throw SchemaError("'" + path + "': dialogue " + std::to_string(i) +
                                  " missing required key '" + key + "'");
            }
            if (!d[key].is_array()) {
                throw SchemaError("'" + path + "': dialogue " + std::to_string(i) + " key '" + key +
                                  "' must be an array of strings");
            }
        }
        std::vector<std::string> persona;
        for (const json& p : d["personality"]) {
            if (!p.is_string()) {
                throw SchemaError("'" + path + "': dialogue " + std::to_string(i) +
                                  " key 'personality' must contain strings");
            }
            std::string t = trim(p.get<std::string>());
            if (!t.empty()) persona.push_back(std::move(t));
        }
        std::vector<std::string> texts;
        for (const json& u : d["utterances"]) {
            if (!u.is_string()) {
                throw SchemaError("'" + path + "': dialogue " + std::to_string(i) +
                                  " key 'utterances' must contain strings");
            }
            std::string t = trim(u.get<std::string>());
            if (!t.empty()) texts.push_back(std::move(t));
        }
        if (texts.size() < 2) {
            ++st.skipped;
            continue;
        }
        std::string id = std::string("pc-") + to_string(split) + "-" + std::to_string(i);
        out.push_back(session_from_texts(std::move(id), std::move(persona), texts, split));
        ++st.sessions;
        st.utterances += texts.size();
    }
    if (stats) *stats = st;
    return out;
}

std::vector<TrainingWindow> windowize(const DialogueSession& s, int max_context_turns) {
    if (max_context_turns < 1) throw ConfigError("max_context_turns must be >= 1");
    std::vector<TrainingWindow> out;
    out.reserve(s.turns.size() - 1);
    for (size_t t = 1; t < s.turns.size(); ++t) {
        TrainingWindow w;
        w.session_id = s.id;
        w.persona = s.persona;
        size_t begin = t > static_cast<size_t>(max_context_turns) ? t - max_context_turns : 0;
        w.context.assign(s.turns.begin() + begin, s.turns.begin() + t);
        w.response = s.turns[t];
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<TrainingWindow> windowize_all(const std::vector<DialogueSession>& sessions,
                                          int max_context_turns) {
    std::vector<TrainingWindow> out;
    for (const auto& s : sessions) {
        auto ws = windowize(s, max_context_turns);
        out.insert(out.end(), std::make_move_iterator(ws.begin()),
                   std::make_move_iterator(ws.end()));
    }
    return out;
}

void write_normalized(const std::vector<DialogueSession>& sessions, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& s : sessions) {
        validate_session(s);
        json turns = json::array();
        for (const auto& t : s.turns) {
            turns.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
        }
        json line = {{"id", s.id},
                     {"persona", s.persona},
                     {"turns", std::move(turns)},
                     {"split", to_string(s.split)}};
        out << line.dump() << "\n";
    }
    if (!out) throw IoError("write failure on '" + path + "'");
}

std::vector<DialogueSession> read_normalized(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<DialogueSession> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (is_blank(line)) continue;
        try {
            json j = json::parse(line);
            DialogueSession s;
            s.id = j.at("id").get<std::string>();
            s.persona = j.at("persona").get<std::vector<std::string>>();
            for (const json& t : j.at("turns")) {
                std::string sp = t.at("speaker").get<std::string>();
                if (sp != "A" && sp != "B") throw SchemaError("speaker must be 'A' or 'B'");
                s.turns.push_back(
                    {sp == "A" ? Speaker::AgentA : Speaker::AgentB, t.at("text").get<std::string>()});
            }
            s.split = split_from_string(j.at("split").get<std::string>());
            validate_session(s);
            out.push_back(std::move(s));
        } catch (const std::exception& e) {
            throw SchemaError("'" + path + "' line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (in.bad()) throw IoError("read failure on '" + path + "'");
    return out;
}

}  // namespace auxlm
