#pragma once

#include <string>
#include <vector>

#include "auxlm/errors.hpp"

namespace auxlm {

enum class Speaker : uint8_t { AgentA, AgentB };
enum class Split : uint8_t { Train, Valid, Test };

const char* to_string(Speaker s);
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct Utterance {
    Speaker speaker = Speaker::AgentA;
    std::string text;  // at least one non-whitespace character

    bool operator==(const Utterance&) const = default;
};

// One dialogue: optional persona sentences plus >= 2 strictly alternating turns.
struct DialogueSession {
    std::string id;
    std::vector<std::string> persona;  // empty for DailyDialog
    std::vector<Utterance> turns;
    Split split = Split::Train;

    bool operator==(const DialogueSession&) const = default;
};

// One (persona, context, response) triple cut out of a session.
struct TrainingWindow {
    std::string session_id;
    std::vector<std::string> persona;
    std::vector<Utterance> context;  // nonempty
    Utterance response;

    bool operator==(const TrainingWindow&) const = default;
};

struct LoadStats {
    size_t sessions = 0;
    size_t skipped = 0;  // lines/dialogues that yielded < 2 usable turns
    size_t utterances = 0;
};

// Throws SchemaError if the session violates its invariants.
void validate_session(const DialogueSession& s);

// One dialogue per line, utterances separated by "__eou__". Persona lists
// stay empty; speakers alternate starting at AgentA. Lines with < 2 usable
// utterances are skipped and counted.
std::vector<DialogueSession> load_dailydialog(const std::string& path, Split split,
                                              LoadStats* stats = nullptr);

// JSON array of {"personality": [str...], "utterances": [str...]} objects,
// turns in chronological order.
std::vector<DialogueSession> load_personachat(const std::string& path, Split split,
                                              LoadStats* stats = nullptr);

// One window per turn index >= 1: response = that turn, context = up to
// max_context_turns immediately preceding turns (most recent kept).
std::vector<TrainingWindow> windowize(const DialogueSession& s, int max_context_turns);

std::vector<TrainingWindow> windowize_all(const std::vector<DialogueSession>& sessions,
                                          int max_context_turns);

// Normalized JSONL, one session per line:
//   {"id":..., "persona":[...], "turns":[{"speaker":"A"|"B","text":...}], "split":...}
void write_normalized(const std::vector<DialogueSession>& sessions, const std::string& path);
std::vector<DialogueSession> read_normalized(const std::string& path);

}  // namespace auxlm
