#pragma once

// Deterministic fixtures shared across the test binaries.

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "auxlm/corpus.hpp"
#include "auxlm/corruption.hpp"
#include "auxlm/rng.hpp"
#include "auxlm/tokenizer.hpp"

namespace auxlm::testing {

inline const std::vector<std::string>& word_bank() {
    static const std::vector<std::string> bank = {
        "alpha", "bravo",  "charlie", "delta",  "echo",   "foxtrot", "golf",   "hotel",
        "india", "juliet", "kilo",    "lima",   "mike",   "november", "oscar", "papa",
        "quebec", "romeo", "sierra",  "tango",  "uniform", "victor", "whiskey", "xray",
        "yankee", "zulu",  "crimson", "cobalt", "jade",   "amber"};
    return bank;
}

inline std::string rand_utterance(StreamRng& rng, int min_words = 3, int max_words = 8) {
    const auto& bank = word_bank();
    int n = min_words + static_cast<int>(rng.next_below(
                            static_cast<uint64_t>(max_words - min_words + 1)));
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += bank[rng.next_below(bank.size())];
    }
    return out;
}

// n sessions of 2..6 alternating turns, optionally with 1..3 persona lines.
inline std::vector<DialogueSession> make_sessions(int n, uint64_t seed,
                                                  bool with_persona = false) {
    std::vector<DialogueSession> out;
    StreamRng rng(derive_key(seed, fnv1a64("sessions")));
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        DialogueSession s;
        s.id = "syn-" + std::to_string(i);
        if (with_persona) {
            int p = 1 + static_cast<int>(rng.next_below(3));
            for (int j = 0; j < p; ++j) s.persona.push_back(rand_utterance(rng, 3, 6));
        }
        int turns = 2 + static_cast<int>(rng.next_below(5));
        for (int t = 0; t < turns; ++t)
            s.turns.push_back(
                {t % 2 == 0 ? Speaker::AgentA : Speaker::AgentB, rand_utterance(rng)});
        out.push_back(std::move(s));
    }
    return out;
}

inline TrainingWindow make_window(uint64_t seed, int ctx_turns = 3, int persona_sents = 0) {
    StreamRng rng(derive_key(seed, fnv1a64("window-fixture")));
    TrainingWindow w;
    w.session_id = "fix-" + std::to_string(seed);
    for (int j = 0; j < persona_sents; ++j) w.persona.push_back(rand_utterance(rng, 3, 6));
    for (int t = 0; t < ctx_turns; ++t)
        w.context.push_back({t % 2 == 0 ? Speaker::AgentA : Speaker::AgentB, rand_utterance(rng)});
    w.response = {ctx_turns % 2 == 0 ? Speaker::AgentA : Speaker::AgentB, rand_utterance(rng)};
    return w;
}

// Every bank word gets one synonym and one antonym, both single words.
inline Lexicon make_lexicon() {
    Lexicon lex;
    const auto& bank = word_bank();
    for (size_t i = 0; i < bank.size(); ++i)
        lex.add(bank[i], {bank[(i + 1) % bank.size()]}, {bank[(i + 2) % bank.size()]});
    return lex;
}

inline Vocab make_vocab(int n_sessions = 40, uint64_t seed = 17, int max_size = 200) {
    return Vocab::train(make_sessions(n_sessions, seed), max_size);
}

// Self-cleaning scratch directory.
struct TempDir {
    std::string path;

    TempDir() {
        static std::atomic<int> counter{0};
        auto base = std::filesystem::temp_directory_path() /
                    ("auxlm_test_" + std::to_string(counter.fetch_add(1)) + "_" +
                     std::to_string(reinterpret_cast<uintptr_t>(this) & 0xffff));
        path = base.string();
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return path + "/" + name; }
};

}  // namespace auxlm::testing
