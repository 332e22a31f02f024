#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "auxlm/corpus.hpp"
#include "auxlm/rng.hpp"
#include "auxlm/tokenizer.hpp"

namespace auxlm {

enum class AuxTask : uint8_t { None, UPD, UPR, UMD, UMR };
enum class CorruptionTarget : uint8_t { Persona, Context, PersonaAndContext, Random };

const char* to_string(AuxTask t);
const char* to_string(CorruptionTarget t);
AuxTask aux_task_from_string(const std::string& s);
CorruptionTarget target_from_string(const std::string& s);

inline bool is_permutation_task(AuxTask t) { return t == AuxTask::UPD || t == AuxTask::UPR; }
inline bool is_masking_task(AuxTask t) { return t == AuxTask::UMD || t == AuxTask::UMR; }
inline bool is_detection_task(AuxTask t) { return t == AuxTask::UPD || t == AuxTask::UMD; }

struct CorruptionConfig {
    AuxTask task = AuxTask::None;
    double alpha = 0.0;       // aux loss weight
    double p_do = 0.15;       // UP: fraction of dialogues; UM: fraction of tokens
    double p_reordered = 0.1; // UP: fraction of utterances moved
    double p_masked = 0.8;    // UM: mask/synonym branch
    double p_changed = 0.5;   // UM: conditional split of the remaining branch
    CorruptionTarget target = CorruptionTarget::Context;
    uint64_t seed = 0;

    static CorruptionConfig defaults_for(AuxTask task);
    void validate() const;
};

// word -> substitution candidates; a word never lists itself.
struct Lexicon {
    struct Entry {
        std::vector<std::string> synonyms;
        std::vector<std::string> antonyms;
    };
    std::unordered_map<std::string, Entry> entries;

    static Lexicon load(const std::string& path);
    void save(const std::string& path) const;
    const Entry* find(const std::string& word) const;
    void add(const std::string& word, std::vector<std::string> synonyms,
             std::vector<std::string> antonyms);
};

enum class TokenOp : uint8_t { Kept, Masked, SynonymSwap, AntonymSwap, RandomSwap };
const char* to_string(TokenOp op);

// Per-component corruption state. Items are persona sentences or context
// utterances in corrupted order; word vectors are the concatenated streams.
struct ComponentTrack {
    std::vector<std::string> items;          // corrupted item texts
    std::vector<int> words_per_item;
    std::vector<std::string> words;          // corrupted word stream
    std::vector<std::string> original_words; // pre-corruption word stream
    std::vector<uint8_t> moved_flags;        // per item (UP tasks)
    std::vector<TokenOp> ops;                // per word (UM tasks)
    std::vector<uint8_t> selected;           // per word (UM tasks)

    bool operator==(const ComponentTrack&) const = default;
};

struct CorruptionOutcome {
    TrainingWindow window;  // corrupted; equals the input when !was_corrupted
    std::optional<ComponentTrack> persona;  // present iff targeted
    std::optional<ComponentTrack> context;
    bool was_corrupted = false;
    int downgraded = 0;  // persona targets collapsed to context on empty persona

    bool operator==(const CorruptionOutcome&) const = default;
};

enum class Component : uint8_t { Persona, Context };

// Bernoulli(p_do) from a counter-based stream keyed by (seed, window_index);
// the same inputs give the same decision in any processing order.
bool select_for_corruption(uint64_t window_index, const CorruptionConfig& cfg);

// Persona -> {persona}; Context -> {context}; PersonaAndContext -> both;
// Random -> uniformly one of the two. Empty persona collapses any persona
// choice to {context}, counted via *downgraded.
std::vector<Component> resolve_target(CorruptionTarget target, const TrainingWindow& window,
                                      StreamRng& rng, int* downgraded);

// Permutation over m items: k = max(2, ceil(p_reordered * m)) positions are
// sampled without replacement and a uniform derangement is applied among
// them. m < 2 gives the identity. Returns (perm, moved_flags) where perm[j]
// is the original index of the item now at slot j.
std::pair<std::vector<int>, std::vector<uint8_t>> permute_indices(int m, double p_reordered,
                                                                  StreamRng& rng);

// Applies permute_indices to a list of utterance/sentence texts.
std::pair<std::vector<std::string>, std::vector<uint8_t>> permute_utterances(
    const std::vector<std::string>& items, double p_reordered, StreamRng& rng);

// Independent per-token selection with p_do; selected tokens branch into
// mask/synonym (p_masked), then random/antonym (p_changed), else kept.
// Length is preserved. Lexicon misses fall back to RandomSwap.
void mask_tokens(std::vector<std::string>& words, const CorruptionConfig& cfg,
                 const Lexicon& lexicon, const Vocab& vocab, StreamRng& rng,
                 std::vector<TokenOp>& ops, std::vector<uint8_t>& selected);

// Full per-window corruption, deterministic in (cfg.seed, window_index).
CorruptionOutcome corrupt_window(const TrainingWindow& window, uint64_t window_index,
                                 const CorruptionConfig& cfg, const Lexicon& lexicon,
                                 const Vocab& vocab);

// Word-level auxiliary label tracks over each targeted component, aligned to
// the corrupted word streams. kIgnoreLabel marks excluded positions.
struct AuxLabelTracks {
    std::vector<TokenId> persona;
    std::vector<TokenId> context;
};
AuxLabelTracks build_aux_labels(const CorruptionOutcome& outcome, AuxTask task,
                                const Vocab& vocab);

}  // namespace auxlm
