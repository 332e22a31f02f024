#include "auxlm/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace auxlm {

using nlohmann::json;

const char* to_string(AuxTask t) {
    switch (t) {
        case AuxTask::None: return "none";
        case AuxTask::UPD: return "upd";
        case AuxTask::UPR: return "upr";
        case AuxTask::UMD: return "umd";
        default: return "umr";
    }
}

const char* to_string(CorruptionTarget t) {
    switch (t) {
        case CorruptionTarget::Persona: return "persona";
        case CorruptionTarget::Context: return "context";
        case CorruptionTarget::PersonaAndContext: return "persona+context";
        default: return "random";
    }
}

const char* to_string(TokenOp op) {
    switch (op) {
        case TokenOp::Kept: return "kept";
        case TokenOp::Masked: return "masked";
        case TokenOp::SynonymSwap: return "synonym";
        case TokenOp::AntonymSwap: return "antonym";
        default: return "random";
    }
}

AuxTask aux_task_from_string(const std::string& s) {
    if (s == "none") return AuxTask::None;
    if (s == "upd") return AuxTask::UPD;
    if (s == "upr") return AuxTask::UPR;
    if (s == "umd") return AuxTask::UMD;
    if (s == "umr") return AuxTask::UMR;
    throw ConfigError("unknown auxiliary task '" + s + "' (none|upd|upr|umd|umr)");
}

CorruptionTarget target_from_string(const std::string& s) {
    if (s == "persona") return CorruptionTarget::Persona;
    if (s == "context") return CorruptionTarget::Context;
    if (s == "persona+context" || s == "both") return CorruptionTarget::PersonaAndContext;
    if (s == "random") return CorruptionTarget::Random;
    throw ConfigError("unknown corruption target '" + s + "' (persona|context|persona+context|random)");
}

CorruptionConfig CorruptionConfig::defaults_for(AuxTask task) {
    CorruptionConfig c;
    c.task = task;
    switch (task) {
        case AuxTask::None: c.alpha = 0.0; break;
        case AuxTask::UPD: c.alpha = 3.0; c.p_do = 0.15; c.p_reordered = 0.1; break;
        case AuxTask::UPR: c.alpha = 1.0; c.p_do = 0.15; c.p_reordered = 0.1; break;
        case AuxTask::UMD: c.alpha = 3.0; c.p_do = 0.15; c.p_masked = 0.8; c.p_changed = 0.5; break;
        case AuxTask::UMR: c.alpha = 1.0; c.p_do = 0.15; c.p_masked = 0.8; c.p_changed = 0.5; break;
    }
    return c;
}

void CorruptionConfig::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ConfigError(std::string("corruption.") + name + " must be in [0,1]");
        }
    };
    prob(p_do, "p_do");
    prob(p_reordered, "p_reordered");
    prob(p_masked, "p_masked");
    prob(p_changed, "p_changed");
    if (alpha < 0.0) throw ConfigError("corruption.alpha must be non-negative");
}

const Lexicon::Entry* Lexicon::find(const std::string& word) const {
    auto it = entries.find(word);
    return it == entries.end() ? nullptr : &it->second;
}

void Lexicon::add(const std::string& word, std::vector<std::string> synonyms,
                  std::vector<std::string> antonyms) {
    auto single_token = [](const std::string& w) { return Vocab::split_words(w).size() == 1; };
    auto clean = [&](std::vector<std::string>& v) {
        std::erase_if(v, [&](const std::string& c) { return c == word || !single_token(c); });
    };
    clean(synonyms);
    clean(antonyms);
    entries[word] = Entry{std::move(synonyms), std::move(antonyms)};
}

Lexicon Lexicon::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("'" + path + "': " + e.what());
    }
    if (!doc.is_object()) throw SchemaError("'" + path + "': lexicon must be a JSON object");
    Lexicon lex;
    for (auto& [word, entry] : doc.items()) {
        std::vector<std::string> syn, ant;
        if (entry.contains("synonyms")) syn = entry["synonyms"].get<std::vector<std::string>>();
        if (entry.contains("antonyms")) ant = entry["antonyms"].get<std::vector<std::string>>();
        lex.add(word, std::move(syn), std::move(ant));
    }
    return lex;
}

void Lexicon::save(const std::string& path) const {
    json doc = json::object();
    for (const auto& [word, e] : entries) {
        doc[word] = {{"synonyms", e.synonyms}, {"antonyms", e.antonyms}};
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << doc.dump(2) << "\n";
}

namespace {

constexpr uint64_t kTagSelect = fnv1a64("up-select");
constexpr uint64_t kTagWindow = fnv1a64("window");
constexpr uint64_t kTagTarget = fnv1a64("target");
constexpr uint64_t kTagPersona = fnv1a64("persona");
constexpr uint64_t kTagContext = fnv1a64("context");

}  // namespace

bool select_for_corruption(uint64_t window_index, const CorruptionConfig& cfg) {
    StreamRng rng(derive_key(cfg.seed, kTagSelect, window_index));
    return rng.bernoulli(cfg.p_do);
}

std::vector<Component> resolve_target(CorruptionTarget target, const TrainingWindow& window,
                                      StreamRng& rng, int* downgraded) {
    bool has_persona = !window.persona.empty();
    auto downgrade = [&] {
        if (downgraded) ++*downgraded;
    };
    switch (target) {
        case CorruptionTarget::Persona:
            if (has_persona) return {Component::Persona};
            downgrade();
            return {Component::Context};
        case CorruptionTarget::Context:
            return {Component::Context};
        case CorruptionTarget::PersonaAndContext:
            if (has_persona) return {Component::Persona, Component::Context};
            downgrade();
            return {Component::Context};
        case CorruptionTarget::Random:
        default: {
            bool pick_persona = rng.bernoulli(0.5);
            if (pick_persona && !has_persona) {
                downgrade();
                pick_persona = false;
            }
            return {pick_persona ? Component::Persona : Component::Context};
        }
    }
}

std::pair<std::vector<int>, std::vector<uint8_t>> permute_indices(int m, double p_reordered,
                                                                  StreamRng& rng) {
    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<uint8_t> flags(m, 0);
    if (m < 2) return {perm, flags};

    int k = std::max(2, static_cast<int>(std::ceil(p_reordered * m)));
    k = std::min(k, m);

    // k positions without replacement
    std::vector<int> pool(m);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < k; ++i) {
        int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(m - i)));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> chosen(pool.begin(), pool.begin() + k);
    std::sort(chosen.begin(), chosen.end());

    // uniform derangement among the chosen slots, by rejection
    std::vector<int> d(k);
    while (true) {
        std::iota(d.begin(), d.end(), 0);
        rng.shuffle(d);
        bool fixed = false;
        for (int i = 0; i < k; ++i) {
            if (d[i] == i) {
                fixed = true;
                break;
            }
        }
        if (!fixed) break;
    }
    for (int i = 0; i < k; ++i) {
        perm[chosen[i]] = chosen[d[i]];
        flags[chosen[i]] = 1;
    }
    return {perm, flags};
}

std::pair<std::vector<std::string>, std::vector<uint8_t>> permute_utterances(
    const std::vector<std::string>& items, double p_reordered, StreamRng& rng) {
    auto [perm, flags] = permute_indices(static_cast<int>(items.size()), p_reordered, rng);
    std::vector<std::string> permuted(items.size());
    for (size_t j = 0; j < items.size(); ++j) permuted[j] = items[perm[j]];
    return {std::move(permuted), std::move(flags)};
}

namespace {

// Uniform non-identical vocabulary word; steps to the neighbour on a self-hit.
bool random_word_swap(std::string& word, const Vocab& vocab, StreamRng& rng) {
    size_t n = vocab.word_count();
    if (n == 0) return false;
    size_t idx = static_cast<size_t>(rng.next_below(n));
    if (vocab.word_at(idx) == word) {
        if (n < 2) return false;
        idx = (idx + 1) % n;
    }
    word = vocab.word_at(idx);
    return true;
}

bool lexicon_swap(std::string& word, const std::vector<std::string>& candidates, StreamRng& rng) {
    if (candidates.empty()) return false;
    word = candidates[rng.next_below(candidates.size())];
    return true;
}

}  // namespace

void mask_tokens(std::vector<std::string>& words, const CorruptionConfig& cfg,
                 const Lexicon& lexicon, const Vocab& vocab, StreamRng& rng,
                 std::vector<TokenOp>& ops, std::vector<uint8_t>& selected) {
    ops.assign(words.size(), TokenOp::Kept);
    selected.assign(words.size(), 0);
    bool recovery = cfg.task == AuxTask::UMR;
    for (size_t i = 0; i < words.size(); ++i) {
        if (!rng.bernoulli(cfg.p_do)) continue;
        selected[i] = 1;
        if (rng.bernoulli(cfg.p_masked)) {
            if (recovery) {
                words[i] = SpecialTokens::name(SpecialTokens::mask);
                ops[i] = TokenOp::Masked;
            } else {
                const Lexicon::Entry* e = lexicon.find(words[i]);
                if (e && lexicon_swap(words[i], e->synonyms, rng)) {
                    ops[i] = TokenOp::SynonymSwap;
                } else if (random_word_swap(words[i], vocab, rng)) {
                    ops[i] = TokenOp::RandomSwap;
                }
            }
        } else if (rng.bernoulli(cfg.p_changed)) {
            if (recovery) {
                if (random_word_swap(words[i], vocab, rng)) ops[i] = TokenOp::RandomSwap;
            } else {
                const Lexicon::Entry* e = lexicon.find(words[i]);
                if (e && lexicon_swap(words[i], e->antonyms, rng)) {
                    ops[i] = TokenOp::AntonymSwap;
                } else if (random_word_swap(words[i], vocab, rng)) {
                    ops[i] = TokenOp::RandomSwap;
                }
            }
        }
        // else: kept, still marked selected
    }
}

namespace {

std::vector<std::string> component_items(const TrainingWindow& w, Component c) {
    if (c == Component::Persona) return w.persona;
    std::vector<std::string> texts;
    texts.reserve(w.context.size());
    for (const auto& u : w.context) texts.push_back(u.text);
    return texts;
}

void store_component(TrainingWindow& w, Component c, const std::vector<std::string>& items) {
    if (c == Component::Persona) {
        w.persona = items;
    } else {
        for (size_t i = 0; i < items.size(); ++i) w.context[i].text = items[i];
    }
}

ComponentTrack make_track(const std::vector<std::string>& items) {
    ComponentTrack t;
    t.items = items;
    t.moved_flags.assign(items.size(), 0);
    for (const auto& item : items) {
        auto ws = Vocab::split_words(item);
        t.words_per_item.push_back(static_cast<int>(ws.size()));
        t.words.insert(t.words.end(), ws.begin(), ws.end());
    }
    t.original_words = t.words;
    t.ops.assign(t.words.size(), TokenOp::Kept);
    t.selected.assign(t.words.size(), 0);
    return t;
}

std::string join_words(const std::vector<std::string>& ws, size_t begin, size_t count) {
    std::string out;
    for (size_t i = begin; i < begin + count; ++i) {
        if (!out.empty()) out += ' ';
        out += ws[i];
    }
    return out;
}

}  // namespace

CorruptionOutcome corrupt_window(const TrainingWindow& window, uint64_t window_index,
                                 const CorruptionConfig& cfg, const Lexicon& lexicon,
                                 const Vocab& vocab) {
    CorruptionOutcome out;
    out.window = window;
    if (cfg.task == AuxTask::None) return out;

    uint64_t base = derive_key(cfg.seed, kTagWindow, window_index);
    StreamRng target_rng(derive_key(base, kTagTarget));
    auto components = resolve_target(cfg.target, window, target_rng, &out.downgraded);

    bool up_selected = is_permutation_task(cfg.task) && select_for_corruption(window_index, cfg);

    for (Component c : components) {
        StreamRng rng(derive_key(base, c == Component::Persona ? kTagPersona : kTagContext));
        auto items = component_items(window, c);
        ComponentTrack track = make_track(items);

        if (is_permutation_task(cfg.task)) {
            if (up_selected && items.size() >= 2) {
                auto [permuted, flags] = permute_utterances(items, cfg.p_reordered, rng);
                bool any_moved = std::any_of(flags.begin(), flags.end(), [](uint8_t f) { return f; });
                if (any_moved) {
                    track.items = permuted;
                    track.moved_flags = flags;
                    track.words.clear();
                    track.words_per_item.clear();
                    for (const auto& item : permuted) {
                        auto ws = Vocab::split_words(item);
                        track.words_per_item.push_back(static_cast<int>(ws.size()));
                        track.words.insert(track.words.end(), ws.begin(), ws.end());
                    }
                    track.ops.assign(track.words.size(), TokenOp::Kept);
                    track.selected.assign(track.words.size(), 0);
                    store_component(out.window, c, permuted);
                    out.was_corrupted = true;
                }
            }
        } else {  // masking task
            mask_tokens(track.words, cfg, lexicon, vocab, rng, track.ops, track.selected);
            bool any_selected =
                std::any_of(track.selected.begin(), track.selected.end(), [](uint8_t s) { return s; });
            if (any_selected) {
                // rebuild only items whose words actually changed
                size_t word_base = 0;
                for (size_t i = 0; i < track.items.size(); ++i) {
                    size_t n = static_cast<size_t>(track.words_per_item[i]);
                    bool changed = false;
                    for (size_t j = word_base; j < word_base + n; ++j) {
                        if (track.words[j] != track.original_words[j]) {
                            changed = true;
                            break;
                        }
                    }
                    if (changed) track.items[i] = join_words(track.words, word_base, n);
                    word_base += n;
                }
                store_component(out.window, c, track.items);
                out.was_corrupted = true;
            }
        }

        if (c == Component::Persona) {
            out.persona = std::move(track);
        } else {
            out.context = std::move(track);
        }
    }
    return out;
}

namespace {

std::vector<TokenId> component_labels(const ComponentTrack& t, AuxTask task, bool was_corrupted,
                                      const Vocab& vocab) {
    size_t n = t.words.size();
    std::vector<TokenId> labels(n, kIgnoreLabel);
    switch (task) {
        case AuxTask::UPD: {
            size_t w = 0;
            for (size_t i = 0; i < t.items.size(); ++i) {
                TokenId lab = t.moved_flags[i] ? 1 : 0;
                for (int j = 0; j < t.words_per_item[i]; ++j) labels[w++] = lab;
            }
            if (w != n) throw Error("corruption: label track misaligned with word stream");
            break;
        }
        case AuxTask::UPR: {
            if (!was_corrupted) break;  // all ignore
            if (t.original_words.size() != n) {
                throw Error("corruption: permuted stream length changed");
            }
            for (size_t j = 0; j < n; ++j) labels[j] = vocab.word_id(t.original_words[j]);
            break;
        }
        case AuxTask::UMD: {
            if (t.ops.size() != n) throw Error("corruption: op track misaligned");
            for (size_t j = 0; j < n; ++j) {
                labels[j] = (t.ops[j] == TokenOp::SynonymSwap || t.ops[j] == TokenOp::AntonymSwap ||
                             t.ops[j] == TokenOp::RandomSwap)
                                ? 1
                                : 0;
            }
            break;
        }
        case AuxTask::UMR: {
            if (t.ops.size() != n || t.original_words.size() != n) {
                throw Error("corruption: masked stream length changed");
            }
            for (size_t j = 0; j < n; ++j) {
                bool labeled = t.ops[j] == TokenOp::Masked || t.ops[j] == TokenOp::RandomSwap ||
                               (t.ops[j] == TokenOp::Kept && t.selected[j]);
                if (labeled) labels[j] = vocab.word_id(t.original_words[j]);
            }
            break;
        }
        case AuxTask::None:
            break;
    }
    return labels;
}

}  // namespace

AuxLabelTracks build_aux_labels(const CorruptionOutcome& outcome, AuxTask task,
                                const Vocab& vocab) {
    AuxLabelTracks tracks;
    if (task == AuxTask::None) return tracks;
    if (outcome.persona) {
        tracks.persona = component_labels(*outcome.persona, task, outcome.was_corrupted, vocab);
    }
    if (outcome.context) {
        tracks.context = component_labels(*outcome.context, task, outcome.was_corrupted, vocab);
    }
    return tracks;
}

}  // namespace auxlm
