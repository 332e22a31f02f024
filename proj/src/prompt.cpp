#include "auxlm/prompt.hpp"

#include <cstring>
#include <deque>
#include <fstream>

#include <json.hpp>

#include "auxlm/errors.hpp"

namespace auxlm {

using nlohmann::json;

std::vector<TokenId> align_aux_labels(const std::vector<TokenId>& word_labels,
                                      const std::vector<int>& ids_per_word) {
    if (word_labels.size() != ids_per_word.size()) {
        throw Error("aux label alignment: " + std::to_string(word_labels.size()) +
                    " labels for " + std::to_string(ids_per_word.size()) + " words");
    }
    std::vector<TokenId> out;
    for (size_t i = 0; i < word_labels.size(); ++i) {
        if (ids_per_word[i] < 1) throw Error("aux label alignment: word with no ids");
        for (int j = 0; j < ids_per_word[i]; ++j) out.push_back(word_labels[i]);
    }
    return out;
}

namespace {

// One persona sentence or context utterance, encoded, with aligned labels.
struct EncodedItem {
    std::vector<TokenId> ids;
    std::vector<TokenId> aux;
    TokenId speaker_marker = -1;  // context items only
};

// Encode one component (persona or context) into per-item id/label lists.
// When a corruption track exists, its word stream is authoritative: masked
// words map to the <mask> id instead of being re-split as raw text.
std::vector<EncodedItem> encode_component(const std::vector<std::string>& raw_items,
                                          const ComponentTrack* track,
                                          const std::vector<TokenId>* track_labels,
                                          const Vocab& vocab) {
    std::vector<EncodedItem> items;
    if (track) {
        if (track_labels && track_labels->size() != track->words.size()) {
            throw Error("aux label track does not cover the component word stream");
        }
        size_t word_base = 0;
        for (size_t i = 0; i < track->items.size(); ++i) {
            EncodedItem item;
            size_t n = static_cast<size_t>(track->words_per_item[i]);
            for (size_t j = word_base; j < word_base + n; ++j) {
                bool masked = j < track->ops.size() && track->ops[j] == TokenOp::Masked;
                item.ids.push_back(masked ? SpecialTokens::mask : vocab.word_id(track->words[j]));
                item.aux.push_back(track_labels ? (*track_labels)[j] : kIgnoreLabel);
            }
            word_base += n;
            items.push_back(std::move(item));
        }
    } else {
        for (const auto& text : raw_items) {
            EncodedItem item;
            for (const auto& w : Vocab::split_words(text)) {
                item.ids.push_back(vocab.word_id(w));
                item.aux.push_back(kIgnoreLabel);
            }
            items.push_back(std::move(item));
        }
    }
    return items;
}

std::optional<EncodedExample> assemble_impl(const TrainingWindow& window,
                                            std::vector<EncodedItem> persona_items,
                                            std::vector<EncodedItem> context_items,
                                            const Vocab& vocab, int max_seq_len, double alpha,
                                            AssembleStats* stats) {
    std::vector<TokenId> response_ids = vocab.encode(window.response.text);
    // <bos> <persona> <context> <response> <eos>
    constexpr int kMarkers = 5;
    int64_t need = kMarkers + static_cast<int64_t>(response_ids.size());
    if (need > max_seq_len) {
        if (stats) ++stats->rejected;
        return std::nullopt;
    }

    auto total_len = [&] {
        int64_t len = need;
        for (const auto& it : persona_items) len += static_cast<int64_t>(it.ids.size());
        for (const auto& it : context_items) len += 1 + static_cast<int64_t>(it.ids.size());
        return len;
    };

    bool truncated = false;
    while (total_len() > max_seq_len) {
        if (!context_items.empty()) {
            context_items.erase(context_items.begin());
        } else {
            persona_items.erase(persona_items.begin());
        }
        truncated = true;
    }

    EncodedExample ex;
    ex.alpha = static_cast<float>(alpha);
    auto& ids = ex.input_ids;
    auto& aux = ex.aux_labels;
    auto push = [&](TokenId id, TokenId label) {
        ids.push_back(id);
        aux.push_back(label);
    };

    push(SpecialTokens::bos, kIgnoreLabel);
    push(SpecialTokens::persona_marker, kIgnoreLabel);
    ex.persona_span.begin = static_cast<int>(ids.size());
    for (const auto& it : persona_items) {
        for (size_t j = 0; j < it.ids.size(); ++j) push(it.ids[j], it.aux[j]);
    }
    ex.persona_span.end = static_cast<int>(ids.size());

    push(SpecialTokens::context_marker, kIgnoreLabel);
    ex.context_span.begin = static_cast<int>(ids.size());
    for (const auto& it : context_items) {
        push(it.speaker_marker, kIgnoreLabel);
        for (size_t j = 0; j < it.ids.size(); ++j) push(it.ids[j], it.aux[j]);
    }
    ex.context_span.end = static_cast<int>(ids.size());

    push(SpecialTokens::response_marker, kIgnoreLabel);
    ex.response_span.begin = static_cast<int>(ids.size());
    for (TokenId id : response_ids) push(id, kIgnoreLabel);
    ex.response_span.end = static_cast<int>(ids.size());
    push(SpecialTokens::eos, kIgnoreLabel);

    // next-token labels over [<response> marker, <eos>)
    ex.lm_labels.assign(ids.size(), kIgnoreLabel);
    int resp_marker = ex.response_span.begin - 1;
    int eos_pos = static_cast<int>(ids.size()) - 1;
    for (int t = resp_marker; t < eos_pos; ++t) ex.lm_labels[t] = ids[t + 1];

    if (stats) {
        ++stats->assembled;
        if (truncated) ++stats->truncated;
    }
    return ex;
}

TokenId marker_for(Speaker s) {
    return s == Speaker::AgentA ? SpecialTokens::speaker_a : SpecialTokens::speaker_b;
}

}  // namespace

std::optional<EncodedExample> assemble(const CorruptionOutcome& outcome,
                                       const AuxLabelTracks& aux, const Vocab& vocab,
                                       int max_seq_len, double alpha, AssembleStats* stats) {
    const TrainingWindow& w = outcome.window;
    auto persona_items =
        encode_component(w.persona, outcome.persona ? &*outcome.persona : nullptr,
                         outcome.persona ? &aux.persona : nullptr, vocab);

    std::vector<std::string> ctx_texts;
    ctx_texts.reserve(w.context.size());
    for (const auto& u : w.context) ctx_texts.push_back(u.text);
    auto context_items =
        encode_component(ctx_texts, outcome.context ? &*outcome.context : nullptr,
                         outcome.context ? &aux.context : nullptr, vocab);
    for (size_t i = 0; i < context_items.size(); ++i) {
        context_items[i].speaker_marker = marker_for(w.context[i].speaker);
    }
    return assemble_impl(w, std::move(persona_items), std::move(context_items), vocab,
                         max_seq_len, alpha, stats);
}

std::optional<EncodedExample> assemble_clean(const TrainingWindow& window, const Vocab& vocab,
                                             int max_seq_len, AssembleStats* stats) {
    CorruptionOutcome outcome;
    outcome.window = window;
    return assemble(outcome, AuxLabelTracks{}, vocab, max_seq_len, 0.0, stats);
}

std::vector<TokenId> encode_prompt(const std::vector<std::string>& persona,
                                   const std::vector<Utterance>& context, const Vocab& vocab,
                                   int max_seq_len, int reserve) {
    std::deque<std::vector<TokenId>> persona_ids;
    for (const auto& s : persona) persona_ids.push_back(vocab.encode(s));
    std::deque<std::pair<TokenId, std::vector<TokenId>>> context_ids;
    for (const auto& u : context) context_ids.emplace_back(marker_for(u.speaker), vocab.encode(u.text));

    // <bos> <persona> <context> <response>
    auto total_len = [&] {
        int64_t len = 4;
        for (const auto& v : persona_ids) len += static_cast<int64_t>(v.size());
        for (const auto& [m, v] : context_ids) len += 1 + static_cast<int64_t>(v.size());
        return len;
    };
    int64_t budget = static_cast<int64_t>(max_seq_len) - reserve;
    while (total_len() > budget && !(context_ids.empty() && persona_ids.empty())) {
        if (!context_ids.empty()) {
            context_ids.pop_front();
        } else {
            persona_ids.pop_front();
        }
    }

    std::vector<TokenId> ids;
    ids.push_back(SpecialTokens::bos);
    ids.push_back(SpecialTokens::persona_marker);
    for (const auto& v : persona_ids) ids.insert(ids.end(), v.begin(), v.end());
    ids.push_back(SpecialTokens::context_marker);
    for (const auto& [m, v] : context_ids) {
        ids.push_back(m);
        ids.insert(ids.end(), v.begin(), v.end());
    }
    ids.push_back(SpecialTokens::response_marker);
    return ids;
}

namespace {

json span_to_json(const Span& s) { return json::array({s.begin, s.end}); }

Span span_from_json(const json& j) {
    if (!j.is_array() || j.size() != 2) throw SchemaError("span must be a [begin, end] pair");
    return Span{j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

void write_examples_jsonl(const std::string& path, const std::vector<EncodedExample>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& ex : examples) {
        json j{{"input_ids", ex.input_ids},
               {"lm_labels", ex.lm_labels},
               {"aux_labels", ex.aux_labels},
               {"persona_span", span_to_json(ex.persona_span)},
               {"context_span", span_to_json(ex.context_span)},
               {"response_span", span_to_json(ex.response_span)},
               {"alpha", ex.alpha}};
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

std::vector<EncodedExample> read_examples_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<EncodedExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            EncodedExample ex;
            ex.input_ids = j.at("input_ids").get<std::vector<TokenId>>();
            ex.lm_labels = j.at("lm_labels").get<std::vector<TokenId>>();
            ex.aux_labels = j.at("aux_labels").get<std::vector<TokenId>>();
            ex.persona_span = span_from_json(j.at("persona_span"));
            ex.context_span = span_from_json(j.at("context_span"));
            ex.response_span = span_from_json(j.at("response_span"));
            ex.alpha = j.at("alpha").get<float>();
            out.push_back(std::move(ex));
        } catch (const json::exception& e) {
            throw SchemaError("'" + path + "' line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

namespace {

constexpr char kShardMagic[8] = {'a', 'u', 'x', 's', 'h', 'r', 'd', '1'};

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw SchemaError("'" + path + "': truncated shard");
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_i32_array(std::ostream& out, const std::vector<TokenId>& v) {
    for (TokenId x : v) put_u32(out, static_cast<uint32_t>(x));
}

}  // namespace

void write_shard(const std::string& path, const std::vector<EncodedExample>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(kShardMagic, 8);
    put_u32(out, static_cast<uint32_t>(examples.size()));
    for (const auto& ex : examples) {
        put_u32(out, static_cast<uint32_t>(ex.input_ids.size()));
        put_i32_array(out, ex.input_ids);
        put_i32_array(out, ex.lm_labels);
        put_i32_array(out, ex.aux_labels);
        for (const Span* s : {&ex.persona_span, &ex.context_span, &ex.response_span}) {
            put_u32(out, static_cast<uint32_t>(s->begin));
            put_u32(out, static_cast<uint32_t>(s->end));
        }
        uint32_t alpha_bits;
        static_assert(sizeof(alpha_bits) == sizeof(ex.alpha));
        std::memcpy(&alpha_bits, &ex.alpha, 4);
        put_u32(out, alpha_bits);
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

std::vector<EncodedExample> read_shard(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kShardMagic, 8) != 0) {
        throw SchemaError("'" + path + "': not an example shard");
    }
    uint32_t count = get_u32(in, path);
    std::vector<EncodedExample> out;
    out.reserve(count);
    for (uint32_t r = 0; r < count; ++r) {
        uint32_t len = get_u32(in, path);
        EncodedExample ex;
        auto read_array = [&](std::vector<TokenId>& v) {
            v.resize(len);
            for (uint32_t i = 0; i < len; ++i) v[i] = static_cast<TokenId>(get_u32(in, path));
        };
        read_array(ex.input_ids);
        read_array(ex.lm_labels);
        read_array(ex.aux_labels);
        for (Span* s : {&ex.persona_span, &ex.context_span, &ex.response_span}) {
            s->begin = static_cast<int>(get_u32(in, path));
            s->end = static_cast<int>(get_u32(in, path));
        }
        uint32_t alpha_bits = get_u32(in, path);
        std::memcpy(&ex.alpha, &alpha_bits, 4);
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace auxlm
