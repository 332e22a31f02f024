#include "auxlm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "auxlm/rng.hpp"

namespace auxlm {

using nlohmann::json;

const char* SpecialTokens::name(TokenId id) {
    static const char* names[SpecialTokens::count] = {
        "<bos>", "<eos>", "<pad>", "<mask>", "<persona>",
        "<context>", "<response>", "<sp_a>", "<sp_b>"};
    return names[id];
}

namespace {

bool is_word_byte(unsigned char c) {
    return std::isalnum(c) || c == '\'' || c >= 0x80;
}

}  // namespace

std::vector<std::string> Vocab::split_words(std::string_view text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        unsigned char c = text[i];
        if (std::isspace(c)) {
            ++i;
        } else if (is_word_byte(c)) {
            size_t b = i;
            while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
            out.emplace_back(text.substr(b, i - b));
        } else {
            out.emplace_back(1, static_cast<char>(c));
            ++i;
        }
    }
    return out;
}

void Vocab::install_specials() {
    for (TokenId id = 0; id < SpecialTokens::count; ++id) {
        id_to_token_.emplace_back(SpecialTokens::name(id));
        token_to_id_[id_to_token_.back()] = id;
    }
    push_word("<unk>");
}

void Vocab::push_word(std::string w) {
    TokenId id = static_cast<TokenId>(id_to_token_.size());
    token_to_id_[w] = id;
    id_to_token_.push_back(std::move(w));
}

Vocab Vocab::train(const std::vector<DialogueSession>& sessions, int max_size) {
    if (max_size <= SpecialTokens::count + 1) {
        throw ConfigError("vocab max_size must exceed the special block plus <unk>");
    }
    std::map<std::string, int64_t> counts;  // ordered map gives the lexicographic tie-break
    for (const auto& s : sessions) {
        for (const auto& p : s.persona) {
            for (auto& w : split_words(p)) ++counts[w];
        }
        for (const auto& t : s.turns) {
            for (auto& w : split_words(t.text)) ++counts[w];
        }
    }
    if (counts.empty()) throw SchemaError("cannot train a vocabulary on an empty corpus");

    std::vector<std::pair<std::string, int64_t>> freq(counts.begin(), counts.end());
    std::stable_sort(freq.begin(), freq.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    size_t capacity = static_cast<size_t>(max_size - SpecialTokens::count);
    Vocab v;
    v.install_specials();
    for (size_t i = 0; i < freq.size() && i < capacity; ++i) v.push_word(freq[i].first);
    return v;
}

TokenId Vocab::word_id(const std::string& word) const {
    auto it = token_to_id_.find(word);
    if (it == token_to_id_.end() || it->second < SpecialTokens::count) return kUnkId;
    return it->second;
}

bool Vocab::contains_word(const std::string& word) const {
    auto it = token_to_id_.find(word);
    return it != token_to_id_.end() && it->second >= kFirstWordId;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size()) {
        throw Error("token id " + std::to_string(id) + " out of range [0," +
                    std::to_string(id_to_token_.size()) + ")");
    }
    return id_to_token_[id];
}

const std::string& Vocab::word_at(size_t word_index) const {
    return token(static_cast<TokenId>(kFirstWordId + word_index));
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
    std::vector<TokenId> out;
    for (const auto& w : split_words(text)) out.push_back(word_id(w));
    return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
        if (!out.empty()) out += ' ';
        out += token(id);
    }
    return out;
}

uint64_t Vocab::hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& t : id_to_token_) {
        h = mix64(h ^ fnv1a64(t));
    }
    return h;
}

void Vocab::save(const std::string& path) const {
    json specials;
    for (TokenId id = 0; id < SpecialTokens::count; ++id) specials[SpecialTokens::name(id)] = id;
    json tokens = json::object();
    for (size_t id = 0; id < id_to_token_.size(); ++id) {
        tokens[id_to_token_[id]] = id;
    }
    json doc = {{"size", size()}, {"special_tokens", std::move(specials)}, {"tokens", std::move(tokens)}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("write failure on '" + path + "'");
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("'" + path + "': " + e.what());
    }
    if (!doc.contains("tokens") || !doc["tokens"].is_object()) {
        throw SchemaError("'" + path + "': missing required key 'tokens'");
    }
    size_t n = doc["tokens"].size();
    Vocab v;
    v.id_to_token_.resize(n);
    for (auto& [tok, idj] : doc["tokens"].items()) {
        size_t id = idj.get<size_t>();
        if (id >= n) throw SchemaError("'" + path + "': ids are not dense in [0, size)");
        v.id_to_token_[id] = tok;
    }
    for (size_t id = 0; id < n; ++id) {
        if (v.id_to_token_[id].empty()) {
            throw SchemaError("'" + path + "': ids are not dense in [0, size)");
        }
        v.token_to_id_[v.id_to_token_[id]] = static_cast<TokenId>(id);
    }
    for (TokenId id = 0; id < SpecialTokens::count; ++id) {
        if (v.id_to_token_[id] != SpecialTokens::name(id)) {
            throw SchemaError("'" + path + "': special block does not match id " +
                              std::to_string(id));
        }
    }
    if (v.id_to_token_[kUnkId] != "<unk>") {
        throw SchemaError("'" + path + "': id 9 must be <unk>");
    }
    return v;
}

}  // namespace auxlm
