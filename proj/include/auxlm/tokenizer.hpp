#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "auxlm/corpus.hpp"

namespace auxlm {

using TokenId = int32_t;

// Label value excluding a position from a loss or metric. Never a valid id.
constexpr TokenId kIgnoreLabel = -1;

// Reserved low-id block [0, 9). Raw text can never encode to these.
struct SpecialTokens {
    static constexpr TokenId bos = 0;
    static constexpr TokenId eos = 1;
    static constexpr TokenId pad = 2;
    static constexpr TokenId mask = 3;
    static constexpr TokenId persona_marker = 4;
    static constexpr TokenId context_marker = 5;
    static constexpr TokenId response_marker = 6;
    static constexpr TokenId speaker_a = 7;
    static constexpr TokenId speaker_b = 8;
    static constexpr TokenId count = 9;

    static const char* name(TokenId id);
};

constexpr TokenId kUnkId = SpecialTokens::count;       // 9
constexpr TokenId kFirstWordId = SpecialTokens::count + 1;  // 10

// Word-level vocabulary over a reserved special block. Immutable once built.
class Vocab {
  public:
    Vocab() = default;

    // Most frequent word tokens, ties broken lexicographically. Word capacity
    // is max_size minus the special block; <unk> is not counted against it.
    static Vocab train(const std::vector<DialogueSession>& sessions, int max_size);

    static Vocab load(const std::string& path);
    void save(const std::string& path) const;

    // Splits on whitespace and punctuation boundaries, case preserved.
    // A word is a maximal run of alphanumerics / apostrophes / bytes >= 0x80;
    // every other visible char is its own token. "<mask>" in raw text comes
    // out as "<", "mask", ">", which keeps the special block unreachable.
    static std::vector<std::string> split_words(std::string_view text);

    TokenId size() const { return static_cast<TokenId>(id_to_token_.size()); }
    size_t word_count() const { return id_to_token_.size() - kFirstWordId; }

    // Word lookup; unknown words map to <unk>. Never returns a special id.
    TokenId word_id(const std::string& word) const;
    bool contains_word(const std::string& word) const;

    const std::string& token(TokenId id) const;  // throws on out-of-range id
    const std::string& word_at(size_t word_index) const;  // index into the word region

    std::vector<TokenId> encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;  // specials render as names

    uint64_t hash() const;

  private:
    void install_specials();
    void push_word(std::string w);

    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::string> id_to_token_;
};

}  // namespace auxlm
