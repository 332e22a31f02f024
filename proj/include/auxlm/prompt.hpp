#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "auxlm/corruption.hpp"
#include "auxlm/tokenizer.hpp"

namespace auxlm {

struct Span {
    int begin = 0;
    int end = 0;  // half-open

    int size() const { return end - begin; }
    bool contains(int i) const { return i >= begin && i < end; }
    bool operator==(const Span&) const = default;
};

// One training example in the canonical layout:
//   <bos> <persona> p-words <context> (<sp_a>|<sp_b> u-words)* <response> r-words <eos>
// lm_labels[t] = input_ids[t+1] on [response_marker, eos), ignore elsewhere.
// aux_labels cover persona/context word positions, ignore elsewhere.
struct EncodedExample {
    std::vector<TokenId> input_ids;
    std::vector<TokenId> lm_labels;
    std::vector<TokenId> aux_labels;
    Span persona_span;   // word positions after <persona>, before <context>
    Span context_span;   // positions after <context>, before <response> (incl. speaker marks)
    Span response_span;  // word positions after <response>, before <eos>
    float alpha = 0.0f;

    bool operator==(const EncodedExample&) const = default;
};

struct AssembleStats {
    int64_t assembled = 0;
    int64_t truncated = 0;  // examples that lost persona/context items
    int64_t rejected = 0;   // response + markers alone exceed max_seq_len
};

// Word-level labels replicated across each word's ids; sizes must agree.
std::vector<TokenId> align_aux_labels(const std::vector<TokenId>& word_labels,
                                      const std::vector<int>& ids_per_word);

// Assemble a (possibly corrupted) window. Left-truncation drops oldest
// context utterances first, then oldest persona sentences; the response is
// never truncated. Returns nullopt (and counts a rejection) when the
// response plus markers alone cannot fit.
std::optional<EncodedExample> assemble(const CorruptionOutcome& outcome,
                                       const AuxLabelTracks& aux, const Vocab& vocab,
                                       int max_seq_len, double alpha,
                                       AssembleStats* stats = nullptr);

// Uncorrupted window; aux labels all ignore.
std::optional<EncodedExample> assemble_clean(const TrainingWindow& window, const Vocab& vocab,
                                             int max_seq_len, AssembleStats* stats = nullptr);

// Generation-time prompt, ending at the <response> marker. Truncates like
// assemble so that |ids| + reserve <= max_seq_len.
std::vector<TokenId> encode_prompt(const std::vector<std::string>& persona,
                                   const std::vector<Utterance>& context, const Vocab& vocab,
                                   int max_seq_len, int reserve);

// Inspection format: JSONL of {input_ids, lm_labels, aux_labels, spans, alpha}.
void write_examples_jsonl(const std::string& path, const std::vector<EncodedExample>& examples);
std::vector<EncodedExample> read_examples_jsonl(const std::string& path);

// Training format: little-endian binary, length-prefixed records.
void write_shard(const std::string& path, const std::vector<EncodedExample>& examples);
std::vector<EncodedExample> read_shard(const std::string& path);

}  // namespace auxlm
