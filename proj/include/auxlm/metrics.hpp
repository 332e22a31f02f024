#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "auxlm/model.hpp"
#include "auxlm/prompt.hpp"

namespace auxlm {

std::vector<std::string> whitespace_tokens(const std::string& text);

// exp( sum NLL / count ) over all labeled LM positions, pooled corpus-wide.
double perplexity(const Transformer<float>& model, const std::vector<EncodedExample>& examples);

struct BleuResult {
    double score = 0.0;        // [0, 100]
    bool smoothed = false;     // some order had zero matches -> epsilon numerator
    int effective_max_n = 4;   // orders with no hypothesis n-grams are dropped
};

// Corpus BLEU: clipped modified n-gram precisions pooled over the corpus,
// geometric mean over orders, times brevity penalty.
BleuResult bleu_corpus(const std::vector<std::vector<std::string>>& hyps,
                       const std::vector<std::vector<std::vector<std::string>>>& refs,
                       int max_n = 4);

// LCS-based F1 for one pair; inputs must be non-empty.
double rouge_l_pair(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

struct RougeResult {
    double mean_f1 = 0.0;
    int64_t pairs = 0;    // contributing pairs
    int64_t skipped = 0;  // empty hypothesis or reference
};

RougeResult rouge_l_corpus(const std::vector<std::vector<std::string>>& hyps,
                           const std::vector<std::vector<std::string>>& refs);

struct EmbeddingProvider {
    enum class Source : uint8_t { ModelEmbeddings, VectorFile };

    Source source = Source::ModelEmbeddings;
    int dim = 0;
    std::unordered_map<std::string, std::vector<float>> table;

    // Input-embedding rows of every vocabulary word (specials excluded).
    static EmbeddingProvider from_model(const Transformer<float>& model, const Vocab& vocab);
    // Plain-text file: word followed by dim floats per line.
    static EmbeddingProvider from_file(const std::string& path);

    const std::vector<float>* find(const std::string& word) const;
};

// Per-pair scores; nullopt when either side has no in-vocabulary word.
// A zero-norm pooled vector scores 0 and bumps *zero_norm when given.
std::optional<double> emb_average(const std::vector<std::string>& hyp,
                                  const std::vector<std::string>& ref,
                                  const EmbeddingProvider& p, int64_t* zero_norm = nullptr);
std::optional<double> emb_greedy(const std::vector<std::string>& hyp,
                                 const std::vector<std::string>& ref,
                                 const EmbeddingProvider& p, int64_t* zero_norm = nullptr);
std::optional<double> emb_extrema(const std::vector<std::string>& hyp,
                                  const std::vector<std::string>& ref,
                                  const EmbeddingProvider& p, int64_t* zero_norm = nullptr);

struct EmbCorpus {
    double average = 0.0;
    double greedy = 0.0;
    double extrema = 0.0;
    int64_t pairs = 0;      // contributing pairs
    int64_t skipped = 0;    // no in-vocabulary word on one side
    int64_t zero_norm = 0;  // pairs scored 0 from a zero-norm pooled vector
};

EmbCorpus embedding_metrics_corpus(const std::vector<std::vector<std::string>>& hyps,
                                   const std::vector<std::vector<std::string>>& refs,
                                   const EmbeddingProvider& p);

// Column order mirrors the comparison table: ppl, bleu, rouge_l, average,
// greedy, extrema. Absent metrics serialize as empty cells, never zeros.
struct MetricsReport {
    std::optional<double> ppl;
    std::optional<double> bleu;
    std::optional<double> rouge_l;
    std::optional<double> emb_average;
    std::optional<double> emb_greedy;
    std::optional<double> emb_extrema;

    int64_t examples = 0;
    int64_t rouge_skipped = 0;
    int64_t emb_skipped = 0;
    int64_t emb_zero_norm = 0;
    bool bleu_smoothed = false;
    int bleu_effective_max_n = 4;

    static const char* csv_header();
    std::string csv_row() const;
    std::string to_json_string() const;
};

}  // namespace auxlm
