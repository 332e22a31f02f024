#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "auxlm/corruption.hpp"
#include "auxlm/model.hpp"
#include "auxlm/trainer.hpp"

namespace auxlm {

struct CorpusConfig {
    std::string format = "dailydialog";  // dailydialog | personachat | normalized
    std::string train_path;
    std::string valid_path;
    std::string test_path;
    std::string vocab_path;
    std::string lexicon_path;
    int max_context_turns = 6;
};

struct TokenizerConfig {
    int max_vocab = 8000;
};

struct MetricsSelection {
    std::vector<std::string> metrics = {"ppl", "bleu", "rouge_l", "average", "greedy", "extrema"};
    std::string embeddings = "model";  // model | file
    std::string vector_file;
};

// The full configuration tree. Every field is optional in the file; CLI
// flags override file values; unknown keys are rejected with their path.
struct RunConfig {
    CorpusConfig corpus;
    TokenizerConfig tokenizer;
    ModelConfig model;
    CorruptionConfig corruption;
    TrainConfig train;
    MetricsSelection metrics;
    DecodingConfig decoding;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& rc);

// Resolved snapshot written into every run directory.
void write_config_snapshot(const std::string& dir, const RunConfig& rc);

}  // namespace auxlm
