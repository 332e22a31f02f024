#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "auxlm/config.hpp"

namespace auxlm {

// Flag values that override the config file; unset optionals keep file/default
// values. Each cmd_* throws on failure; the CLI maps exception types to exit
// codes.

struct PrepareOptions {
    std::string config_path;
    std::optional<std::string> format;
    std::optional<std::string> train_path, valid_path, test_path;
    std::string out_dir;
    std::optional<int> max_vocab;
};
void cmd_prepare(const PrepareOptions& opt);

struct CorruptPreviewOptions {
    std::string config_path;
    std::optional<std::string> data_path;   // normalized JSONL
    std::optional<std::string> vocab_path;
    std::optional<std::string> lexicon_path;
    std::optional<std::string> task, target;
    std::optional<double> alpha;
    std::optional<uint64_t> seed;
    int64_t n = 10;
    bool stats = false;
};
void cmd_corrupt_preview(const CorruptPreviewOptions& opt);

struct TrainOptions {
    std::string config_path;
    std::string run_dir;
    std::optional<std::string> task, target;
    std::optional<double> alpha;
    std::optional<uint64_t> seed;
    std::optional<int> epochs;
    std::optional<double> learning_rate;
    std::optional<int> batch_size;
    std::optional<int64_t> warmup_steps;
    std::optional<int64_t> eval_every;
    std::optional<bool> freeze_corruption;
};
void cmd_train(const TrainOptions& opt);

struct GenerateOptions {
    std::string config_path;
    std::string checkpoint;
    std::optional<std::string> vocab_path;
    std::optional<std::string> data_path;  // batch mode input
    std::string compare_checkpoint;        // two-column mode when set
    bool repl = false;
    int64_t n = -1;  // batch windows; -1 = all
    std::optional<std::string> decode_mode;
    std::optional<double> temperature, top_p;
    std::optional<int> top_k, max_new_tokens;
    std::optional<uint64_t> seed;
};
void cmd_generate(const GenerateOptions& opt);

struct EvaluateOptions {
    std::string config_path;
    std::string checkpoint;
    std::optional<std::string> vocab_path;
    std::optional<std::string> data_path;  // test split
    std::optional<std::vector<std::string>> metrics;
    std::optional<std::string> embeddings;   // model | file
    std::optional<std::string> vector_file;
    std::string out_path;  // optional JSON report destination
    std::optional<int> max_new_tokens;
};
void cmd_evaluate(const EvaluateOptions& opt);

struct CompareOptions {
    std::string config_path;
    std::string out_dir;
    std::optional<std::string> rows;  // e.g. "none,upd:context,upr:context"
    std::optional<uint64_t> seed;
    std::optional<int> epochs;
};
void cmd_compare(const CompareOptions& opt);

}  // namespace auxlm
