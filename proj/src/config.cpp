#include "auxlm/config.hpp"

#include <fstream>
#include <set>

namespace auxlm {

using nlohmann::json;

namespace {

// Typed field access over one config section; collects the keys it reads so
// finish() can name any leftover (unknown) key by full path.
class Section {
  public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for '" + path_ + "." + key + "'");
        }
    }

    void get_clip(const char* key, std::optional<double>& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (it->is_null()) {
            out = std::nullopt;  // null disables clipping
            return;
        }
        try {
            out = it->get<double>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for '" + path_ + "." + key + "'");
        }
    }

    template <typename T, typename F>
    void get_parsed(const char* key, T& out, F&& parse) {
        std::string s;
        bool present = j_.contains(key);
        get(key, s);
        if (!present) return;
        try {
            out = parse(s);
        } catch (const Error& e) {
            throw ConfigError("config: '" + path_ + "." + key + "': " + e.what());
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ConfigError("config: unknown key '" + path_ + "." + it.key() + "'");
            }
        }
    }

  private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    RunConfig rc;
    std::set<std::string> known = {"corpus", "tokenizer", "model",
                                   "corruption", "train", "metrics", "decoding"};
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!known.count(it.key())) {
            throw ConfigError("config: unknown key '" + it.key() + "'");
        }
    }

    if (doc.contains("corpus")) {
        Section s(doc["corpus"], "corpus");
        s.get("format", rc.corpus.format);
        s.get("train_path", rc.corpus.train_path);
        s.get("valid_path", rc.corpus.valid_path);
        s.get("test_path", rc.corpus.test_path);
        s.get("vocab_path", rc.corpus.vocab_path);
        s.get("lexicon_path", rc.corpus.lexicon_path);
        s.get("max_context_turns", rc.corpus.max_context_turns);
        s.finish();
    }
    if (doc.contains("tokenizer")) {
        Section s(doc["tokenizer"], "tokenizer");
        s.get("max_vocab", rc.tokenizer.max_vocab);
        s.finish();
    }
    if (doc.contains("model")) {
        Section s(doc["model"], "model");
        s.get("vocab_size", rc.model.vocab_size);
        s.get("d_model", rc.model.d_model);
        s.get("n_layers", rc.model.n_layers);
        s.get("n_heads", rc.model.n_heads);
        s.get("d_ff", rc.model.d_ff);
        s.get("max_seq_len", rc.model.max_seq_len);
        s.get("dropout", rc.model.dropout);
        s.get("tie_lm_head", rc.model.tie_lm_head);
        s.get("seed", rc.model.seed);
        s.finish();
    }
    if (doc.contains("corruption")) {
        Section s(doc["corruption"], "corruption");
        std::string task;
        bool has_task = doc["corruption"].contains("task");
        s.get("task", task);
        if (has_task) rc.corruption = CorruptionConfig::defaults_for(aux_task_from_string(task));
        s.get("alpha", rc.corruption.alpha);
        s.get("p_do", rc.corruption.p_do);
        s.get("p_reordered", rc.corruption.p_reordered);
        s.get("p_masked", rc.corruption.p_masked);
        s.get("p_changed", rc.corruption.p_changed);
        s.get_parsed("target", rc.corruption.target,
                     [](const std::string& v) { return target_from_string(v); });
        s.get("seed", rc.corruption.seed);
        s.finish();
    }
    if (doc.contains("train")) {
        Section s(doc["train"], "train");
        s.get("learning_rate", rc.train.learning_rate);
        s.get("warmup_steps", rc.train.warmup_steps);
        s.get("weight_decay", rc.train.weight_decay);
        s.get("epochs", rc.train.epochs);
        s.get("batch_size", rc.train.batch_size);
        s.get_clip("grad_clip_norm", rc.train.grad_clip_norm);
        s.get("seed", rc.train.seed);
        s.get("eval_every", rc.train.eval_every);
        s.get("freeze_corruption", rc.train.freeze_corruption);
        s.finish();
    }
    if (doc.contains("metrics")) {
        Section s(doc["metrics"], "metrics");
        s.get("metrics", rc.metrics.metrics);
        s.get("embeddings", rc.metrics.embeddings);
        s.get("vector_file", rc.metrics.vector_file);
        s.finish();
    }
    if (doc.contains("decoding")) {
        Section s(doc["decoding"], "decoding");
        s.get_parsed("mode", rc.decoding.mode,
                     [](const std::string& v) { return decode_mode_from_string(v); });
        s.get("top_k", rc.decoding.top_k);
        s.get("top_p", rc.decoding.top_p);
        s.get("temperature", rc.decoding.temperature);
        s.get("max_new_tokens", rc.decoding.max_new_tokens);
        s.get("seed", rc.decoding.seed);
        s.finish();
    }
    rc.train.corruption = rc.corruption;
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return parse_run_config(doc);
}

json run_config_to_json(const RunConfig& rc) {
    json j;
    j["corpus"] = {{"format", rc.corpus.format},
                   {"train_path", rc.corpus.train_path},
                   {"valid_path", rc.corpus.valid_path},
                   {"test_path", rc.corpus.test_path},
                   {"vocab_path", rc.corpus.vocab_path},
                   {"lexicon_path", rc.corpus.lexicon_path},
                   {"max_context_turns", rc.corpus.max_context_turns}};
    j["tokenizer"] = {{"max_vocab", rc.tokenizer.max_vocab}};
    j["model"] = {{"vocab_size", rc.model.vocab_size},
                  {"d_model", rc.model.d_model},
                  {"n_layers", rc.model.n_layers},
                  {"n_heads", rc.model.n_heads},
                  {"d_ff", rc.model.d_ff},
                  {"max_seq_len", rc.model.max_seq_len},
                  {"dropout", rc.model.dropout},
                  {"tie_lm_head", rc.model.tie_lm_head},
                  {"seed", rc.model.seed}};
    j["corruption"] = {{"task", to_string(rc.corruption.task)},
                       {"alpha", rc.corruption.alpha},
                       {"p_do", rc.corruption.p_do},
                       {"p_reordered", rc.corruption.p_reordered},
                       {"p_masked", rc.corruption.p_masked},
                       {"p_changed", rc.corruption.p_changed},
                       {"target", to_string(rc.corruption.target)},
                       {"seed", rc.corruption.seed}};
    j["train"] = {{"learning_rate", rc.train.learning_rate},
                  {"warmup_steps", rc.train.warmup_steps},
                  {"weight_decay", rc.train.weight_decay},
                  {"epochs", rc.train.epochs},
                  {"batch_size", rc.train.batch_size},
                  {"grad_clip_norm",
                   rc.train.grad_clip_norm ? json(*rc.train.grad_clip_norm) : json(nullptr)},
                  {"seed", rc.train.seed},
                  {"eval_every", rc.train.eval_every},
                  {"freeze_corruption", rc.train.freeze_corruption}};
    j["metrics"] = {{"metrics", rc.metrics.metrics},
                    {"embeddings", rc.metrics.embeddings},
                    {"vector_file", rc.metrics.vector_file}};
    j["decoding"] = {{"mode", to_string(rc.decoding.mode)},
                     {"top_k", rc.decoding.top_k},
                     {"top_p", rc.decoding.top_p},
                     {"temperature", rc.decoding.temperature},
                     {"max_new_tokens", rc.decoding.max_new_tokens},
                     {"seed", rc.decoding.seed}};
    return j;
}

void write_config_snapshot(const std::string& dir, const RunConfig& rc) {
    std::string path = dir + "/config.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << run_config_to_json(rc).dump(2) << "\n";
}

}  // namespace auxlm
