#include "auxlm/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "auxlm/corpus.hpp"
#include "auxlm/corruption.hpp"
#include "auxlm/errors.hpp"
#include "auxlm/metrics.hpp"
#include "auxlm/model.hpp"
#include "auxlm/prompt.hpp"
#include "auxlm/rng.hpp"
#include "auxlm/tokenizer.hpp"
#include "auxlm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace auxlm {
namespace {

RunConfig load_or_default(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_run_config(path);
}

std::vector<DialogueSession> load_sessions(const std::string& format, const std::string& path,
                                           Split split, LoadStats* stats = nullptr) {
    if (format == "dailydialog") return load_dailydialog(path, split, stats);
    if (format == "personachat") return load_personachat(path, split, stats);
    if (format == "normalized") {
        auto sessions = read_normalized(path);
        for (auto& s : sessions) s.split = split;
        if (stats) {
            stats->sessions += sessions.size();
            for (const auto& s : sessions) stats->utterances += s.turns.size();
        }
        return sessions;
    }
    throw ConfigError("unknown corpus format '" + format +
                      "' (expected dailydialog, personachat, or normalized)");
}

// Exclusive marker so two processes never write one run directory.
struct RunLock {
    std::string path;

    explicit RunLock(const std::string& dir) : path(dir + "/lock") {
        if (fs::exists(path))
            throw IoError("run directory is locked; remove " + path + " if no run is active");
        std::ofstream f(path);
        if (!f) throw IoError("cannot create lock file " + path);
        f << "locked\n";
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;
};

// Loads the configured vocabulary, or trains one from the train split and
// (when save_dir is set) persists it so the config snapshot stays runnable.
Vocab resolve_vocab(RunConfig& rc, const std::vector<DialogueSession>& train_sessions,
                    const std::string& save_dir) {
    if (!rc.corpus.vocab_path.empty()) return Vocab::load(rc.corpus.vocab_path);
    if (train_sessions.empty())
        throw ConfigError("no vocab_path configured and no training data to build one from");
    Vocab v = Vocab::train(train_sessions, rc.tokenizer.max_vocab);
    if (!save_dir.empty()) {
        std::string out = save_dir + "/vocab.json";
        v.save(out);
        rc.corpus.vocab_path = out;
    }
    return v;
}

Lexicon resolve_lexicon(const RunConfig& rc) {
    if (rc.corpus.lexicon_path.empty()) return Lexicon{};
    return Lexicon::load(rc.corpus.lexicon_path);
}

// --task resets corruption to that task's defaults (seed and target kept);
// --target / --alpha / --seed then override individual fields.
void apply_corruption_overrides(RunConfig& rc, const std::optional<std::string>& task,
                                const std::optional<std::string>& target,
                                const std::optional<double>& alpha,
                                const std::optional<uint64_t>& seed) {
    if (task) {
        uint64_t keep_seed = rc.corruption.seed;
        CorruptionTarget keep_target = rc.corruption.target;
        rc.corruption = CorruptionConfig::defaults_for(aux_task_from_string(*task));
        rc.corruption.seed = keep_seed;
        rc.corruption.target = keep_target;
    }
    if (target) rc.corruption.target = target_from_string(*target);
    if (alpha) rc.corruption.alpha = *alpha;
    if (seed) rc.corruption.seed = *seed;
    rc.corruption.validate();
    rc.train.corruption = rc.corruption;
}

json window_to_json(const TrainingWindow& w) {
    json ctx = json::array();
    for (const auto& u : w.context)
        ctx.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}});
    return json{{"session_id", w.session_id},
                {"persona", w.persona},
                {"context", ctx},
                {"response",
                 {{"speaker", to_string(w.response.speaker)}, {"text", w.response.text}}}};
}

json track_to_json(const ComponentTrack& t) {
    json ops = json::array();
    for (TokenOp op : t.ops) ops.push_back(to_string(op));
    json moved = json::array();
    for (uint8_t m : t.moved_flags) moved.push_back(m != 0);
    return json{{"items", t.items}, {"moved", moved}, {"ops", ops}};
}

struct LoadedModel {
    Transformer<float> model;
    CheckpointMeta meta;
};

LoadedModel load_model_checked(const std::string& path, const Vocab& vocab) {
    CheckpointMeta meta;
    Transformer<float> model = load_checkpoint(path, &meta);
    if (meta.vocab_hash != vocab.hash())
        throw IntegrityError("checkpoint " + path + " was trained with a different vocabulary");
    return {std::move(model), meta};
}

// Prompt budget: always leave room for the requested continuation.
std::vector<TokenId> prompt_for(const Transformer<float>& model, const Vocab& vocab,
                                const std::vector<std::string>& persona,
                                const std::vector<Utterance>& context, int max_new_tokens) {
    int cap = std::max(1, model.cfg.max_seq_len - 4);
    int reserve = std::clamp(std::max(max_new_tokens, 1), 1, cap);
    return encode_prompt(persona, context, vocab, model.cfg.max_seq_len, reserve);
}

std::string generate_response(const Transformer<float>& model, const Vocab& vocab,
                              const TrainingWindow& w, DecodingConfig dec, uint64_t index) {
    auto prompt = prompt_for(model, vocab, w.persona, w.context, dec.max_new_tokens);
    dec.seed = derive_key(dec.seed, fnv1a64("window"), index);
    return vocab.decode(model.generate(prompt, dec));
}

void run_repl(const Transformer<float>& model, const Vocab& vocab, const RunConfig& rc) {
    std::printf("interactive mode; :quit exits, :reset clears the context\n");
    std::vector<Utterance> history;
    uint64_t turn = 0;
    std::string line;
    while (true) {
        std::printf("you> ");
        std::fflush(stdout);
        if (!std::getline(std::cin, line)) break;
        if (line == ":quit") break;
        if (line == ":reset") {
            history.clear();
            std::printf("(context cleared)\n");
            continue;
        }
        if (Vocab::split_words(line).empty()) continue;
        history.push_back({Speaker::AgentA, line});
        std::vector<Utterance> ctx = history;
        if (static_cast<int>(ctx.size()) > rc.corpus.max_context_turns)
            ctx.erase(ctx.begin(), ctx.end() - rc.corpus.max_context_turns);
        DecodingConfig dec = rc.decoding;
        dec.seed = derive_key(rc.decoding.seed, fnv1a64("repl"), turn++);
        auto prompt = prompt_for(model, vocab, {}, ctx, dec.max_new_tokens);
        std::string reply = vocab.decode(model.generate(prompt, dec));
        std::printf("bot> %s\n", reply.c_str());
        history.push_back({Speaker::AgentB, reply.empty() ? "..." : reply});
    }
}

// Shared by evaluate and compare: perplexity over clean assembled examples,
// text metrics over generated-vs-reference response pairs.
MetricsReport compute_metrics(const Transformer<float>& model, const Vocab& vocab,
                              const std::vector<TrainingWindow>& windows,
                              const MetricsSelection& sel, const DecodingConfig& dec_in) {
    std::set<std::string> want(sel.metrics.begin(), sel.metrics.end());
    for (const auto& m : sel.metrics)
        if (m != "ppl" && m != "bleu" && m != "rouge_l" && m != "average" && m != "greedy" &&
            m != "extrema")
            throw ConfigError("unknown metric '" + m + "'");
    if (sel.embeddings != "model" && sel.embeddings != "file")
        throw ConfigError("embeddings source must be 'model' or 'file'");

    MetricsReport rep;
    rep.examples = static_cast<int64_t>(windows.size());

    if (want.count("ppl")) {
        std::vector<EncodedExample> examples;
        examples.reserve(windows.size());
        for (const auto& w : windows) {
            auto ex = assemble_clean(w, vocab, model.cfg.max_seq_len);
            if (ex) examples.push_back(std::move(*ex));
        }
        if (examples.empty()) throw Error("no evaluable examples for perplexity");
        rep.ppl = perplexity(model, examples);
    }

    bool need_text = want.count("bleu") || want.count("rouge_l") || want.count("average") ||
                     want.count("greedy") || want.count("extrema");
    if (!need_text) return rep;

    std::vector<std::vector<std::string>> hyps, refs;
    hyps.reserve(windows.size());
    refs.reserve(windows.size());
    for (size_t i = 0; i < windows.size(); ++i) {
        hyps.push_back(whitespace_tokens(
            generate_response(model, vocab, windows[i], dec_in, static_cast<uint64_t>(i))));
        refs.push_back(whitespace_tokens(windows[i].response.text));
    }

    if (want.count("bleu")) {
        std::vector<std::vector<std::vector<std::string>>> ref_sets(refs.size());
        for (size_t i = 0; i < refs.size(); ++i) ref_sets[i] = {refs[i]};
        BleuResult b = bleu_corpus(hyps, ref_sets);
        rep.bleu = b.score;
        rep.bleu_smoothed = b.smoothed;
        rep.bleu_effective_max_n = b.effective_max_n;
    }
    if (want.count("rouge_l")) {
        RougeResult r = rouge_l_corpus(hyps, refs);
        rep.rouge_l = r.mean_f1;
        rep.rouge_skipped = r.skipped;
    }
    if (want.count("average") || want.count("greedy") || want.count("extrema")) {
        EmbeddingProvider prov;
        if (sel.embeddings == "file") {
            if (sel.vector_file.empty())
                throw ConfigError("embeddings source 'file' needs metrics.vector_file");
            prov = EmbeddingProvider::from_file(sel.vector_file);
        } else {
            prov = EmbeddingProvider::from_model(model, vocab);
        }
        EmbCorpus ec = embedding_metrics_corpus(hyps, refs, prov);
        if (want.count("average")) rep.emb_average = ec.average;
        if (want.count("greedy")) rep.emb_greedy = ec.greedy;
        if (want.count("extrema")) rep.emb_extrema = ec.extrema;
        rep.emb_skipped = ec.skipped;
        rep.emb_zero_norm = ec.zero_norm;
    }
    return rep;
}

}  // namespace

void cmd_prepare(const PrepareOptions& opt) {
    RunConfig rc = load_or_default(opt.config_path);
    if (opt.format) rc.corpus.format = *opt.format;
    if (opt.train_path) rc.corpus.train_path = *opt.train_path;
    if (opt.valid_path) rc.corpus.valid_path = *opt.valid_path;
    if (opt.test_path) rc.corpus.test_path = *opt.test_path;
    if (opt.max_vocab) rc.tokenizer.max_vocab = *opt.max_vocab;
    if (opt.out_dir.empty()) throw ConfigError("prepare: --out is required");
    if (rc.corpus.train_path.empty()) throw ConfigError("prepare: no train corpus path given");

    fs::create_directories(opt.out_dir);

    struct SplitJob {
        const char* name;
        Split split;
        std::string path;
    };
    const SplitJob jobs[] = {{"train", Split::Train, rc.corpus.train_path},
                             {"valid", Split::Valid, rc.corpus.valid_path},
                             {"test", Split::Test, rc.corpus.test_path}};
    std::vector<DialogueSession> train_sessions;
    for (const auto& job : jobs) {
        if (job.path.empty()) continue;
        LoadStats stats;
        auto sessions = load_sessions(rc.corpus.format, job.path, job.split, &stats);
        std::string out = opt.out_dir + "/" + job.name + ".jsonl";
        write_normalized(sessions, out);
        std::printf("%s: %zu dialogues (%zu skipped), %zu utterances -> %s\n", job.name,
                    stats.sessions, stats.skipped, stats.utterances, out.c_str());
        if (job.split == Split::Train) train_sessions = std::move(sessions);
    }

    Vocab vocab = Vocab::train(train_sessions, rc.tokenizer.max_vocab);
    std::string vocab_out = opt.out_dir + "/vocab.json";
    vocab.save(vocab_out);
    std::printf("vocab: %d tokens (%zu words), hash %016llx -> %s\n", vocab.size(),
                vocab.word_count(), static_cast<unsigned long long>(vocab.hash()),
                vocab_out.c_str());
}

void cmd_corrupt_preview(const CorruptPreviewOptions& opt) {
    RunConfig rc = load_or_default(opt.config_path);
    if (opt.vocab_path) rc.corpus.vocab_path = *opt.vocab_path;
    if (opt.lexicon_path) rc.corpus.lexicon_path = *opt.lexicon_path;
    apply_corruption_overrides(rc, opt.task, opt.target, opt.alpha, opt.seed);

    // An explicit --data file is always normalized JSONL; config paths keep
    // the configured corpus format.
    std::string data_format = opt.data_path ? "normalized" : rc.corpus.format;
    std::string data = opt.data_path.value_or(std::string());
    if (data.empty()) data = !rc.corpus.valid_path.empty() ? rc.corpus.valid_path : rc.corpus.train_path;
    if (data.empty()) throw ConfigError("corrupt-preview: no data path given");

    auto sessions = load_sessions(data_format, data, Split::Valid);
    auto windows = windowize_all(sessions, rc.corpus.max_context_turns);
    if (windows.empty()) throw Error("no windows in " + data);

    Vocab vocab = rc.corpus.vocab_path.empty() ? Vocab::train(sessions, rc.tokenizer.max_vocab)
                                               : Vocab::load(rc.corpus.vocab_path);
    Lexicon lexicon = resolve_lexicon(rc);
    const CorruptionConfig& cc = rc.corruption;

    if (opt.stats) {
        int64_t samples = opt.n > 0 ? opt.n : static_cast<int64_t>(windows.size());
        int64_t up_selected = 0, up_corrupted = 0;
        int64_t items_total = 0, moved_items = 0;
        int64_t words_total = 0, words_selected = 0;
        int64_t op_counts[5] = {0, 0, 0, 0, 0};
        for (int64_t i = 0; i < samples; ++i) {
            const TrainingWindow& w = windows[static_cast<size_t>(i) % windows.size()];
            uint64_t idx = static_cast<uint64_t>(i);
            if (is_permutation_task(cc.task) && select_for_corruption(idx, cc)) ++up_selected;
            auto outcome = corrupt_window(w, idx, cc, lexicon, vocab);
            if (outcome.was_corrupted) ++up_corrupted;
            const ComponentTrack* tracks[2] = {outcome.persona ? &*outcome.persona : nullptr,
                                               outcome.context ? &*outcome.context : nullptr};
            for (const ComponentTrack* t : tracks) {
                if (!t) continue;
                items_total += static_cast<int64_t>(t->items.size());
                for (uint8_t m : t->moved_flags) moved_items += m ? 1 : 0;
                words_total += static_cast<int64_t>(t->words.size());
                for (size_t j = 0; j < t->selected.size(); ++j) {
                    if (!t->selected[j]) continue;
                    ++words_selected;
                    ++op_counts[static_cast<int>(t->ops[j])];
                }
            }
        }
        json out{{"task", to_string(cc.task)}, {"samples", samples}};
        if (is_permutation_task(cc.task)) {
            out["dialogue_selection_rate"] = static_cast<double>(up_selected) / samples;
            out["corrupted_rate"] = static_cast<double>(up_corrupted) / samples;
            out["moved_item_rate"] =
                items_total ? static_cast<double>(moved_items) / items_total : 0.0;
        } else if (is_masking_task(cc.task)) {
            out["token_selection_rate"] =
                words_total ? static_cast<double>(words_selected) / words_total : 0.0;
            const char* names[5] = {"kept", "masked", "synonym", "antonym", "random"};
            json splits;
            for (int k = 0; k < 5; ++k)
                splits[names[k]] =
                    words_selected ? static_cast<double>(op_counts[k]) / words_selected : 0.0;
            out["selected_op_rates"] = splits;
        }
        std::printf("%s\n", out.dump(2).c_str());
        return;
    }

    int64_t n = std::min<int64_t>(std::max<int64_t>(opt.n, 0), static_cast<int64_t>(windows.size()));
    for (int64_t i = 0; i < n; ++i) {
        uint64_t idx = static_cast<uint64_t>(i);
        auto outcome = corrupt_window(windows[static_cast<size_t>(i)], idx, cc, lexicon, vocab);
        AuxLabelTracks labels = build_aux_labels(outcome, cc.task, vocab);
        json line{{"index", i},
                  {"was_corrupted", outcome.was_corrupted},
                  {"original", window_to_json(windows[static_cast<size_t>(i)])},
                  {"corrupted", window_to_json(outcome.window)},
                  {"ops", json::object()},
                  {"labels", json::object()}};
        if (outcome.persona) {
            line["ops"]["persona"] = track_to_json(*outcome.persona);
            line["labels"]["persona"] = labels.persona;
        }
        if (outcome.context) {
            line["ops"]["context"] = track_to_json(*outcome.context);
            line["labels"]["context"] = labels.context;
        }
        std::printf("%s\n", line.dump().c_str());
    }
}

void cmd_train(const TrainOptions& opt) {
    RunConfig rc = load_or_default(opt.config_path);
    apply_corruption_overrides(rc, opt.task, opt.target, opt.alpha, opt.seed);
    if (opt.seed) {
        rc.train.seed = *opt.seed;
        rc.model.seed = *opt.seed;
    }
    if (opt.epochs) rc.train.epochs = *opt.epochs;
    if (opt.learning_rate) rc.train.learning_rate = *opt.learning_rate;
    if (opt.batch_size) rc.train.batch_size = *opt.batch_size;
    if (opt.warmup_steps) rc.train.warmup_steps = *opt.warmup_steps;
    if (opt.eval_every) rc.train.eval_every = *opt.eval_every;
    if (opt.freeze_corruption) rc.train.freeze_corruption = *opt.freeze_corruption;
    rc.train.corruption = rc.corruption;
    if (opt.run_dir.empty()) throw ConfigError("train: --run-dir is required");
    if (rc.corpus.train_path.empty()) throw ConfigError("train: corpus.train_path is not set");

    fs::create_directories(opt.run_dir);
    RunLock lock(opt.run_dir);

    auto train_sessions = load_sessions(rc.corpus.format, rc.corpus.train_path, Split::Train);
    std::vector<DialogueSession> val_sessions;
    if (!rc.corpus.valid_path.empty())
        val_sessions = load_sessions(rc.corpus.format, rc.corpus.valid_path, Split::Valid);
    Vocab vocab = resolve_vocab(rc, train_sessions, opt.run_dir);
    Lexicon lexicon = resolve_lexicon(rc);
    rc.model.vocab_size = vocab.size();
    write_config_snapshot(opt.run_dir, rc);

    auto train_windows = windowize_all(train_sessions, rc.corpus.max_context_turns);
    auto val_windows = windowize_all(val_sessions, rc.corpus.max_context_turns);
    std::printf("train: %zu windows, val: %zu windows, vocab %d, task %s\n", train_windows.size(),
                val_windows.size(), vocab.size(), to_string(rc.train.corruption.task));

    TrainReport report =
        train(train_windows, val_windows, vocab, lexicon, rc.model, rc.train, opt.run_dir);
    std::printf("done: %zu steps (%lld skipped), best val ppl %.4f, %.1fs\n", report.steps.size(),
                static_cast<long long>(report.skipped_steps), report.best_val_ppl,
                report.wall_seconds);
    std::printf("checkpoints: %s (best), %s (last)\n", report.best_checkpoint.c_str(),
                report.last_checkpoint.c_str());
}

void cmd_generate(const GenerateOptions& opt) {
    RunConfig rc = load_or_default(opt.config_path);
    if (opt.vocab_path) rc.corpus.vocab_path = *opt.vocab_path;
    if (opt.decode_mode) rc.decoding.mode = decode_mode_from_string(*opt.decode_mode);
    if (opt.temperature) rc.decoding.temperature = *opt.temperature;
    if (opt.top_p) rc.decoding.top_p = *opt.top_p;
    if (opt.top_k) rc.decoding.top_k = *opt.top_k;
    if (opt.max_new_tokens) rc.decoding.max_new_tokens = *opt.max_new_tokens;
    if (opt.seed) rc.decoding.seed = *opt.seed;
    if (opt.checkpoint.empty()) throw ConfigError("generate: --checkpoint is required");
    if (rc.corpus.vocab_path.empty()) throw ConfigError("generate: no vocabulary file given");

    Vocab vocab = Vocab::load(rc.corpus.vocab_path);
    LoadedModel a = load_model_checked(opt.checkpoint, vocab);

    if (opt.repl) {
        run_repl(a.model, vocab, rc);
        return;
    }

    std::string data_format = opt.data_path ? "normalized" : rc.corpus.format;
    std::string data = opt.data_path.value_or(std::string());
    if (data.empty()) data = !rc.corpus.test_path.empty() ? rc.corpus.test_path : rc.corpus.valid_path;
    if (data.empty()) throw ConfigError("generate: no data path for batch mode (use --data or --repl)");
    auto sessions = load_sessions(data_format, data, Split::Test);
    auto windows = windowize_all(sessions, rc.corpus.max_context_turns);
    int64_t n = opt.n < 0 ? static_cast<int64_t>(windows.size())
                          : std::min<int64_t>(opt.n, static_cast<int64_t>(windows.size()));

    if (!opt.compare_checkpoint.empty()) {
        LoadedModel b = load_model_checked(opt.compare_checkpoint, vocab);
        std::printf("# %s vs %s\n", opt.checkpoint.c_str(), opt.compare_checkpoint.c_str());
        for (int64_t i = 0; i < n; ++i) {
            const TrainingWindow& w = windows[static_cast<size_t>(i)];
            uint64_t idx = static_cast<uint64_t>(i);
            std::string ra = generate_response(a.model, vocab, w, rc.decoding, idx);
            std::string rb = generate_response(b.model, vocab, w, rc.decoding, idx);
            std::printf("# context: %s\n# reference: %s\n%s\t%s\n", w.context.back().text.c_str(),
                        w.response.text.c_str(), ra.c_str(), rb.c_str());
        }
        return;
    }

    for (int64_t i = 0; i < n; ++i)
        std::printf("%s\n", generate_response(a.model, vocab, windows[static_cast<size_t>(i)],
                                              rc.decoding, static_cast<uint64_t>(i))
                                .c_str());
}

void cmd_evaluate(const EvaluateOptions& opt) {
    RunConfig rc = load_or_default(opt.config_path);
    if (opt.vocab_path) rc.corpus.vocab_path = *opt.vocab_path;
    if (opt.metrics) rc.metrics.metrics = *opt.metrics;
    if (opt.embeddings) rc.metrics.embeddings = *opt.embeddings;
    if (opt.vector_file) rc.metrics.vector_file = *opt.vector_file;
    if (opt.max_new_tokens) rc.decoding.max_new_tokens = *opt.max_new_tokens;
    if (opt.checkpoint.empty()) throw ConfigError("evaluate: --checkpoint is required");
    if (rc.corpus.vocab_path.empty()) throw ConfigError("evaluate: no vocabulary file given");
    std::string data_format = opt.data_path ? "normalized" : rc.corpus.format;
    std::string data = opt.data_path.value_or(std::string());
    if (data.empty()) data = rc.corpus.test_path;
    if (data.empty()) throw ConfigError("evaluate: no test data path given");

    Vocab vocab = Vocab::load(rc.corpus.vocab_path);
    LoadedModel lm = load_model_checked(opt.checkpoint, vocab);
    auto sessions = load_sessions(data_format, data, Split::Test);
    auto windows = windowize_all(sessions, rc.corpus.max_context_turns);
    if (windows.empty()) throw Error("no evaluation windows in " + data);

    MetricsReport rep = compute_metrics(lm.model, vocab, windows, rc.metrics, rc.decoding);
    std::printf("%s\n", rep.to_json_string().c_str());
    std::printf("%s\n%s\n", MetricsReport::csv_header(), rep.csv_row().c_str());
    if (!opt.out_path.empty()) {
        std::ofstream f(opt.out_path);
        if (!f) throw IoError("cannot write " + opt.out_path);
        f << rep.to_json_string() << "\n";
    }
}

namespace {

struct CompareRow {
    AuxTask task = AuxTask::None;
    CorruptionTarget target = CorruptionTarget::Context;
};

std::vector<CompareRow> parse_rows(const std::string& arg) {
    std::vector<CompareRow> rows;
    size_t start = 0;
    while (start <= arg.size()) {
        size_t comma = arg.find(',', start);
        size_t len = comma == std::string::npos ? std::string::npos : comma - start;
        std::string item = arg.substr(start, len);
        while (!item.empty() && item.front() == ' ') item.erase(item.begin());
        while (!item.empty() && item.back() == ' ') item.pop_back();
        if (!item.empty()) {
            CompareRow row;
            size_t colon = item.find(':');
            row.task = aux_task_from_string(item.substr(0, colon));
            if (colon != std::string::npos) row.target = target_from_string(item.substr(colon + 1));
            rows.push_back(row);
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (rows.empty()) throw ConfigError("compare: empty row list");
    return rows;
}

}  // namespace

void cmd_compare(const CompareOptions& opt) {
    RunConfig rc = load_or_default(opt.config_path);
    if (opt.seed) {
        rc.train.seed = *opt.seed;
        rc.corruption.seed = *opt.seed;
        rc.model.seed = *opt.seed;
    }
    if (opt.epochs) rc.train.epochs = *opt.epochs;
    if (opt.out_dir.empty()) throw ConfigError("compare: --out is required");
    if (rc.corpus.train_path.empty()) throw ConfigError("compare: corpus.train_path is not set");

    std::vector<CompareRow> rows;
    if (opt.rows) {
        rows = parse_rows(*opt.rows);
    } else {
        rows = {{AuxTask::None, CorruptionTarget::Context},
                {AuxTask::UPD, CorruptionTarget::Context},
                {AuxTask::UPR, CorruptionTarget::Context},
                {AuxTask::UMD, CorruptionTarget::Context},
                {AuxTask::UMR, CorruptionTarget::Context}};
    }

    fs::create_directories(opt.out_dir);

    // One corpus, one vocabulary, one seed; rows differ only in the task axis.
    auto train_sessions = load_sessions(rc.corpus.format, rc.corpus.train_path, Split::Train);
    std::vector<DialogueSession> val_sessions, test_sessions;
    if (!rc.corpus.valid_path.empty())
        val_sessions = load_sessions(rc.corpus.format, rc.corpus.valid_path, Split::Valid);
    if (!rc.corpus.test_path.empty())
        test_sessions = load_sessions(rc.corpus.format, rc.corpus.test_path, Split::Test);
    Vocab vocab = resolve_vocab(rc, train_sessions, opt.out_dir);
    Lexicon lexicon = resolve_lexicon(rc);
    rc.model.vocab_size = vocab.size();

    auto train_windows = windowize_all(train_sessions, rc.corpus.max_context_turns);
    auto val_windows = windowize_all(val_sessions, rc.corpus.max_context_turns);
    auto test_windows = windowize_all(test_sessions, rc.corpus.max_context_turns);
    const std::vector<TrainingWindow>& eval_windows =
        !test_windows.empty() ? test_windows : (!val_windows.empty() ? val_windows : train_windows);

    std::vector<std::string> labels;
    std::vector<MetricsReport> reports;
    for (const CompareRow& row : rows) {
        RunConfig rrc = rc;
        rrc.corruption = CorruptionConfig::defaults_for(row.task);
        rrc.corruption.target = row.target;
        rrc.corruption.seed = rc.corruption.seed;
        rrc.train.corruption = rrc.corruption;

        std::string label = row.task == AuxTask::None
                                ? "none"
                                : std::string(to_string(row.task)) + "-" + to_string(row.target);
        std::string run_dir = opt.out_dir + "/" + label;
        fs::create_directories(run_dir);
        RunLock lock(run_dir);
        write_config_snapshot(run_dir, rrc);

        std::printf("[%s] training\n", label.c_str());
        TrainReport tr =
            train(train_windows, val_windows, vocab, lexicon, rrc.model, rrc.train, run_dir);
        std::printf("[%s] %zu steps, best val ppl %.4f, %.1fs\n", label.c_str(), tr.steps.size(),
                    tr.best_val_ppl, tr.wall_seconds);

        CheckpointMeta meta;
        Transformer<float> best = load_checkpoint(tr.best_checkpoint, &meta);
        reports.push_back(compute_metrics(best, vocab, eval_windows, rc.metrics, rc.decoding));
        labels.push_back(label);
    }

    struct Col {
        const char* name;
        std::optional<double> MetricsReport::* field;
        bool higher_better;
    };
    const Col cols[] = {{"ppl", &MetricsReport::ppl, false},
                        {"bleu", &MetricsReport::bleu, true},
                        {"rouge_l", &MetricsReport::rouge_l, true},
                        {"average", &MetricsReport::emb_average, true},
                        {"greedy", &MetricsReport::emb_greedy, true},
                        {"extrema", &MetricsReport::emb_extrema, true}};
    constexpr size_t kCols = sizeof(cols) / sizeof(cols[0]);

    int best_row[kCols];
    for (size_t c = 0; c < kCols; ++c) {
        best_row[c] = -1;
        for (size_t r = 0; r < reports.size(); ++r) {
            const auto& v = reports[r].*(cols[c].field);
            if (!v) continue;
            if (best_row[c] < 0) {
                best_row[c] = static_cast<int>(r);
                continue;
            }
            const auto& bv = reports[static_cast<size_t>(best_row[c])].*(cols[c].field);
            if (cols[c].higher_better ? *v > *bv : *v < *bv) best_row[c] = static_cast<int>(r);
        }
    }

    std::string csv = "task,target,ppl,bleu,rouge_l,average,greedy,extrema\n";
    for (size_t r = 0; r < reports.size(); ++r) {
        csv += to_string(rows[r].task);
        csv += ',';
        csv += rows[r].task == AuxTask::None ? "-" : to_string(rows[r].target);
        for (size_t c = 0; c < kCols; ++c) {
            csv += ',';
            const auto& v = reports[r].*(cols[c].field);
            if (v) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.6f", *v);
                csv += buf;
                if (static_cast<int>(r) == best_row[c] && reports.size() > 1) csv += '*';
            }
        }
        csv += '\n';
    }

    std::string out_csv = opt.out_dir + "/compare.csv";
    std::ofstream f(out_csv);
    if (!f) throw IoError("cannot write " + out_csv);
    f << csv;
    f.close();
    std::fputs(csv.c_str(), stdout);

    // Directional readout only: toy-scale deltas are reported, never gated.
    const MetricsReport* baseline = nullptr;
    for (size_t r = 0; r < rows.size(); ++r)
        if (rows[r].task == AuxTask::None && reports[r].ppl) {
            baseline = &reports[r];
            break;
        }
    if (baseline)
        for (size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].task == AuxTask::None || !reports[r].ppl) continue;
            std::printf("ppl delta %s vs none: %+.4f\n", labels[r].c_str(),
                        *reports[r].ppl - *baseline->ppl);
        }
    std::printf("wrote %s\n", out_csv.c_str());
}

}  // namespace auxlm
