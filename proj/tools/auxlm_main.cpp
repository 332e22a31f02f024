#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "auxlm/commands.hpp"
#include "auxlm/errors.hpp"

namespace {

// 0 success, 2 usage/input, 3 integrity, 4 runtime failure.
int run_guarded(const std::function<void()>& fn) {
    try {
        fn();
        return 0;
    } catch (const auxlm::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const auxlm::SchemaError& e) {
        std::fprintf(stderr, "schema error: %s\n", e.what());
        return 2;
    } catch (const auxlm::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const auxlm::IntegrityError& e) {
        std::fprintf(stderr, "integrity error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dialogue language modeling with auxiliary corruption objectives"};
    app.require_subcommand(1);

    // prepare
    auto* prep = app.add_subcommand("prepare", "normalize a raw corpus and train a vocabulary");
    auxlm::PrepareOptions po;
    std::string p_format, p_train, p_valid, p_test;
    int p_max_vocab = 0;
    prep->add_option("--config", po.config_path, "run config JSON");
    auto* p_format_o = prep->add_option("--format", p_format, "dailydialog | personachat | normalized");
    auto* p_train_o = prep->add_option("--train", p_train, "raw train split path");
    auto* p_valid_o = prep->add_option("--valid", p_valid, "raw valid split path");
    auto* p_test_o = prep->add_option("--test", p_test, "raw test split path");
    prep->add_option("--out", po.out_dir, "output directory")->required();
    auto* p_mv_o = prep->add_option("--max-vocab", p_max_vocab, "vocabulary size cap");

    // corrupt-preview
    auto* prev = app.add_subcommand("corrupt-preview", "print corrupted windows as JSONL");
    auxlm::CorruptPreviewOptions co;
    std::string c_data, c_vocab, c_lexicon, c_task, c_target;
    double c_alpha = 0.0;
    uint64_t c_seed = 0;
    prev->add_option("--config", co.config_path, "run config JSON");
    auto* c_data_o = prev->add_option("--data", c_data, "normalized JSONL input");
    auto* c_vocab_o = prev->add_option("--vocab", c_vocab, "vocabulary file");
    auto* c_lex_o = prev->add_option("--lexicon", c_lexicon, "substitution lexicon JSON");
    auto* c_task_o = prev->add_option("--task", c_task, "none | upd | upr | umd | umr");
    auto* c_target_o = prev->add_option("--target", c_target, "persona | context | persona+context | random");
    auto* c_alpha_o = prev->add_option("--alpha", c_alpha, "auxiliary loss weight");
    auto* c_seed_o = prev->add_option("--seed", c_seed, "corruption seed");
    prev->add_option("-n", co.n, "windows to print (stats: samples to draw)");
    prev->add_flag("--stats", co.stats, "print empirical corruption rates instead");

    // train
    auto* tr = app.add_subcommand("train", "train a model into a run directory");
    auxlm::TrainOptions to;
    std::string t_task, t_target;
    double t_alpha = 0.0, t_lr = 0.0;
    uint64_t t_seed = 0;
    int t_epochs = 0, t_batch = 0;
    int64_t t_warmup = 0, t_eval_every = 0;
    tr->add_option("--config", to.config_path, "run config JSON");
    tr->add_option("--run-dir", to.run_dir, "output run directory")->required();
    auto* t_task_o = tr->add_option("--task", t_task, "none | upd | upr | umd | umr");
    auto* t_target_o = tr->add_option("--target", t_target, "corruption target");
    auto* t_alpha_o = tr->add_option("--alpha", t_alpha, "auxiliary loss weight");
    auto* t_seed_o = tr->add_option("--seed", t_seed, "run seed (train, model, corruption)");
    auto* t_epochs_o = tr->add_option("--epochs", t_epochs, "training epochs");
    auto* t_lr_o = tr->add_option("--lr", t_lr, "peak learning rate");
    auto* t_batch_o = tr->add_option("--batch-size", t_batch, "examples per step");
    auto* t_warmup_o = tr->add_option("--warmup", t_warmup, "warmup steps");
    auto* t_eval_o = tr->add_option("--eval-every", t_eval_every, "steps between validations");
    auto* t_freeze_o = tr->add_flag("--freeze-corruption", "reuse epoch-0 corruption every epoch");

    // generate
    auto* gen = app.add_subcommand("generate", "generate responses (batch or REPL)");
    auxlm::GenerateOptions go;
    std::string g_vocab, g_data, g_mode;
    double g_temp = 0.0, g_top_p = 0.0;
    int g_top_k = 0, g_max_new = 0;
    uint64_t g_seed = 0;
    gen->add_option("--config", go.config_path, "run config JSON");
    gen->add_option("--checkpoint", go.checkpoint, "model checkpoint")->required();
    auto* g_vocab_o = gen->add_option("--vocab", g_vocab, "vocabulary file");
    auto* g_data_o = gen->add_option("--data", g_data, "normalized JSONL with prompts");
    gen->add_option("--compare", go.compare_checkpoint, "second checkpoint for two-column output");
    gen->add_flag("--repl", go.repl, "interactive session");
    gen->add_option("-n", go.n, "windows to answer (-1 = all)");
    auto* g_mode_o = gen->add_option("--mode", g_mode, "greedy | top_k | top_p");
    auto* g_temp_o = gen->add_option("--temperature", g_temp, "softmax temperature");
    auto* g_top_p_o = gen->add_option("--top-p", g_top_p, "nucleus mass");
    auto* g_top_k_o = gen->add_option("--top-k", g_top_k, "top-k cutoff");
    auto* g_max_new_o = gen->add_option("--max-new-tokens", g_max_new, "generation budget");
    auto* g_seed_o = gen->add_option("--seed", g_seed, "decoding seed");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a test split");
    auxlm::EvaluateOptions eo;
    std::string e_vocab, e_data, e_embeddings, e_vector_file;
    std::vector<std::string> e_metrics;
    int e_max_new = 0;
    ev->add_option("--config", eo.config_path, "run config JSON");
    ev->add_option("--checkpoint", eo.checkpoint, "model checkpoint")->required();
    auto* e_vocab_o = ev->add_option("--vocab", e_vocab, "vocabulary file");
    auto* e_data_o = ev->add_option("--data", e_data, "normalized JSONL test split");
    auto* e_metrics_o = ev->add_option("--metrics", e_metrics, "subset of ppl,bleu,rouge_l,average,greedy,extrema")
                            ->delimiter(',');
    auto* e_emb_o = ev->add_option("--embeddings", e_embeddings, "model | file");
    auto* e_vec_o = ev->add_option("--vector-file", e_vector_file, "word vector file");
    ev->add_option("--out", eo.out_path, "write the JSON report here");
    auto* e_max_new_o = ev->add_option("--max-new-tokens", e_max_new, "generation budget");

    // compare
    auto* cmp = app.add_subcommand("compare", "train and score a task matrix under one seed");
    auxlm::CompareOptions mo;
    std::string m_rows;
    uint64_t m_seed = 0;
    int m_epochs = 0;
    cmp->add_option("--config", mo.config_path, "run config JSON");
    cmp->add_option("--out", mo.out_dir, "output directory")->required();
    auto* m_rows_o = cmp->add_option("--rows", m_rows, "comma list of task[:target] rows");
    auto* m_seed_o = cmp->add_option("--seed", m_seed, "shared seed for every row");
    auto* m_epochs_o = cmp->add_option("--epochs", m_epochs, "training epochs per row");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (app.got_subcommand(prep)) {
        if (p_format_o->count()) po.format = p_format;
        if (p_train_o->count()) po.train_path = p_train;
        if (p_valid_o->count()) po.valid_path = p_valid;
        if (p_test_o->count()) po.test_path = p_test;
        if (p_mv_o->count()) po.max_vocab = p_max_vocab;
        return run_guarded([&] { auxlm::cmd_prepare(po); });
    }
    if (app.got_subcommand(prev)) {
        if (c_data_o->count()) co.data_path = c_data;
        if (c_vocab_o->count()) co.vocab_path = c_vocab;
        if (c_lex_o->count()) co.lexicon_path = c_lexicon;
        if (c_task_o->count()) co.task = c_task;
        if (c_target_o->count()) co.target = c_target;
        if (c_alpha_o->count()) co.alpha = c_alpha;
        if (c_seed_o->count()) co.seed = c_seed;
        return run_guarded([&] { auxlm::cmd_corrupt_preview(co); });
    }
    if (app.got_subcommand(tr)) {
        if (t_task_o->count()) to.task = t_task;
        if (t_target_o->count()) to.target = t_target;
        if (t_alpha_o->count()) to.alpha = t_alpha;
        if (t_seed_o->count()) to.seed = t_seed;
        if (t_epochs_o->count()) to.epochs = t_epochs;
        if (t_lr_o->count()) to.learning_rate = t_lr;
        if (t_batch_o->count()) to.batch_size = t_batch;
        if (t_warmup_o->count()) to.warmup_steps = t_warmup;
        if (t_eval_o->count()) to.eval_every = t_eval_every;
        if (t_freeze_o->count()) to.freeze_corruption = true;
        return run_guarded([&] { auxlm::cmd_train(to); });
    }
    if (app.got_subcommand(gen)) {
        if (g_vocab_o->count()) go.vocab_path = g_vocab;
        if (g_data_o->count()) go.data_path = g_data;
        if (g_mode_o->count()) go.decode_mode = g_mode;
        if (g_temp_o->count()) go.temperature = g_temp;
        if (g_top_p_o->count()) go.top_p = g_top_p;
        if (g_top_k_o->count()) go.top_k = g_top_k;
        if (g_max_new_o->count()) go.max_new_tokens = g_max_new;
        if (g_seed_o->count()) go.seed = g_seed;
        return run_guarded([&] { auxlm::cmd_generate(go); });
    }
    if (app.got_subcommand(ev)) {
        if (e_vocab_o->count()) eo.vocab_path = e_vocab;
        if (e_data_o->count()) eo.data_path = e_data;
        if (e_metrics_o->count()) eo.metrics = e_metrics;
        if (e_emb_o->count()) eo.embeddings = e_embeddings;
        if (e_vec_o->count()) eo.vector_file = e_vector_file;
        if (e_max_new_o->count()) eo.max_new_tokens = e_max_new;
        return run_guarded([&] { auxlm::cmd_evaluate(eo); });
    }
    if (app.got_subcommand(cmp)) {
        if (m_rows_o->count()) mo.rows = m_rows;
        if (m_seed_o->count()) mo.seed = m_seed;
        if (m_epochs_o->count()) mo.epochs = m_epochs;
        return run_guarded([&] { auxlm::cmd_compare(mo); });
    }
    return 2;
}
