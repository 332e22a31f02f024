#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "auxlm/errors.hpp"
#include "auxlm/trainer.hpp"
#include "support/synthetic.hpp"

using namespace auxlm;

namespace {

ModelConfig nano_cfg(int vocab, AuxHead head = AuxHead::None) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 64;
    cfg.aux_head = head;
    cfg.seed = 99;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    SUBCASE("lr") { cfg.learning_rate = 0.0; CHECK_THROWS_AS(cfg.validate(), ConfigError); }
    SUBCASE("epochs") { cfg.epochs = 0; CHECK_THROWS_AS(cfg.validate(), ConfigError); }
    SUBCASE("batch") { cfg.batch_size = -1; CHECK_THROWS_AS(cfg.validate(), ConfigError); }
    SUBCASE("clip") { cfg.grad_clip_norm = 0.0; CHECK_THROWS_AS(cfg.validate(), ConfigError); }
    SUBCASE("eval cadence") { cfg.eval_every = 0; CHECK_THROWS_AS(cfg.validate(), ConfigError); }
    SUBCASE("corruption propagates") {
        cfg.corruption.p_do = 2.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_CASE("alpha zero normalizes to the vanilla baseline") {
    auto model = nano_cfg(50, AuxHead::Binary);
    TrainConfig train;
    train.corruption = CorruptionConfig::defaults_for(AuxTask::UPD);
    train.corruption.alpha = 0.0;
    normalize_run(model, train);
    CHECK(train.corruption.task == AuxTask::None);
    CHECK(model.aux_head == AuxHead::None);

    auto model2 = nano_cfg(50);
    TrainConfig train2;
    train2.corruption = CorruptionConfig::defaults_for(AuxTask::UPR);
    normalize_run(model2, train2);
    CHECK(model2.aux_head == AuxHead::Recovery);
    auto model3 = nano_cfg(50, AuxHead::Recovery);
    TrainConfig train3;  // task none
    normalize_run(model3, train3);
    CHECK(model3.aux_head == AuxHead::None);
}

TEST_CASE("learning-rate schedule: warmup, peak, decay, edges") {
    LrSchedule s{1e-3, 100, 300};
    CHECK(lr_at(0, s) == 0.0);
    CHECK(lr_at(-5, s) == 0.0);
    CHECK(lr_at(50, s) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(100, s) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(lr_at(200, s) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(300, s) == 0.0);
    CHECK(lr_at(400, s) == 0.0);
    for (int64_t t = 1; t <= 100; ++t) CHECK(lr_at(t, s) >= lr_at(t - 1, s));
    for (int64_t t = 101; t <= 300; ++t) CHECK(lr_at(t, s) <= lr_at(t - 1, s));

    LrSchedule no_warm{2.0, 0, 10};
    CHECK(lr_at(0, no_warm) == 2.0);
    LrSchedule no_decay{2.0, 10, 10};
    CHECK(lr_at(25, no_decay) == 2.0);
}

TEST_CASE("adamw: hand-computed first and second steps") {
    auto model = Transformer<float>::init(nano_cfg(20));
    for (auto& x : model.params.tok_emb.data) x = 1.0f;
    for (auto& x : model.params.ln_f_g.data) x = 1.0f;
    float qkv0 = model.params.blocks[0].qkv_w.data[3];
    float lnb0 = model.params.ln_f_b.data[2];

    auto grads = model.make_grads();
    for (auto& x : grads.tok_emb.data) x = 1.0f;
    for (auto& x : grads.ln_f_g.data) x = 1.0f;

    auto state = AdamState::for_model(model);
    AdamHyper hp;
    hp.lr = 0.1;
    hp.weight_decay = 0.01;

    REQUIRE(adamw_step(model, grads, state, hp));
    CHECK(state.step == 1);
    // m=0.1, v=0.001, both bias-correct to 1: step of lr/(1+eps), then x0.999 decay
    CHECK(model.params.tok_emb.data[0] == doctest::Approx(0.8991000011).epsilon(1e-6));
    // layer-norm gain: same step, no decay
    CHECK(model.params.ln_f_g.data[0] == doctest::Approx(0.9000000010).epsilon(1e-6));
    // decayed tensor with zero gradient still shrinks by lr*wd
    CHECK(model.params.blocks[0].qkv_w.data[3] ==
          doctest::Approx(qkv0 * 0.999).epsilon(1e-6));
    // undecayed tensor with zero gradient is untouched
    CHECK(model.params.ln_f_b.data[2] == lnb0);

    REQUIRE(adamw_step(model, grads, state, hp));
    CHECK(state.step == 2);
    // t=2: m=0.19/bc 0.19, v=0.001999/bc 0.001999 -> unit update again
    CHECK(model.params.tok_emb.data[0] == doctest::Approx(0.7983009011).epsilon(1e-6));
    CHECK(model.params.ln_f_g.data[0] == doctest::Approx(0.8000000011).epsilon(1e-6));
}

TEST_CASE("adamw: zero gradients with zero weight decay change nothing") {
    auto model = Transformer<float>::init(nano_cfg(20));
    auto before = model.params;
    auto grads = model.make_grads();
    auto state = AdamState::for_model(model);
    AdamHyper hp;
    hp.lr = 0.5;
    REQUIRE(adamw_step(model, grads, state, hp));
    CHECK(model.params == before);
}

TEST_CASE("adamw: a non-finite gradient aborts the update untouched") {
    auto model = Transformer<float>::init(nano_cfg(20));
    auto before = model.params;
    auto grads = model.make_grads();
    grads.blocks[0].mlp_fc_w.data[5] = std::numeric_limits<float>::quiet_NaN();
    auto state = AdamState::for_model(model);
    auto m_before = state.m;
    AdamHyper hp;
    std::string diag;
    CHECK_FALSE(adamw_step(model, grads, state, hp, &diag));
    CHECK(diag.find("mlp_fc_w") != std::string::npos);
    CHECK(model.params == before);
    CHECK(state.step == 0);
    CHECK(state.m == m_before);

    grads.blocks[0].mlp_fc_w.data[5] = std::numeric_limits<float>::infinity();
    CHECK_FALSE(adamw_step(model, grads, state, hp, &diag));
    CHECK(model.params == before);
}

TEST_CASE("gradient norm and clipping") {
    auto model = Transformer<float>::init(nano_cfg(20));
    auto grads = model.make_grads();
    double sq = 0.0;
    StreamRng rng(derive_key(31, fnv1a64("clip")));
    grads.for_each([&](const std::string&, Mat<float>& t, bool) {
        for (auto& g : t.data) {
            g = static_cast<float>(rng.next_gaussian() * 0.01);
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    });
    double norm = std::sqrt(sq);
    CHECK(grad_global_norm(grads) == doctest::Approx(norm).epsilon(1e-9));

    auto below = grads;
    clip_gradients(below, norm * 2.0);  // already under the cap
    CHECK(below == grads);

    clip_gradients(grads, norm / 3.0);
    CHECK(grad_global_norm(grads) == doctest::Approx(norm / 3.0).epsilon(1e-5));
}

TEST_CASE("epoch example building is deterministic and freeze pins epoch zero") {
    auto vocab = testing::make_vocab();
    auto lexicon = testing::make_lexicon();
    std::vector<TrainingWindow> windows;
    for (uint64_t i = 0; i < 50; ++i) windows.push_back(testing::make_window(800 + i, 3, 1));
    auto cfg = CorruptionConfig::defaults_for(AuxTask::UMR);
    cfg.seed = 5;

    auto a = build_epoch_examples(windows, vocab, lexicon, cfg, 2, false, 128);
    auto b = build_epoch_examples(windows, vocab, lexicon, cfg, 2, false, 128);
    CHECK(a == b);

    auto e0 = build_epoch_examples(windows, vocab, lexicon, cfg, 0, false, 128);
    auto e5 = build_epoch_examples(windows, vocab, lexicon, cfg, 5, false, 128);
    CHECK_FALSE(e0 == e5);

    auto f5 = build_epoch_examples(windows, vocab, lexicon, cfg, 5, true, 128);
    CHECK(f5 == e0);

    AssembleStats st;
    CorruptionConfig none;  // task None
    auto clean = build_epoch_examples(windows, vocab, lexicon, none, 0, false, 128, &st);
    REQUIRE(clean.size() == windows.size());
    CHECK(st.assembled == static_cast<int64_t>(windows.size()));
    for (size_t i = 0; i < windows.size(); ++i) {
        auto ref = assemble_clean(windows[i], vocab, 128);
        CHECK(clean[i] == *ref);
    }
}

TEST_CASE("aux evaluation matches an independent argmax oracle") {
    auto vocab = testing::make_vocab();
    Lexicon lexicon;
    std::vector<TrainingWindow> windows;
    for (uint64_t i = 0; i < 12; ++i) windows.push_back(testing::make_window(900 + i, 3, 1));
    auto ccfg = CorruptionConfig::defaults_for(AuxTask::UPD);
    ccfg.p_do = 1.0;
    ccfg.seed = 3;
    auto examples = build_epoch_examples(windows, vocab, lexicon, ccfg, 0, false, 128);
    REQUIRE(!examples.empty());

    auto model = Transformer<float>::init(nano_cfg(vocab.size(), AuxHead::Binary));
    auto ev = evaluate_aux(model, examples);

    int64_t labeled = 0, correct = 0;
    int64_t cls_total[2] = {0, 0}, cls_hit[2] = {0, 0};
    Workspace<float> ws;
    for (const auto& ex : examples) {
        model.forward(ex.input_ids, ws);
        for (int t = 0; t < ws.aux_logits.rows; ++t) {
            TokenId y = ex.aux_labels[t];
            if (y == kIgnoreLabel) continue;
            int pred = ws.aux_logits.at(t, 1) > ws.aux_logits.at(t, 0) ? 1 : 0;
            ++labeled;
            ++cls_total[y];
            if (pred == y) {
                ++correct;
                ++cls_hit[y];
            }
        }
    }
    REQUIRE(cls_total[0] > 0);
    REQUIRE(cls_total[1] > 0);
    CHECK(ev.labeled == labeled);
    CHECK(ev.accuracy == doctest::Approx(double(correct) / labeled).epsilon(1e-12));
    double bal = 0.5 * (double(cls_hit[0]) / cls_total[0] + double(cls_hit[1]) / cls_total[1]);
    CHECK(ev.balanced_accuracy == doctest::Approx(bal).epsilon(1e-12));
}

TEST_CASE("aux evaluation rejects head/label mismatches") {
    auto vocab = testing::make_vocab();
    auto ex = assemble_clean(testing::make_window(910, 3, 1), vocab, 128);
    auto plain = Transformer<float>::init(nano_cfg(vocab.size()));
    CHECK_THROWS_AS(evaluate_aux(plain, {*ex}), Error);
    auto binary = Transformer<float>::init(nano_cfg(vocab.size(), AuxHead::Binary));
    CHECK_THROWS_AS(evaluate_aux(binary, {*ex}), Error);  // no labeled position
}

TEST_CASE("training loop: artifacts, loss composition, reproducibility") {
    auto vocab = testing::make_vocab();
    auto lexicon = testing::make_lexicon();
    std::vector<TrainingWindow> train_w, val_w;
    for (uint64_t i = 0; i < 16; ++i) train_w.push_back(testing::make_window(1000 + i, 3, 1));
    for (uint64_t i = 0; i < 6; ++i) val_w.push_back(testing::make_window(2000 + i, 3, 1));

    auto model_cfg = nano_cfg(vocab.size());
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.warmup_steps = 2;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.eval_every = 4;
    cfg.seed = 7;
    cfg.corruption = CorruptionConfig::defaults_for(AuxTask::UMD);
    cfg.corruption.seed = 7;
    normalize_run(model_cfg, cfg);
    REQUIRE(model_cfg.aux_head == AuxHead::Binary);

    testing::TempDir dir;
    auto run_a = dir.file("run_a");
    auto run_b = dir.file("run_b");
    std::filesystem::create_directories(run_a);
    std::filesystem::create_directories(run_b);
    Transformer<float> out_model;
    auto report = train(train_w, val_w, vocab, lexicon, model_cfg, cfg, run_a, &out_model);

    CHECK(report.steps.size() == 8);  // 16 windows / batch 4 * 2 epochs
    CHECK(report.skipped_steps == 0);
    for (const auto& r : report.steps) {
        CHECK(r.total == r.lm_loss + cfg.corruption.alpha * r.aux_loss);
        CHECK(std::isfinite(r.total));
        CHECK(r.lr >= 0.0);
    }
    REQUIRE(!report.evals.empty());
    double best = report.evals.front().val_ppl;
    for (const auto& e : report.evals) {
        best = std::min(best, e.val_ppl);
        CHECK(e.val_ppl > 0.0);
        CHECK(e.aux_accuracy >= 0.0);
        CHECK(e.aux_accuracy <= 1.0);
    }
    CHECK(report.best_val_ppl == doctest::Approx(best).epsilon(1e-12));
    CHECK(report.assemble.assembled > 0);

    namespace fs = std::filesystem;
    CHECK(fs::exists(run_a + "/metrics.csv"));
    CHECK(fs::exists(run_a + "/report.json"));
    REQUIRE(fs::exists(report.best_checkpoint));
    REQUIRE(fs::exists(report.last_checkpoint));
    CheckpointMeta meta;
    auto restored = load_checkpoint(report.best_checkpoint, &meta);
    CHECK(meta.vocab_hash == vocab.hash());
    CHECK(restored.cfg == model_cfg);

    // a second identical run reproduces the metrics byte for byte
    auto report_b = train(train_w, val_w, vocab, lexicon, model_cfg, cfg, run_b);
    CHECK(slurp(run_a + "/metrics.csv") == slurp(run_b + "/metrics.csv"));
    CHECK(report_b.best_val_ppl == report.best_val_ppl);

    // the returned model is the final state, i.e. the last checkpoint
    CheckpointMeta last_meta;
    auto last = load_checkpoint(report.last_checkpoint, &last_meta);
    CHECK(last.params == out_model.params);
}
