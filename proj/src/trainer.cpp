#include "auxlm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace auxlm {

using nlohmann::json;

namespace {

constexpr uint64_t kTagEpoch = fnv1a64("epoch");
constexpr uint64_t kTagShuffle = fnv1a64("shuffle");
constexpr uint64_t kTagDropout = fnv1a64("dropout");
constexpr uint64_t kTagValCorrupt = fnv1a64("val-corrupt");

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("train.learning_rate must be positive");
    if (warmup_steps < 0) throw ConfigError("train.warmup_steps must be non-negative");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
    if (epochs <= 0) throw ConfigError("train.epochs must be positive");
    if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    if (grad_clip_norm && *grad_clip_norm <= 0.0) {
        throw ConfigError("train.grad_clip_norm must be positive when set");
    }
    if (eval_every <= 0) throw ConfigError("train.eval_every must be positive");
    corruption.validate();
}

void normalize_run(ModelConfig& model, TrainConfig& train) {
    if (train.corruption.task == AuxTask::None || train.corruption.alpha == 0.0) {
        train.corruption.task = AuxTask::None;
        train.corruption.alpha = 0.0;
        model.aux_head = AuxHead::None;
    } else {
        model.aux_head = aux_head_for(train.corruption.task);
    }
}

double lr_at(int64_t step, const LrSchedule& s) {
    if (step <= 0) return s.warmup_steps > 0 ? 0.0 : s.peak;
    if (step < s.warmup_steps) {
        return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    }
    if (s.total_steps <= s.warmup_steps) return s.peak;
    if (step >= s.total_steps) return 0.0;
    return s.peak * static_cast<double>(s.total_steps - step) /
           static_cast<double>(s.total_steps - s.warmup_steps);
}

AdamState AdamState::for_model(const Transformer<float>& model) {
    AdamState st;
    model.params.for_each([&](const std::string&, const Mat<float>& t, bool) {
        st.m.emplace_back(t.rows, t.cols);
        st.v.emplace_back(t.rows, t.cols);
    });
    return st;
}

bool adamw_step(Transformer<float>& model, const Params<float>& grads, AdamState& state,
                const AdamHyper& hp, std::string* diagnostic) {
    std::vector<Mat<float>*> thetas;
    std::vector<bool> decays;
    std::vector<std::string> names;
    model.params.for_each([&](const std::string& n, Mat<float>& t, bool d) {
        thetas.push_back(&t);
        decays.push_back(d);
        names.push_back(n);
    });
    std::vector<const Mat<float>*> gs;
    grads.for_each([&](const std::string&, const Mat<float>& t, bool) { gs.push_back(&t); });
    if (gs.size() != thetas.size()) throw Error("adamw: gradient/parameter tensor count mismatch");

    for (size_t i = 0; i < gs.size(); ++i) {
        if (gs[i]->size() != thetas[i]->size()) {
            throw Error("adamw: shape mismatch on tensor '" + names[i] + "'");
        }
        for (float g : gs[i]->data) {
            if (!std::isfinite(g)) {
                if (diagnostic) {
                    *diagnostic = "non-finite gradient in tensor '" + names[i] + "'";
                }
                return false;
            }
        }
    }

    int64_t t = state.step + 1;
    double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
    for (size_t i = 0; i < gs.size(); ++i) {
        auto& m = state.m[i].data;
        auto& v = state.v[i].data;
        auto& p = thetas[i]->data;
        const auto& g = gs[i]->data;
        bool decay = decays[i] && hp.weight_decay > 0.0;
        for (size_t j = 0; j < p.size(); ++j) {
            double gj = g[j];
            double mj = hp.beta1 * static_cast<double>(m[j]) + (1.0 - hp.beta1) * gj;
            double vj = hp.beta2 * static_cast<double>(v[j]) + (1.0 - hp.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            double mhat = mj / bc1;
            double vhat = vj / bc2;
            double theta = static_cast<double>(p[j]) - hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
            if (decay) theta -= hp.lr * hp.weight_decay * theta;
            p[j] = static_cast<float>(theta);
        }
    }
    state.step = t;
    return true;
}

double grad_global_norm(const Params<float>& grads) {
    double sq = 0.0;
    grads.for_each([&](const std::string&, const Mat<float>& t, bool) {
        for (float g : t.data) sq += static_cast<double>(g) * static_cast<double>(g);
    });
    return std::sqrt(sq);
}

void clip_gradients(Params<float>& grads, double max_norm) {
    double norm = grad_global_norm(grads);
    if (norm <= max_norm || norm == 0.0) return;
    double scale = max_norm / norm;
    grads.for_each([&](const std::string&, Mat<float>& t, bool) {
        for (auto& g : t.data) g = static_cast<float>(static_cast<double>(g) * scale);
    });
}

std::vector<EncodedExample> build_epoch_examples(const std::vector<TrainingWindow>& windows,
                                                 const Vocab& vocab, const Lexicon& lexicon,
                                                 const CorruptionConfig& corruption, int epoch,
                                                 bool freeze, int max_seq_len,
                                                 AssembleStats* stats) {
    CorruptionConfig ec = corruption;
    ec.seed = derive_key(corruption.seed, kTagEpoch, static_cast<uint64_t>(freeze ? 0 : epoch));
    std::vector<EncodedExample> out;
    out.reserve(windows.size());
    for (size_t i = 0; i < windows.size(); ++i) {
        std::optional<EncodedExample> ex;
        if (corruption.task == AuxTask::None) {
            ex = assemble_clean(windows[i], vocab, max_seq_len, stats);
        } else {
            CorruptionOutcome oc = corrupt_window(windows[i], i, ec, lexicon, vocab);
            AuxLabelTracks labels = build_aux_labels(oc, corruption.task, vocab);
            ex = assemble(oc, labels, vocab, max_seq_len, corruption.alpha, stats);
        }
        if (ex) out.push_back(std::move(*ex));
    }
    return out;
}

AuxEval evaluate_aux(const Transformer<float>& model,
                     const std::vector<EncodedExample>& examples) {
    if (model.cfg.aux_head == AuxHead::None) {
        throw Error("evaluate_aux: model has no auxiliary head");
    }
    Workspace<float> ws;
    int64_t labeled = 0, correct = 0;
    int64_t class_total[2] = {0, 0}, class_correct[2] = {0, 0};
    bool binary = model.cfg.aux_head == AuxHead::Binary;
    for (const auto& ex : examples) {
        model.forward(ex.input_ids, ws);
        int A = ws.aux_logits.cols;
        for (int t = 0; t < ws.aux_logits.rows; ++t) {
            TokenId y = ex.aux_labels[t];
            if (y == kIgnoreLabel) continue;
            if (y < 0 || y >= A) throw Error("evaluate_aux: label outside head classes");
            const float* row = ws.aux_logits.row(t);
            int pred = 0;
            for (int i = 1; i < A; ++i) {
                if (row[i] > row[pred]) pred = i;
            }
            ++labeled;
            bool hit = pred == y;
            correct += hit;
            if (binary) {
                ++class_total[y];
                class_correct[y] += hit;
            }
        }
    }
    if (labeled == 0) throw Error("evaluate_aux: no labeled auxiliary positions");
    AuxEval out;
    out.labeled = labeled;
    out.accuracy = static_cast<double>(correct) / static_cast<double>(labeled);
    if (binary) {
        double sum = 0.0;
        int present = 0;
        for (int c = 0; c < 2; ++c) {
            if (class_total[c] > 0) {
                sum += static_cast<double>(class_correct[c]) / static_cast<double>(class_total[c]);
                ++present;
            }
        }
        out.balanced_accuracy = present > 0 ? sum / present : 0.0;
    } else {
        out.balanced_accuracy = out.accuracy;
    }
    return out;
}

namespace {

double val_perplexity(const Transformer<float>& model,
                      const std::vector<EncodedExample>& examples) {
    Workspace<float> ws;
    CeSum total;
    for (const auto& ex : examples) {
        model.forward(ex.input_ids, ws);
        CeSum c = cross_entropy_sum(ws.lm_logits, ex.lm_labels);
        total.sum += c.sum;
        total.count += c.count;
    }
    if (total.count == 0) throw Error("validation: no labeled positions");
    return std::exp(total.sum / static_cast<double>(total.count));
}

void write_metrics_csv(const std::string& path, const std::vector<StepRecord>& steps) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "step,lm_loss,aux_loss,total,lr\n";
    char buf[256];
    for (const auto& r : steps) {
        std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(r.step), r.lm_loss, r.aux_loss, r.total, r.lr);
        out << buf;
    }
}

}  // namespace

TrainReport train(const std::vector<TrainingWindow>& train_windows,
                  const std::vector<TrainingWindow>& val_windows, const Vocab& vocab,
                  const Lexicon& lexicon, ModelConfig model_cfg, TrainConfig cfg,
                  const std::string& run_dir, Transformer<float>* out_model) {
    auto t0 = std::chrono::steady_clock::now();
    normalize_run(model_cfg, cfg);
    model_cfg.validate();
    cfg.validate();
    if (train_windows.empty()) throw Error("training set is empty");

    AuxTask task = cfg.corruption.task;
    double alpha = cfg.corruption.alpha;
    Transformer<float> model = Transformer<float>::init(model_cfg);
    Params<float> grads = model.make_grads();
    AdamState adam = AdamState::for_model(model);

    TrainReport report;

    std::vector<EncodedExample> val_clean;
    for (const auto& w : val_windows) {
        if (auto ex = assemble_clean(w, vocab, model_cfg.max_seq_len)) {
            val_clean.push_back(std::move(*ex));
        }
    }
    std::vector<EncodedExample> val_aux;
    if (task != AuxTask::None) {
        CorruptionConfig vc = cfg.corruption;
        vc.seed = derive_key(cfg.corruption.seed, kTagValCorrupt);
        for (size_t i = 0; i < val_windows.size(); ++i) {
            CorruptionOutcome oc = corrupt_window(val_windows[i], i, vc, lexicon, vocab);
            AuxLabelTracks labels = build_aux_labels(oc, task, vocab);
            if (auto ex = assemble(oc, labels, vocab, model_cfg.max_seq_len, alpha)) {
                val_aux.push_back(std::move(*ex));
            }
        }
    }

    auto run_eval = [&](int64_t step) {
        EvalRecord er;
        er.step = step;
        if (!val_clean.empty()) er.val_ppl = val_perplexity(model, val_clean);
        if (!val_aux.empty()) {
            AuxEval ae = evaluate_aux(model, val_aux);
            er.aux_accuracy = ae.accuracy;
            er.aux_balanced_accuracy = ae.balanced_accuracy;
        }
        report.evals.push_back(er);
        return er;
    };

    if (!val_clean.empty() || !val_aux.empty()) run_eval(0);  // untrained baseline row

    double best_ppl = std::numeric_limits<double>::infinity();
    LrSchedule sched{cfg.learning_rate, cfg.warmup_steps, 0};
    Workspace<float> ws;
    int64_t global_step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<EncodedExample> examples =
            build_epoch_examples(train_windows, vocab, lexicon, cfg.corruption, epoch,
                                 cfg.freeze_corruption, model_cfg.max_seq_len, &report.assemble);
        if (examples.empty()) throw Error("no training examples fit max_seq_len");
        if (epoch == 0) {
            int64_t steps_per_epoch =
                (static_cast<int64_t>(examples.size()) + cfg.batch_size - 1) / cfg.batch_size;
            sched.total_steps = steps_per_epoch * cfg.epochs;
        }

        std::vector<size_t> order(examples.size());
        std::iota(order.begin(), order.end(), size_t{0});
        StreamRng shuffle_rng(derive_key(cfg.seed, kTagShuffle, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + cfg.batch_size);
            int64_t lm_count = 0, aux_count = 0;
            for (size_t b = start; b < end; ++b) {
                const auto& ex = examples[order[b]];
                for (TokenId y : ex.lm_labels) lm_count += (y != kIgnoreLabel);
                if (model_cfg.aux_head != AuxHead::None) {
                    for (TokenId y : ex.aux_labels) aux_count += (y != kIgnoreLabel);
                }
            }

            grads.for_each([](const std::string&, Mat<float>& m, bool) { m.zero(); });
            CeSum lm_sum, aux_sum;
            for (size_t b = start; b < end; ++b) {
                const auto& ex = examples[order[b]];
                StreamRng drop(derive_key(cfg.seed, kTagDropout, static_cast<uint64_t>(global_step),
                                          static_cast<uint64_t>(b - start)));
                model.forward(ex.input_ids, ws, true, &drop);

                CeSum l = cross_entropy_sum(ws.lm_logits, ex.lm_labels);
                lm_sum.sum += l.sum;
                lm_sum.count += l.count;
                Mat<float> dlm(ws.lm_logits.rows, ws.lm_logits.cols);
                cross_entropy_backward(ws.lm_logits, ex.lm_labels,
                                       1.0 / static_cast<double>(lm_count), dlm);

                Mat<float> daux;
                if (model_cfg.aux_head != AuxHead::None) {
                    CeSum a = cross_entropy_sum(ws.aux_logits, ex.aux_labels);
                    aux_sum.sum += a.sum;
                    aux_sum.count += a.count;
                    if (aux_count > 0) {
                        daux = Mat<float>(ws.aux_logits.rows, ws.aux_logits.cols);
                        cross_entropy_backward(ws.aux_logits, ex.aux_labels,
                                               alpha / static_cast<double>(aux_count), daux);
                    }
                }
                model.backward(ex.input_ids, ws, dlm, daux, grads);
            }

            LossBreakdown lb = total_loss(lm_sum, aux_sum, alpha);
            ++global_step;
            double lr = lr_at(global_step, sched);

            if (!std::isfinite(lb.total)) {
                std::string ckpt;
                if (!run_dir.empty()) {
                    ckpt = run_dir + "/last-good.ckpt";
                    save_checkpoint(ckpt, model, vocab.hash(), global_step - 1);
                }
                throw Error("non-finite loss at step " + std::to_string(global_step) +
                            (ckpt.empty() ? "" : "; last good checkpoint saved to " + ckpt));
            }

            if (cfg.grad_clip_norm) clip_gradients(grads, *cfg.grad_clip_norm);
            AdamHyper hp;
            hp.lr = lr;
            hp.weight_decay = cfg.weight_decay;
            std::string diag;
            if (!adamw_step(model, grads, adam, hp, &diag)) {
                ++report.skipped_steps;
                std::fprintf(stderr, "step %lld skipped: %s\n",
                             static_cast<long long>(global_step), diag.c_str());
            }

            report.steps.push_back({global_step, lb.lm_loss, lb.aux_loss, lb.total, lr});

            bool last_step = epoch == cfg.epochs - 1 && end == order.size();
            if ((global_step % cfg.eval_every == 0 || last_step) &&
                (!val_clean.empty() || !val_aux.empty())) {
                EvalRecord er = run_eval(global_step);
                if (!val_clean.empty() && er.val_ppl < best_ppl) {
                    best_ppl = er.val_ppl;
                    if (!run_dir.empty()) {
                        report.best_checkpoint = run_dir + "/best.ckpt";
                        save_checkpoint(report.best_checkpoint, model, vocab.hash(), global_step);
                    }
                }
            }
        }
    }

    report.best_val_ppl = std::isfinite(best_ppl) ? best_ppl : 0.0;
    if (!run_dir.empty()) {
        report.last_checkpoint = run_dir + "/last.ckpt";
        save_checkpoint(report.last_checkpoint, model, vocab.hash(), global_step);
        if (report.best_checkpoint.empty()) report.best_checkpoint = report.last_checkpoint;
        write_metrics_csv(run_dir + "/metrics.csv", report.steps);
    }
    auto t1 = std::chrono::steady_clock::now();
    report.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

    if (!run_dir.empty()) {
        json evals = json::array();
        for (const auto& e : report.evals) {
            evals.push_back({{"step", e.step},
                             {"val_ppl", e.val_ppl},
                             {"aux_accuracy", e.aux_accuracy},
                             {"aux_balanced_accuracy", e.aux_balanced_accuracy}});
        }
        json rep{{"steps", report.steps.size()},
                 {"skipped_steps", report.skipped_steps},
                 {"best_val_ppl", report.best_val_ppl},
                 {"wall_seconds", report.wall_seconds},
                 {"best_checkpoint", report.best_checkpoint},
                 {"last_checkpoint", report.last_checkpoint},
                 {"assembled", report.assemble.assembled},
                 {"truncated", report.assemble.truncated},
                 {"rejected", report.assemble.rejected},
                 {"evals", evals}};
        std::ofstream out(run_dir + "/report.json", std::ios::binary);
        if (!out) throw IoError("cannot open '" + run_dir + "/report.json' for writing");
        out << rep.dump(2) << "\n";
    }
    if (out_model) *out_model = std::move(model);
    return report;
}

}  // namespace auxlm
