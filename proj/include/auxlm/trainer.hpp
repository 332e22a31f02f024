#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "auxlm/corruption.hpp"
#include "auxlm/model.hpp"
#include "auxlm/prompt.hpp"

namespace auxlm {

struct TrainConfig {
    double learning_rate = 5e-5;
    int64_t warmup_steps = 5000;
    double weight_decay = 0.001;
    int epochs = 5;
    int batch_size = 8;
    std::optional<double> grad_clip_norm = 1.0;
    uint64_t seed = 0;
    CorruptionConfig corruption;
    int64_t eval_every = 200;
    bool freeze_corruption = false;  // reuse epoch-0 corruption every epoch

    void validate() const;
};

// An alpha of zero is the vanilla baseline: drop the corruption machinery and
// the aux head entirely so the run is bit-identical to task=None.
void normalize_run(ModelConfig& model, TrainConfig& train);

struct LrSchedule {
    double peak = 0.0;
    int64_t warmup_steps = 0;
    int64_t total_steps = 0;
};

// Linear warmup 0 -> peak over warmup_steps, then linear decay to 0 at
// total_steps.
double lr_at(int64_t step, const LrSchedule& s);

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; skips layer-norm gains and biases
};

struct AdamState {
    int64_t step = 0;  // completed updates
    std::vector<Mat<float>> m;
    std::vector<Mat<float>> v;

    static AdamState for_model(const Transformer<float>& model);
};

// One optimizer update. Returns false (and sets *diagnostic) without touching
// parameters when any gradient value is non-finite.
bool adamw_step(Transformer<float>& model, const Params<float>& grads, AdamState& state,
                const AdamHyper& hp, std::string* diagnostic = nullptr);

double grad_global_norm(const Params<float>& grads);

// Scales gradients so the global norm is at most max_norm.
void clip_gradients(Params<float>& grads, double max_norm);

// Corrupt + assemble one epoch of training examples. Corruption randomness is
// keyed by (corruption.seed, epoch, window_index); freeze pins epoch 0.
std::vector<EncodedExample> build_epoch_examples(const std::vector<TrainingWindow>& windows,
                                                 const Vocab& vocab, const Lexicon& lexicon,
                                                 const CorruptionConfig& corruption, int epoch,
                                                 bool freeze, int max_seq_len,
                                                 AssembleStats* stats = nullptr);

struct StepRecord {
    int64_t step = 0;
    double lm_loss = 0.0;
    double aux_loss = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

struct EvalRecord {
    int64_t step = 0;
    double val_ppl = 0.0;
    double aux_accuracy = 0.0;
    double aux_balanced_accuracy = 0.0;
};

struct TrainReport {
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
    int64_t skipped_steps = 0;
    double best_val_ppl = 0.0;
    double wall_seconds = 0.0;
    std::string best_checkpoint;
    std::string last_checkpoint;
    AssembleStats assemble;
};

struct AuxEval {
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;  // macro recall for binary heads
    int64_t labeled = 0;
};

// Argmax over aux logits vs labels on non-ignored positions; errors when no
// position carries a label.
AuxEval evaluate_aux(const Transformer<float>& model, const std::vector<EncodedExample>& examples);

// Full training loop. When run_dir is non-empty it receives metrics.csv,
// best.ckpt, last.ckpt, and report.json. out_model, if given, receives the
// final parameters.
TrainReport train(const std::vector<TrainingWindow>& train_windows,
                  const std::vector<TrainingWindow>& val_windows, const Vocab& vocab,
                  const Lexicon& lexicon, ModelConfig model_cfg, TrainConfig cfg,
                  const std::string& run_dir, Transformer<float>* out_model = nullptr);

}  // namespace auxlm
