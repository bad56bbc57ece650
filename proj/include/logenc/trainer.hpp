#pragma once

#include <optional>
#include <string>
#include <vector>

#include "logenc/encoder.hpp"

namespace logenc {

struct TrainConfig {
    int batch_size = 16;
    uint64_t max_steps = 1000;
    double learning_rate = 1e-3;
    uint64_t warmup_steps = 100;
    double weight_decay = 0.01;
    double grad_clip_norm = 1.0;
    uint64_t seed = 0;
    uint64_t checkpoint_every = 0;  // 0 disables intermediate checkpoints
    uint64_t eval_every = 0;        // 0 disables periodic intrinsic eval

    void validate() const;  // throws BadConfig
};

/// Linear warmup to learning_rate, then linear decay to 0 at max_steps.
double lr_at(uint64_t step, const TrainConfig& cfg);

struct AdamState {
    EncoderParams<float> m, v;
    uint64_t t = 0;
};

AdamState make_adam_state(const EncoderConfig& cfg);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Scales grads in place so the global L2 norm is at most max_norm
/// (no-op when max_norm <= 0).  Returns the pre-clip norm.
double clip_global_norm(EncoderParams<float>& grads, double max_norm);

/// One decoupled-weight-decay Adam update; decay applies only to tensors that
/// received random init (embeddings and projection weights).
void adamw_step(EncoderParams<float>& params, const EncoderParams<float>& grads,
                AdamState& state, double lr, double weight_decay);

struct StepStat {
    uint64_t step;
    double loss;
    double lr;
};

struct EvalStat {
    uint64_t step;
    double perplexity;
    double accuracy;
};

struct PretrainResult {
    std::vector<StepStat> curve;
    std::vector<EvalStat> evals;
    uint64_t skipped_sequences = 0;
};

/**
 * MLM pretraining on the corpus's train split.  Every random draw is a pure
 * function of (cfg.seed, purpose, global sequence index), so resuming from a
 * checkpoint at step k reproduces the uninterrupted run bit for bit.
 * Throws NonFiniteLoss naming the offending step.  When checkpoint_dir is
 * non-empty, checkpoints land in checkpoint_dir/step_<n> at the configured
 * cadence and the caller persists the final state itself.
 */
PretrainResult pretrain(EncoderModel& model, AdamState& opt,
                        const std::vector<LogRecord>& corpus, const TokenizerModel& tokenizer,
                        const TrainConfig& cfg, const std::string& checkpoint_dir = "",
                        uint64_t start_step = 0);

void write_loss_curve(const std::string& path, const std::vector<StepStat>& curve);

/// Bundles model weights and optimizer moments for save_checkpoint.
Checkpoint make_train_checkpoint(const EncoderModel& model, const AdamState& opt,
                                 uint64_t step);

/// Rebuilds optimizer state from a checkpoint's extra tensors (zeros when the
/// checkpoint carries none, e.g. an inference-only export).
AdamState adam_from_checkpoint(const Checkpoint& ckpt);

/// One labeled set of logs, each log already tokenized to content ids.
struct ProbeExample {
    std::vector<std::vector<uint32_t>> logs;
    std::string label;
};

struct ProbeHead {
    MatF weights;  // K x (set_size * D)
    MatF bias;     // 1 x K
    std::vector<std::string> classes;
    MatF null_embed;  // 1 x D, learned stand-in for missing set slots
    int set_size = 8;
};

/**
 * Last-layer finetuning: lower layers stay frozen (bit-identical afterwards);
 * gradients reach only the final transformer block, the final LayerNorm, the
 * null embedding, and the classification head.  Each set keeps its most
 * recent set_size logs and pads short sets with the null embedding; the
 * concatenated mean-pooled embeddings feed a softmax head.
 * Throws EmptySet and LabelCardinality.
 */
ProbeHead finetune_probe(EncoderModel& model, const std::vector<ProbeExample>& examples,
                         const TrainConfig& cfg, int set_size = 8);

/// Predicted label for one set under a trained model + head.
std::string probe_predict(const EncoderModel& model, const ProbeHead& head,
                          const std::vector<std::vector<uint32_t>>& logs);

/**
 * The head-only core: multinomial logistic regression on fixed feature rows,
 * trained with the same Adam settings.  Used directly by feature-level tests
 * and internally by finetune_probe's head updates.
 */
ProbeHead train_probe_head(const MatF& features, const std::vector<std::string>& labels,
                           const TrainConfig& cfg);

}  // namespace logenc
