// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Optimization and phase training: AdamW with decoupled weight decay, a
// linear-warmup + cosine-decay schedule, global-norm gradient clipping,
// epoch/validation loops with best-checkpoint selection, and LoRA adapter
// fine-tuning for classification probes.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "selfsyn/checkpoint.hpp"
#include "selfsyn/data.hpp"
#include "selfsyn/model.hpp"

namespace selfsyn {

// ---------------------------------------------------------------------------
// Learning-rate schedule

struct Schedule {
  double peak_lr = 0.0;
  Index warmup_steps = 0;
  Index total_steps = 0;

  void validate() const;  // requires peak_lr > 0 and 0 < warmup < total
};

// Linear ramp 0 -> peak over [0, warmup], then cosine decay to exactly 0 at
// total_steps. Steps outside [0, total_steps] violate the contract.
double lr_at(const Schedule& s, Index step);

// Schedule for a run of `total_steps`: warmup is 5% of the total, capped at
// `warmup_cap` (the full-scale preset value) and clamped to [1, total-1].
Schedule scaled_schedule(double peak_lr, Index warmup_cap, Index total_steps);

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Parameters an optimizer instance owns, in a fixed order.
using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

// Trainable entries of `params` whose name starts with any of `prefixes`
// (empty prefix list = all trainable entries), in storage order.
NamedTensors trainable_entries(ModelParams<float>& params,
                               const std::vector<std::string>& prefixes = {});

OptimState make_optim_state(const NamedTensors& tensors);

// One decoupled-weight-decay Adam update with bias correction. Tensors with
// no accumulated gradient are treated as zero-gradient (decay still applies).
// A non-finite gradient value aborts, naming the offending tensor.
void adamw_step(NamedTensors& tensors, OptimState& state, double lr,
                const AdamWConfig& cfg = {});

// Scales all gradients so their joint L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(NamedTensors& tensors, double max_norm);

void zero_grads(NamedTensors& tensors);

// ---------------------------------------------------------------------------
// Datasets and loss

// One phase's data: either plain token sequences (text phases) or
// (image index, caption tokens) pairs plus the cached grouped encoder output
// per image (the encoder is frozen, so the cache never goes stale). Sequences
// carry neither BOS nor EOS; batching adds them.
struct TrainSet {
  std::vector<TokenSequence> text;
  std::vector<std::pair<Index, TokenSequence>> pairs;
  std::vector<Tensor<float>> grouped_images;

  bool multimodal() const { return !pairs.empty(); }
  Index size() const {
    return static_cast<Index>(multimodal() ? pairs.size() : text.size());
  }
};

struct LossResult {
  Tensor<float> loss;  // scalar, token-weighted mean over the batch
  Index tokens = 0;    // loss-bearing token count
};

// Token-weighted masked cross-entropy over one batch. Rows run through the
// decoder one at a time (no batch dimension in the tensor core); image rows
// are conditioned on project(grouped_images[image_id]).
LossResult batch_loss(const ModelParams<float>& params, const Batch& batch,
                      const std::vector<Tensor<float>>* grouped_images);

// Token-weighted mean masked cross-entropy over the whole set, evaluated
// eagerly (no gradients, no graph). Pure: same params, same value.
double validation_loss(const ModelParams<float>& params, const TrainSet& val,
                       Index batch_size = 32);

// ---------------------------------------------------------------------------
// Phase training

struct PhasePreset {
  Index epochs;
  double peak_lr;
  Index warmup_cap;  // full-scale warmup; desk runs scale down via scaled_schedule
};

// Full-scale defaults per phase (1-4); batch size at full scale is 256.
PhasePreset phase_preset(int phase);
inline constexpr Index kPaperBatchSize = 256;

struct PhaseConfig {
  int phase = 1;  // 1..4: odd phases train decoder only, even also the projector
  Index epochs = 1;
  double peak_lr = 1e-4;
  Index warmup_cap = 5000;
  Index batch_size = 32;
  Index validate_every = 50;  // steps; a final validation always happens
  double grad_clip = 1.0;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  std::string out_dir;            // checkpoint directory
  bool save_checkpoints = true;   // off: validation points carry no path/digest

  static PhaseConfig from_preset(int phase, std::uint64_t seed, std::string out_dir);
};

struct ValidationPoint {
  Index step = 0;
  double val_loss = 0.0;
  std::string checkpoint_path;  // empty when checkpoints are disabled
  std::string digest;
};

// Argmin over val_loss; ties go to the earliest step.
Index best_validation_index(const std::vector<ValidationPoint>& points);

struct PhaseRecord {
  int phase = 0;
  Index total_steps = 0;
  double final_train_loss = 0.0;  // mean over the last epoch's batches
  std::vector<ValidationPoint> validations;
  Index best_index = -1;  // argmin val_loss, ties -> earliest step

  const ValidationPoint& best() const;
  std::string to_json() const;
};

// Trains `params` in place for the configured number of epochs and returns
// the validation trace. Phases 1/3 expect text data, phases 2/4 multimodal
// pairs; the frozen encoder is never updated.
PhaseRecord run_phase(ModelParams<float>& params, const PhaseConfig& cfg, const TrainSet& train,
                      const TrainSet& val);

// ---------------------------------------------------------------------------
// LoRA fine-tuning

struct LoraConfig {
  Index rank = 8;
  double alpha = 16.0;
  // Attention projection names, applied in every decoder layer.
  std::vector<std::string> targets = {"wq", "wv"};
  Index steps = 200;
  double lr = 1e-2;
  Index batch_size = 16;
  std::uint64_t seed = 0;
  AdamWConfig adamw;
};

struct LoraAdapter {
  Index rank = 0;
  double alpha = 0.0;
  // Per target matrix W [d_in x d_out]: delta = (alpha/rank) * A B with
  // A [d_in x rank] (gaussian init) and B [rank x d_out] (zero init), so a
  // fresh adapter leaves the model bit-identical.
  std::vector<std::string> names;
  std::vector<Tensor<float>> a;
  std::vector<Tensor<float>> b;
};

LoraAdapter make_lora_adapter(const ModelParams<float>& base, const LoraConfig& cfg);

// Parameter view where each adapted matrix is W + (alpha/rank) * A B, built
// with tracked ops so gradients reach A and B. Other tensors are shared.
ModelParams<float> lora_apply(const ModelParams<float>& base, const LoraAdapter& adapter);

// A labeled example for the classification probe.
struct LabeledSequence {
  TokenSequence tokens;  // no BOS/EOS
  Index label = 0;
};

struct LoraResult {
  LoraAdapter adapter;
  Tensor<float> head_w;  // [hidden_dim x n_classes]
  Tensor<float> head_b;  // [n_classes]
  std::vector<double> step_losses;
  double train_accuracy = 0.0;
};

// Classification logits from the final hidden state of [BOS, seq, EOS].
Tensor<float> lora_classify_logits(const ModelParams<float>& effective, const Tensor<float>& head_w,
                                   const Tensor<float>& head_b, const TokenSequence& tokens);

// Fine-tunes adapter + classification head on the labeled set; the base
// parameters are cloned and frozen, so the caller's copy stays bit-identical.
LoraResult lora_finetune(const ModelParams<float>& base, const LoraConfig& cfg,
                         const std::vector<LabeledSequence>& dataset, Index n_classes);

}  // namespace selfsyn
