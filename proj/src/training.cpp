// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "json.hpp"
#include "selfsyn/rng.hpp"
#include "selfsyn/tokenizer.hpp"

namespace selfsyn {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// ---------------------------------------------------------------------------
// Schedule

void Schedule::validate() const {
  if (peak_lr <= 0.0) throw ConfigError(cat("Schedule: peak_lr must be positive, got ", peak_lr));
  if (warmup_steps <= 0 || warmup_steps >= total_steps)
    throw ConfigError(cat("Schedule: need 0 < warmup < total, got warmup ", warmup_steps,
                          " total ", total_steps));
}

double lr_at(const Schedule& s, Index step) {
  s.validate();
  if (step < 0 || step > s.total_steps)
    throw ContractError(cat("lr_at: step ", step, " outside [0, ", s.total_steps, "]"));
  if (step < s.warmup_steps)
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.peak_lr * 0.5 * (1.0 + std::cos(kPi * progress));
}

Schedule scaled_schedule(double peak_lr, Index warmup_cap, Index total_steps) {
  if (total_steps < 2)
    throw ConfigError(cat("scaled_schedule: need at least 2 steps, got ", total_steps));
  Index warmup = std::min(warmup_cap, total_steps / 20);
  warmup = std::max<Index>(warmup, 1);
  warmup = std::min(warmup, total_steps - 1);
  return Schedule{peak_lr, warmup, total_steps};
}

// ---------------------------------------------------------------------------
// AdamW

NamedTensors trainable_entries(ModelParams<float>& params,
                               const std::vector<std::string>& prefixes) {
  NamedTensors out;
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad()) continue;
    if (!prefixes.empty()) {
      bool hit = false;
      for (const auto& p : prefixes) hit = hit || name.rfind(p, 0) == 0;
      if (!hit) continue;
    }
    out.emplace_back(name, t);
  }
  return out;
}

OptimState make_optim_state(const NamedTensors& tensors) {
  OptimState st;
  for (const auto& [name, t] : tensors) {
    st.names.push_back(name);
    st.m.emplace_back(t.values().size(), 0.0f);
    st.v.emplace_back(t.values().size(), 0.0f);
  }
  return st;
}

void adamw_step(NamedTensors& tensors, OptimState& state, double lr, const AdamWConfig& cfg) {
  if (state.names.size() != tensors.size())
    throw ContractError(cat("adamw_step: optimizer state covers ", state.names.size(),
                            " tensors, got ", tensors.size()));
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  for (size_t i = 0; i < tensors.size(); ++i) {
    auto& [name, param] = tensors[i];
    if (state.names[i] != name)
      throw ContractError(cat("adamw_step: state/tensor order mismatch at ", name));
    if (!param.requires_grad())
      throw ContractError(cat("adamw_step: frozen tensor ", name, " in the optimizer set"));
    auto& values = param.values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has_grad = param.has_grad();
    const auto& grad = param.grad();
    for (size_t j = 0; j < values.size(); ++j) {
      const double g = has_grad ? static_cast<double>(grad[j]) : 0.0;
      if (!std::isfinite(g))
        throw ContractError(cat("adamw_step: non-finite gradient in tensor ", name));
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      const double w = static_cast<double>(values[j]);
      values[j] = static_cast<float>(w - lr * update - lr * cfg.weight_decay * w);
    }
  }
}

double clip_global_norm(NamedTensors& tensors, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : tensors) {
    if (!t.has_grad()) continue;
    for (float g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& [name, t] : tensors) {
      if (!t.has_grad()) continue;
      for (float& g : t.grad()) g *= scale;
    }
  }
  return norm;
}

void zero_grads(NamedTensors& tensors) {
  for (auto& [name, t] : tensors) t.zero_grad();
}

// ---------------------------------------------------------------------------
// Loss

namespace {

// Length of row r with trailing padding removed.
Index row_length(const Batch& b, Index r) {
  Index len = b.cols;
  while (len > 0 && b.token(r, len - 1) == BpeVocab::kPad) --len;
  return len;
}

// Scalar cross-entropy contribution of one row: (per-token mean, token count).
std::pair<Tensor<float>, Index> row_loss(const ModelParams<float>& p, const Batch& b, Index r,
                                         const std::vector<Tensor<float>>* grouped_images) {
  const Index len = row_length(b, r);
  const Index slots = b.image_ids.empty() ? 0 : p.config.n_image_slots();
  if (len < slots + 2)
    throw ContractError(cat("batch_loss: row ", r, " too short (", len, " tokens)"));

  // Inputs feed positions 0..len-2; the target at input position i is token
  // i+1, masked by the batch's loss mask.
  TokenSequence targets;
  std::vector<std::uint8_t> mask;
  for (Index c = slots + 1; c < len; ++c) {
    targets.push_back(b.token(r, c));
    mask.push_back(b.mask[static_cast<size_t>(r * b.cols + c)]);
  }

  Tensor<float> logits;
  if (slots == 0) {
    TokenSequence inputs;
    for (Index c = 0; c < len - 1; ++c) inputs.push_back(b.token(r, c));
    logits = forward_lm(p, inputs);
  } else {
    if (grouped_images == nullptr)
      throw ContractError("batch_loss: image-conditioned batch without cached image tensors");
    const Index img = b.image_ids[static_cast<size_t>(r)];
    if (img < 0 || img >= static_cast<Index>(grouped_images->size()))
      throw ContractError(cat("batch_loss: image id ", img, " outside cache of ",
                              grouped_images->size()));
    TokenSequence text_inputs;  // BOS .. last-but-one token
    for (Index c = slots; c < len - 1; ++c) text_inputs.push_back(b.token(r, c));
    auto projected = project(p, (*grouped_images)[static_cast<size_t>(img)]);
    logits = forward_multimodal_from_projection(p, projected, text_inputs);
  }

  Index count = 0;
  for (auto mvalue : mask) count += mvalue ? 1 : 0;
  return {cross_entropy_masked(logits, targets, mask), count};
}

}  // namespace

LossResult batch_loss(const ModelParams<float>& params, const Batch& batch,
                      const std::vector<Tensor<float>>* grouped_images) {
  if (batch.rows < 1) throw ContractError("batch_loss: empty batch");
  Tensor<float> total;
  Index tokens = 0;
  std::vector<std::pair<Tensor<float>, Index>> rows;
  for (Index r = 0; r < batch.rows; ++r) {
    rows.push_back(row_loss(params, batch, r, grouped_images));
    tokens += rows.back().second;
  }
  for (Index r = 0; r < batch.rows; ++r) {
    auto contribution = scale(rows[static_cast<size_t>(r)].first,
                              static_cast<float>(static_cast<double>(rows[static_cast<size_t>(r)].second) /
                                                 static_cast<double>(tokens)));
    total = (r == 0) ? contribution : add(total, contribution);
  }
  return {total, tokens};
}

double validation_loss(const ModelParams<float>& params, const TrainSet& val, Index batch_size) {
  if (val.size() < 1) throw ConfigError("validation_loss: empty validation set");
  if (batch_size < 1) throw ConfigError("validation_loss: batch_size must be positive");
  // Fixed batching seed: the value is a token-weighted mean, so order only
  // affects padding layout, never the result; the fixed seed makes the
  // float-summation order reproducible too.
  Rng rng(0);
  std::vector<Batch> batches =
      val.multimodal() ? make_multimodal_batches(val.pairs, params.config.n_image_slots(),
                                                 batch_size, rng)
                       : make_batches(val.text, batch_size, rng);
  double nll_sum = 0.0;
  std::int64_t token_sum = 0;
  const std::vector<Tensor<float>>* images = val.multimodal() ? &val.grouped_images : nullptr;
  for (const Batch& b : batches) {
    LossResult r = batch_loss(params, b, images);
    nll_sum += static_cast<double>(r.loss.item()) * static_cast<double>(r.tokens);
    token_sum += r.tokens;
  }
  return nll_sum / static_cast<double>(token_sum);
}

// ---------------------------------------------------------------------------
// Phase training

PhasePreset phase_preset(int phase) {
  switch (phase) {
    case 1: return {15, 1e-4, 5000};
    case 2: return {5, 1e-5, 250};
    case 3: return {2, 1e-5, 500};
    case 4: return {2, 1e-5, 250};
    default: throw ConfigError(cat("phase_preset: phase must be 1..4, got ", phase));
  }
}

PhaseConfig PhaseConfig::from_preset(int phase, std::uint64_t seed, std::string out_dir) {
  const PhasePreset p = phase_preset(phase);
  PhaseConfig cfg;
  cfg.phase = phase;
  cfg.epochs = p.epochs;
  cfg.peak_lr = p.peak_lr;
  cfg.warmup_cap = p.warmup_cap;
  cfg.seed = seed;
  cfg.out_dir = std::move(out_dir);
  return cfg;
}

Index best_validation_index(const std::vector<ValidationPoint>& points) {
  if (points.empty()) throw ContractError("best_validation_index: no validation points");
  Index best = 0;
  for (Index i = 1; i < static_cast<Index>(points.size()); ++i)
    if (points[static_cast<size_t>(i)].val_loss < points[static_cast<size_t>(best)].val_loss)
      best = i;
  return best;
}

const ValidationPoint& PhaseRecord::best() const {
  if (best_index < 0 || best_index >= static_cast<Index>(validations.size()))
    throw ContractError("PhaseRecord: no validation points recorded");
  return validations[static_cast<size_t>(best_index)];
}

std::string PhaseRecord::to_json() const {
  nlohmann::ordered_json j;
  j["phase"] = phase;
  j["total_steps"] = total_steps;
  j["final_train_loss"] = final_train_loss;
  j["validations"] = nlohmann::ordered_json::array();
  for (const auto& v : validations) {
    j["validations"].push_back({{"step", v.step},
                                {"val_loss", v.val_loss},
                                {"checkpoint", v.checkpoint_path},
                                {"digest", v.digest}});
  }
  if (best_index >= 0) {
    const auto& b = best();
    j["best"] = {{"step", b.step},
                 {"val_loss", b.val_loss},
                 {"checkpoint", b.checkpoint_path},
                 {"digest", b.digest}};
  }
  return j.dump(2);
}

namespace {

std::vector<std::string> phase_param_prefixes(int phase) {
  // Odd phases adjust the decoder alone; even phases also train the
  // image projector. The encoder stays frozen by construction.
  if (phase == 1 || phase == 3) return {"decoder."};
  if (phase == 2 || phase == 4) return {"decoder.", "proj."};
  throw ConfigError(cat("run_phase: phase must be 1..4, got ", phase));
}

}  // namespace

PhaseRecord run_phase(ModelParams<float>& params, const PhaseConfig& cfg, const TrainSet& train,
                      const TrainSet& val) {
  const bool multimodal = cfg.phase == 2 || cfg.phase == 4;
  if (cfg.epochs < 1) throw ConfigError(cat("run_phase: epochs must be positive, got ", cfg.epochs));
  if (cfg.batch_size < 1)
    throw ConfigError(cat("run_phase: batch_size must be positive, got ", cfg.batch_size));
  if (cfg.validate_every < 1)
    throw ConfigError(cat("run_phase: validate_every must be positive, got ", cfg.validate_every));
  if (train.size() < 1) throw ConfigError("run_phase: empty training set");
  if (val.size() < 1) throw ConfigError("run_phase: empty validation set");
  if (multimodal != train.multimodal() || multimodal != val.multimodal())
    throw ConfigError(cat("run_phase: phase ", cfg.phase, " expects ",
                          multimodal ? "multimodal" : "text", " data"));
  if (cfg.save_checkpoints && cfg.out_dir.empty())
    throw ConfigError("run_phase: checkpoints enabled but no output directory given");

  const Index n = train.size();
  const Index steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const Index total_steps = cfg.epochs * steps_per_epoch;
  const Schedule schedule = scaled_schedule(cfg.peak_lr, cfg.warmup_cap, total_steps);

  NamedTensors opt_set = trainable_entries(params, phase_param_prefixes(cfg.phase));
  if (opt_set.empty()) throw ConfigError("run_phase: nothing trainable for this phase");
  OptimState state = make_optim_state(opt_set);

  const std::vector<Tensor<float>>* train_images = multimodal ? &train.grouped_images : nullptr;

  PhaseRecord record;
  record.phase = cfg.phase;
  record.total_steps = total_steps;

  auto validate_now = [&](Index completed_steps) {
    ValidationPoint pt;
    pt.step = completed_steps;
    pt.val_loss = validation_loss(params, val, cfg.batch_size);
    if (cfg.save_checkpoints) {
      nlohmann::ordered_json meta;
      meta["phase"] = cfg.phase;
      meta["step"] = completed_steps;
      meta["val_loss"] = pt.val_loss;
      char name[64];
      std::snprintf(name, sizeof(name), "phase%d-step%06lld.ssckpt", cfg.phase,
                    static_cast<long long>(completed_steps));
      pt.checkpoint_path = (std::filesystem::path(cfg.out_dir) / name).string();
      pt.digest = save_checkpoint(params, &state, meta.dump(), pt.checkpoint_path);
    }
    record.validations.push_back(std::move(pt));
  };

  Index step = 0;
  double last_epoch_mean = 0.0;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng(child_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<Batch> batches =
        multimodal
            ? make_multimodal_batches(train.pairs, params.config.n_image_slots(), cfg.batch_size,
                                      epoch_rng)
            : make_batches(train.text, cfg.batch_size, epoch_rng);
    double epoch_mean = 0.0;
    for (const Batch& b : batches) {
      zero_grads(opt_set);
      Tape<float> tape;
      {
        Tape<float>::Scope scope(tape);
        LossResult r = batch_loss(params, b, train_images);
        tape.backward(r.loss);
        epoch_mean += static_cast<double>(r.loss.item());
      }
      clip_global_norm(opt_set, cfg.grad_clip);
      adamw_step(opt_set, state, lr_at(schedule, step), cfg.adamw);
      ++step;
      if (step % cfg.validate_every == 0 && step < total_steps) validate_now(step);
    }
    last_epoch_mean = epoch_mean / static_cast<double>(batches.size());
  }
  validate_now(total_steps);
  record.final_train_loss = last_epoch_mean;
  record.best_index = best_validation_index(record.validations);
  return record;
}

// ---------------------------------------------------------------------------
// LoRA

namespace {

const std::vector<std::string> kAttentionTargets = {"wq", "wk", "wv", "wo"};

void validate_lora_targets(const LoraConfig& cfg) {
  if (cfg.rank < 1) throw ConfigError(cat("lora: rank must be >= 1, got ", cfg.rank));
  if (cfg.targets.empty()) throw ConfigError("lora: no target matrices named");
  for (const auto& t : cfg.targets) {
    bool known = false;
    for (const auto& k : kAttentionTargets) known = known || t == k;
    if (!known)
      throw ConfigError(cat("lora: unknown target ", t, " (attention projections are wq/wk/wv/wo)"));
  }
}

}  // namespace

LoraAdapter make_lora_adapter(const ModelParams<float>& base, const LoraConfig& cfg) {
  validate_lora_targets(cfg);
  LoraAdapter ad;
  ad.rank = cfg.rank;
  ad.alpha = cfg.alpha;
  Rng rng(child_seed(cfg.seed, 0x10ade5));
  for (Index l = 0; l < base.config.n_layers; ++l) {
    for (const auto& t : cfg.targets) {
      const std::string name = cat("decoder.L", l, ".", t);
      const Tensor<float>& w = base.at(name);
      ad.names.push_back(name);
      ad.a.push_back(detail::random_tensor<float>(rng, {w.dim(0), cfg.rank}, 0.02));
      ad.b.push_back(Tensor<float>::zeros({cfg.rank, w.dim(1)}));
      ad.a.back().set_requires_grad(true);
      ad.b.back().set_requires_grad(true);
    }
  }
  return ad;
}

ModelParams<float> lora_apply(const ModelParams<float>& base, const LoraAdapter& adapter) {
  ModelParams<float> out;
  out.config = base.config;
  const float s = static_cast<float>(adapter.alpha / static_cast<double>(adapter.rank));
  for (const auto& [name, t] : base.entries()) {
    Index hit = -1;
    for (size_t i = 0; i < adapter.names.size(); ++i)
      if (adapter.names[i] == name) hit = static_cast<Index>(i);
    if (hit < 0) {
      out.add(name, t, t.requires_grad());
      continue;
    }
    auto delta = scale(matmul(adapter.a[static_cast<size_t>(hit)],
                              adapter.b[static_cast<size_t>(hit)]),
                       s);
    out.add(name, add(t, delta), true);
  }
  return out;
}

Tensor<float> lora_classify_logits(const ModelParams<float>& effective, const Tensor<float>& head_w,
                                   const Tensor<float>& head_b, const TokenSequence& tokens) {
  TokenSequence row;
  row.reserve(tokens.size() + 2);
  row.push_back(BpeVocab::kBos);
  row.insert(row.end(), tokens.begin(), tokens.end());
  row.push_back(BpeVocab::kEos);
  const Index t = static_cast<Index>(row.size());
  if (t > effective.config.max_seq_len)
    throw LengthError(cat("lora_classify_logits: sequence of ", t, " exceeds max_seq_len ",
                          effective.config.max_seq_len));
  std::vector<Index> positions(static_cast<size_t>(t));
  std::iota(positions.begin(), positions.end(), Index(0));
  auto hidden = decoder_hidden(effective, embedding(effective.at("decoder.embed"), row), positions);
  auto last = slice_rows(hidden, t - 1, 1);
  return add_bias(matmul(last, head_w), head_b);
}

LoraResult lora_finetune(const ModelParams<float>& base, const LoraConfig& cfg,
                         const std::vector<LabeledSequence>& dataset, Index n_classes) {
  validate_lora_targets(cfg);
  if (dataset.empty()) throw ConfigError("lora_finetune: empty dataset");
  if (n_classes < 2) throw ConfigError(cat("lora_finetune: need >= 2 classes, got ", n_classes));
  for (const auto& ex : dataset)
    if (ex.label < 0 || ex.label >= n_classes)
      throw ConfigError(cat("lora_finetune: label ", ex.label, " outside ", n_classes, " classes"));

  // Freeze a private copy so nothing can write to the caller's tensors.
  ModelParams<float> frozen = base.clone();
  for (auto& [name, t] : frozen.entries()) t.set_requires_grad(false);

  LoraResult result;
  result.adapter = make_lora_adapter(frozen, cfg);
  Rng rng(child_seed(cfg.seed, 0xc1a55));
  result.head_w = detail::random_tensor<float>(rng, {frozen.config.hidden_dim, n_classes}, 0.02);
  result.head_b = Tensor<float>::zeros({n_classes});
  result.head_w.set_requires_grad(true);
  result.head_b.set_requires_grad(true);

  NamedTensors opt_set;
  for (size_t i = 0; i < result.adapter.names.size(); ++i) {
    opt_set.emplace_back(cat("lora.", result.adapter.names[i], ".a"), result.adapter.a[i]);
    opt_set.emplace_back(cat("lora.", result.adapter.names[i], ".b"), result.adapter.b[i]);
  }
  opt_set.emplace_back("lora.head.w", result.head_w);
  opt_set.emplace_back("lora.head.b", result.head_b);
  OptimState state = make_optim_state(opt_set);
  const Schedule schedule = scaled_schedule(cfg.lr, cfg.steps, cfg.steps);

  const Index n = static_cast<Index>(dataset.size());
  for (Index step = 0; step < cfg.steps; ++step) {
    zero_grads(opt_set);
    Tape<float> tape;
    {
      Tape<float>::Scope scope(tape);
      ModelParams<float> effective = lora_apply(frozen, result.adapter);
      Tensor<float> loss;
      const Index bs = std::min(cfg.batch_size, n);
      for (Index i = 0; i < bs; ++i) {
        const auto& ex = dataset[static_cast<size_t>(rng.uniform_int(0, n - 1))];
        auto logits = lora_classify_logits(effective, result.head_w, result.head_b, ex.tokens);
        auto ce = cross_entropy_masked(logits, {static_cast<TokenId>(ex.label)}, {1});
        auto contribution = scale(ce, 1.0f / static_cast<float>(bs));
        loss = (i == 0) ? contribution : add(loss, contribution);
      }
      tape.backward(loss);
      result.step_losses.push_back(static_cast<double>(loss.item()));
    }
    clip_global_norm(opt_set, 1.0);
    adamw_step(opt_set, state, lr_at(schedule, step), cfg.adamw);
  }

  // Train accuracy with the finished adapter, evaluated eagerly.
  ModelParams<float> effective = lora_apply(frozen, result.adapter);
  Index correct = 0;
  for (const auto& ex : dataset) {
    auto logits = lora_classify_logits(effective, result.head_w, result.head_b, ex.tokens);
    Index best = 0;
    for (Index c = 1; c < n_classes; ++c)
      if (logits(0, c) > logits(0, best)) best = c;
    if (best == ex.label) ++correct;
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  return result;
}

}  // namespace selfsyn
