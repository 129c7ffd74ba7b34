// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

namespace selfsyn {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw ConfigError(cat("config: unknown key '", key, "' in ", where));
}

template <class T>
std::optional<T> opt_number(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) return std::nullopt;
  if (!j[key].is_number())
    throw ConfigError(cat("config: '", key, "' in ", where, " must be a number"));
  return j[key].get<T>();
}

std::string opt_path(const json& j, const char* key, const fs::path& base,
                     const std::string& where) {
  if (!j.contains(key)) return {};
  if (!j[key].is_string())
    throw ConfigError(cat("config: '", key, "' in ", where, " must be a string path"));
  const fs::path p = j[key].get<std::string>();
  return (p.is_absolute() ? p : base / p).lexically_normal().string();
}

SamplerConfig parse_sampler(const json& j, const std::string& where) {
  reject_unknown_keys(j,
                      {"temperature", "top_k", "top_p", "min_len", "max_len_low", "max_len_high",
                       "hard_cap", "draw_target_length"},
                      where);
  SamplerConfig s;
  s.temperature = j.value("temperature", s.temperature);
  s.top_k = j.value("top_k", s.top_k);
  s.top_p = j.value("top_p", s.top_p);
  s.min_len = j.value("min_len", s.min_len);
  s.max_len_low = j.value("max_len_low", s.max_len_low);
  s.max_len_high = j.value("max_len_high", s.max_len_high);
  s.hard_cap = j.value("hard_cap", s.hard_cap);
  s.draw_target_length = j.value("draw_target_length", s.draw_target_length);
  return s;
}

StageOverrides parse_overrides(const json& j, const std::string& where) {
  StageOverrides ov;
  ov.epochs = opt_number<Index>(j, "epochs", where);
  ov.peak_lr = opt_number<double>(j, "peak_lr", where);
  ov.warmup_cap = opt_number<Index>(j, "warmup_cap", where);
  ov.batch_size = opt_number<Index>(j, "batch_size", where);
  ov.validate_every = opt_number<Index>(j, "validate_every", where);
  ov.grad_clip = opt_number<double>(j, "grad_clip", where);
  return ov;
}

}  // namespace

void StageOverrides::apply(PhaseConfig& cfg) const {
  if (epochs) cfg.epochs = *epochs;
  if (peak_lr) cfg.peak_lr = *peak_lr;
  if (warmup_cap) cfg.warmup_cap = *warmup_cap;
  if (batch_size) cfg.batch_size = *batch_size;
  if (validate_every) cfg.validate_every = *validate_every;
  if (grad_clip) cfg.grad_clip = *grad_clip;
}

const PhaseSpec& PipelineConfig::phase(int k) const {
  for (const auto& p : phases)
    if (p.phase == k) return p;
  throw ConfigError(cat("config: phase ", k, " not configured"));
}

Index PipelineConfig::vocab_target() const {
  if (tokenizer_vocab > 0) return tokenizer_vocab;
  return preset == "paper" ? 16000 : 512;
}

ModelConfig PipelineConfig::model_config(Index vocab_size) const {
  ModelConfig c =
      preset == "paper" ? ModelConfig::paper_preset() : ModelConfig::desk_preset(vocab_size);
  if (preset == "paper") c.vocab_size = vocab_size;
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  if (preset != "desk" && preset != "paper")
    throw ConfigError(cat("config: preset must be 'desk' or 'paper', got '", preset, "'"));
  if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError(cat("config: validation_fraction must be in (0,1), got ",
                          validation_fraction));
  if (phases.empty()) throw ConfigError("config: at least phase 1 must be configured");
  for (size_t i = 0; i < phases.size(); ++i) {
    const auto& p = phases[i];
    if (p.phase != static_cast<int>(i) + 1)
      throw ConfigError(cat("config: phases must run 1..N in order; entry ", i + 1,
                            " declares phase ", p.phase));
    const bool text_phase = p.phase == 1 || p.phase == 3;
    if (text_phase && p.corpus.empty())
      throw ConfigError(cat("config: phase ", p.phase, " needs a 'corpus' path"));
    if (!text_phase && p.captions.empty())
      throw ConfigError(cat("config: phase ", p.phase, " needs a 'captions' path"));
    if (p.phase == 3 && p.synthesis_manifest.empty())
      throw ConfigError("config: phase 3 needs a 'synthesis_manifest' of images to caption");
    if (p.phase != 3 && !p.synthesis_manifest.empty())
      throw ConfigError(cat("config: 'synthesis_manifest' only belongs to phase 3, found on ",
                            p.phase));
  }
  if (vocab_target() <= BpeVocab::kBaseSize)
    throw ConfigError(cat("config: tokenizer vocab_size must exceed the ", BpeVocab::kBaseSize,
                          "-entry byte base, got ", vocab_target()));
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot open config: ", path));
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw CorruptionError(cat("malformed config ", path, ": ", e.what()));
  }
  if (!j.is_object()) throw ConfigError(cat("config ", path, ": top level must be an object"));
  reject_unknown_keys(j,
                      {"preset", "seed", "out_dir", "validation_fraction", "tokenizer", "phases",
                       "eval_suite"},
                      "top level");

  const fs::path base = fs::absolute(fs::path(path)).parent_path();
  PipelineConfig cfg;
  cfg.preset = j.value("preset", cfg.preset);
  if (!j.contains("seed") || !j["seed"].is_number_unsigned())
    throw ConfigError(cat("config ", path, ": 'seed' is required and must be a non-negative ",
                          "integer (stage seeds derive from it)"));
  cfg.seed = j["seed"].get<std::uint64_t>();
  cfg.out_dir = opt_path(j, "out_dir", base, "top level");
  if (cfg.out_dir.empty()) cfg.out_dir = (base / "runs").lexically_normal().string();
  if (j.contains("validation_fraction"))
    cfg.validation_fraction = j["validation_fraction"].get<double>();

  if (j.contains("tokenizer")) {
    const auto& t = j["tokenizer"];
    reject_unknown_keys(t, {"corpus", "vocab_size"}, "tokenizer");
    cfg.tokenizer_corpus = opt_path(t, "corpus", base, "tokenizer");
    cfg.tokenizer_vocab = t.value("vocab_size", Index(0));
  }

  if (!j.contains("phases") || !j["phases"].is_array())
    throw ConfigError(cat("config ", path, ": 'phases' must be an array"));
  for (const auto& pj : j["phases"]) {
    if (!pj.is_object()) throw ConfigError("config: each phase entry must be an object");
    const std::string where = cat("phase entry ", cfg.phases.size() + 1);
    reject_unknown_keys(pj,
                        {"phase", "corpus", "captions", "synthesis_manifest", "sampler", "epochs",
                         "peak_lr", "warmup_cap", "batch_size", "validate_every", "grad_clip"},
                        where);
    PhaseSpec spec;
    if (!pj.contains("phase") || !pj["phase"].is_number_integer())
      throw ConfigError(cat("config: ", where, " needs an integer 'phase'"));
    spec.phase = pj["phase"].get<int>();
    spec.corpus = opt_path(pj, "corpus", base, where);
    spec.captions = opt_path(pj, "captions", base, where);
    spec.synthesis_manifest = opt_path(pj, "synthesis_manifest", base, where);
    if (pj.contains("sampler")) spec.sampler = parse_sampler(pj["sampler"], where);
    spec.overrides = parse_overrides(pj, where);
    cfg.phases.push_back(std::move(spec));
  }

  cfg.eval_suite = opt_path(j, "eval_suite", base, "top level");
  if (cfg.tokenizer_corpus.empty() && !cfg.phases.empty()) cfg.tokenizer_corpus = cfg.phases[0].corpus;
  cfg.validate();
  return cfg;
}

}  // namespace selfsyn
