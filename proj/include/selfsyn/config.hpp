// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Declarative pipeline configuration, loaded from a JSON file:
//
//   {
//     "preset": "desk",                // or "paper"
//     "seed": 1,                       // required; all stage seeds derive from it
//     "out_dir": "runs",
//     "validation_fraction": 0.1,
//     "tokenizer": {"corpus": "text.jsonl", "vocab_size": 512},
//     "phases": [
//       {"phase": 1, "corpus": "text.jsonl", "epochs": 2},
//       {"phase": 2, "captions": "captions.tsv"},
//       {"phase": 3, "corpus": "text.jsonl", "synthesis_manifest": "images.txt",
//        "sampler": {"temperature": 0.7, "top_k": 50, "top_p": 0.95}},
//       {"phase": 4, "captions": "instructions.tsv"}
//     ],
//     "eval_suite": "eval/suite.json"  // optional
//   }
//
// Phases must appear in order starting at 1; trailing phases may be omitted
// for partial runs. Relative paths resolve against the config file's
// directory. Unknown keys are rejected.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "selfsyn/model.hpp"
#include "selfsyn/synthesis.hpp"
#include "selfsyn/training.hpp"

namespace selfsyn {

// Per-phase schedule overrides; unset fields fall back to the phase preset.
struct StageOverrides {
  std::optional<Index> epochs;
  std::optional<double> peak_lr;
  std::optional<Index> warmup_cap;
  std::optional<Index> batch_size;
  std::optional<Index> validate_every;
  std::optional<double> grad_clip;

  void apply(PhaseConfig& cfg) const;
};

struct PhaseSpec {
  int phase = 0;
  std::string corpus;              // text phases (1, 3)
  std::string captions;            // multimodal phases (2, 4)
  std::string synthesis_manifest;  // phase 3: images to caption, one path/line
  SamplerConfig sampler;           // phase 3 synthesis settings
  StageOverrides overrides;
};

struct PipelineConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  double validation_fraction = 0.1;
  Index tokenizer_vocab = 0;     // 0 -> preset default (desk 512, paper 16000)
  std::string tokenizer_corpus;  // empty -> phase-1 corpus
  std::vector<PhaseSpec> phases;
  std::string eval_suite;  // optional eval manifest
  bool allow_paper_compute = false;  // set by the CLI gate flag, not the file

  int last_phase() const { return phases.empty() ? 0 : phases.back().phase; }
  const PhaseSpec& phase(int k) const;
  Index vocab_target() const;
  // Architecture for the chosen preset with the trained vocabulary plugged in.
  ModelConfig model_config(Index vocab_size) const;
  void validate() const;
};

// Parse + validate; relative paths inside become absolute against the file's
// directory. Malformed JSON -> CorruptionError; contract violations
// (missing seed, phase order, unknown keys) -> ConfigError.
PipelineConfig load_pipeline_config(const std::string& path);

}  // namespace selfsyn
