// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Four-phase orchestration with best-checkpoint handoff.
//
// A pipeline invocation owns one run directory (out_dir/run-NNNN) and only
// ever appends to it:
//   vocab.bpe            trained tokenizer
//   phase{k}/            checkpoints written during phase k
//   phase{k}.json        the phase's validation trace
//   synthetic.jsonl      captions generated between phases 2 and 3
//   eval-phase{k}.json   evaluation report on the phase's best checkpoint
//   lineage.json         digest chain, extended after each completed phase
//
// The lineage file records, per phase, the parameter digest entering the
// phase and the digest of its lowest-validation-loss checkpoint; the handoff
// protocol holds iff each phase's start digest equals the previous phase's
// best digest. `verify_lineage` re-checks the chain and re-derives every
// digest from the checkpoint files.

#include <string>
#include <vector>

#include "selfsyn/config.hpp"
#include "selfsyn/training.hpp"

namespace selfsyn {

struct PipelineResult {
  std::string run_dir;
  std::string lineage_path;
  std::vector<PhaseRecord> records;  // phases executed by this invocation
};

// Executes tokenizer training and phases 1..last configured phase. With a
// non-empty `resume_run_dir`, phases already recorded in that run's lineage
// are loaded from their best checkpoints instead of re-trained, so partial
// runs can be extended one subcommand at a time. A failure inside phase k
// aborts with a message naming the phase; artifacts written so far stay.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& resume_run_dir = "");

// Validates a lineage file: schema, start/best digest chain, frozen-encoder
// digest constant across phases, and every referenced checkpoint re-hashing
// to its recorded digest. Returns a human-readable audit transcript; any
// violation throws CorruptionError (missing files: IoError).
std::string verify_lineage(const std::string& lineage_path);

struct AblationResult {
  std::string report_path;
  std::string report_json;
};

// Trains two phase-3 arms from the run's phase-2 best checkpoint -- "+Synth"
// on the real+synthetic mixture, "-Synth" on real text only -- with identical
// seeds and schedule, evaluates both on the language-only tasks of the
// configured suite, and writes <run>/ablation/report.json.
AblationResult run_ablation(const PipelineConfig& cfg, const std::string& run_dir);

}  // namespace selfsyn
