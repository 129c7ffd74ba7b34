// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: dataset generation, tokenizer training, the
// four-phase pipeline (whole or one phase at a time), caption synthesis,
// evaluation, the +Synth/-Synth ablation, and lineage verification.
// Exit code 0 only on full success.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "selfsyn/checkpoint.hpp"
#include "selfsyn/config.hpp"
#include "selfsyn/data.hpp"
#include "selfsyn/eval.hpp"
#include "selfsyn/pipeline.hpp"
#include "selfsyn/sha256.hpp"
#include "selfsyn/synthesis.hpp"
#include "selfsyn/toydata.hpp"

namespace fs = std::filesystem;
using namespace selfsyn;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  bool deterministic = true;
  bool paper_compute = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("config", flags.config_path, "pipeline config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "override the config seed");
  cmd->add_option("--preset", flags.preset, "override the model preset (desk|paper)");
  cmd->add_flag("--deterministic,!--no-deterministic", flags.deterministic,
                "require the single-threaded deterministic mode (default: on)");
  cmd->add_flag("--i-have-the-compute", flags.paper_compute,
                "acknowledge the paper preset's full-scale compute cost");
}

PipelineConfig load_config(const CommonFlags& flags) {
  // Every code path is already deterministic; the flag exists so scripts can
  // state the requirement and fail loudly if a nondeterministic mode ever
  // appears.
  if (!flags.deterministic)
    throw ConfigError("only deterministic execution is implemented; drop --no-deterministic");
  PipelineConfig cfg = load_pipeline_config(flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.preset) cfg.preset = *flags.preset;
  cfg.allow_paper_compute = flags.paper_compute;
  cfg.validate();
  return cfg;
}

// The per-phase subcommands extend a run directory one phase at a time;
// completed phases replay from their checkpoints via the lineage file.
int run_single_phase(const CommonFlags& flags, const std::string& run_dir, int phase) {
  PipelineConfig cfg = load_config(flags);
  if (cfg.last_phase() < phase)
    throw ConfigError(cat("config stops at phase ", cfg.last_phase(), "; phase ", phase,
                          " is not configured"));
  cfg.phases.resize(static_cast<size_t>(phase));
  std::string dir = run_dir;
  if (dir.empty()) {
    if (phase != 1)
      throw ConfigError(cat("phase ", phase, " continues an existing run; pass --run <dir>"));
  }
  const PipelineResult result = run_pipeline(cfg, dir);
  std::cout << "run: " << result.run_dir << "\n";
  std::cout << "lineage: " << result.lineage_path << "\n";
  return 0;
}

std::string require_run_dir(const std::string& run_dir, const char* what) {
  if (run_dir.empty()) throw ConfigError(cat(what, " needs --run <run directory>"));
  return run_dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"four-phase self-synthesis trainer"};
  app.require_subcommand(1);

  // --- make-toy-data --------------------------------------------------------
  std::string toy_dir;
  ToyDataOptions toy;
  auto* toy_cmd = app.add_subcommand("make-toy-data", "generate a bundled toy dataset");
  toy_cmd->add_option("dir", toy_dir, "output directory")->required();
  toy_cmd->add_option("--seed", toy.seed, "generation seed");
  toy_cmd->add_option("--documents", toy.documents, "text corpus size");
  toy_cmd->add_option("--caption-images", toy.caption_images, "captioned training images");
  toy_cmd->add_option("--synthesis-images", toy.synthesis_images, "images to caption in phase 3");
  toy_cmd->add_option("--eval-items", toy.eval_items, "rows per evaluation dataset");
  toy_cmd->add_option("--image-side", toy.image_side, "rendered image resolution");

  // --- tokenize-train -------------------------------------------------------
  CommonFlags tok_flags;
  std::string tok_out;
  auto* tok_cmd = app.add_subcommand("tokenize-train", "train the tokenizer from the config");
  add_common(tok_cmd, tok_flags);
  tok_cmd->add_option("--out", tok_out, "vocabulary output path (default: <out_dir>/vocab.bpe)");

  // --- pipeline and per-phase subcommands -----------------------------------
  CommonFlags pipe_flags;
  std::string pipe_run;
  auto* pipe_cmd = app.add_subcommand("pipeline", "run all configured phases");
  add_common(pipe_cmd, pipe_flags);
  pipe_cmd->add_option("--run", pipe_run, "resume/extend this run directory");

  struct PhaseCmd {
    CLI::App* cmd;
    CommonFlags flags;
    std::string run;
  };
  PhaseCmd phase_cmds[4];
  for (int k = 1; k <= 4; ++k) {
    auto& pc = phase_cmds[k - 1];
    pc.cmd = app.add_subcommand(cat("phase", k), cat("run phase ", k, " (replaying earlier ",
                                                     "phases from their checkpoints)"));
    add_common(pc.cmd, pc.flags);
    pc.cmd->add_option("--run", pc.run, "run directory (created by phase1 if omitted)");
  }

  // --- synthesize ------------------------------------------------------------
  CommonFlags syn_flags;
  std::string syn_run, syn_out;
  auto* syn_cmd = app.add_subcommand("synthesize",
                                     "caption the phase-3 image manifest from a run's phase-2 "
                                     "best checkpoint");
  add_common(syn_cmd, syn_flags);
  syn_cmd->add_option("--run", syn_run, "run directory holding phase-2 artifacts")->required();
  syn_cmd->add_option("--out", syn_out, "corpus output (default: <run>/synthetic.jsonl)");

  // --- eval -------------------------------------------------------------------
  CommonFlags eval_flags;
  std::string eval_run, eval_out;
  int eval_phase = 0;
  auto* eval_cmd = app.add_subcommand("eval", "run the evaluation suite on a phase checkpoint");
  add_common(eval_cmd, eval_flags);
  eval_cmd->add_option("--run", eval_run, "run directory")->required();
  eval_cmd->add_option("--phase", eval_phase, "phase whose best checkpoint to evaluate "
                                              "(default: last completed)");
  eval_cmd->add_option("--out", eval_out, "report path (default: stdout)");

  // --- ablate ----------------------------------------------------------------
  CommonFlags abl_flags;
  std::string abl_run;
  auto* abl_cmd = app.add_subcommand("ablate", "train +Synth/-Synth phase-3 arms and compare");
  add_common(abl_cmd, abl_flags);
  abl_cmd->add_option("--run", abl_run, "run directory with phase-2 checkpoint and synthetic "
                                        "corpus")->required();

  // --- verify-lineage ---------------------------------------------------------
  std::string lineage_path;
  auto* ver_cmd = app.add_subcommand("verify-lineage", "audit a run's checkpoint digest chain");
  ver_cmd->add_option("lineage", lineage_path, "lineage.json path")->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (toy_cmd->parsed()) {
      const std::string config = make_toy_data(toy_dir, toy);
      std::cout << "config: " << config << "\n";
      return 0;
    }
    if (tok_cmd->parsed()) {
      const PipelineConfig cfg = load_config(tok_flags);
      const auto corpus = load_text_corpus(cfg.tokenizer_corpus);
      std::vector<std::string> texts;
      for (const auto& d : corpus.docs) texts.push_back(d.text);
      const BpeVocab vocab = BpeVocab::train(texts, cfg.vocab_target());
      std::string out = tok_out;
      if (out.empty()) {
        fs::create_directories(cfg.out_dir);
        out = (fs::path(cfg.out_dir) / "vocab.bpe").string();
      }
      vocab.save(out);
      std::cout << "vocab: " << out << "\n";
      std::cout << "entries: " << vocab.vocab_size() << "\n";
      std::cout << "digest: " << sha256_file_hex(out) << "\n";
      return 0;
    }
    if (pipe_cmd->parsed()) {
      const PipelineResult result = run_pipeline(load_config(pipe_flags), pipe_run);
      std::cout << "run: " << result.run_dir << "\n";
      std::cout << "lineage: " << result.lineage_path << "\n";
      for (const auto& r : result.records)
        std::cout << "phase " << r.phase << ": best val loss " << r.best().val_loss << " at step "
                  << r.best().step << "\n";
      return 0;
    }
    for (int k = 1; k <= 4; ++k)
      if (phase_cmds[k - 1].cmd->parsed())
        return run_single_phase(phase_cmds[k - 1].flags, phase_cmds[k - 1].run, k);
    if (syn_cmd->parsed()) {
      const PipelineConfig cfg = load_config(syn_flags);
      const fs::path run(require_run_dir(syn_run, "synthesize"));
      const nlohmann::json lineage =
          nlohmann::json::parse(std::ifstream((run / "lineage.json").string()));
      const auto phases = lineage.value("phases", nlohmann::json::array());
      if (phases.size() < 2)
        throw ConfigError("synthesize needs a run that completed phase 2");
      const auto ckpt =
          load_checkpoint((run / phases[1].value("best_checkpoint", "")).string());
      const BpeVocab vocab = BpeVocab::load((run / "vocab.bpe").string());
      const PhaseSpec& spec3 = cfg.phase(3);
      SkipReport skips;
      const TextCorpus corpus =
          synthesize_corpus(ckpt.params, vocab, spec3.synthesis_manifest, spec3.sampler,
                            child_seed(cfg.seed, 20), &skips);
      const std::string out = syn_out.empty() ? (run / "synthetic.jsonl").string() : syn_out;
      save_text_corpus(corpus, out);
      std::cout << "synthetic corpus: " << out << "\n";
      std::cout << "captions: " << corpus.size() << " (skipped " << skips.skipped << ")\n";
      return 0;
    }
    if (eval_cmd->parsed()) {
      const PipelineConfig cfg = load_config(eval_flags);
      if (cfg.eval_suite.empty()) throw ConfigError("config has no 'eval_suite'");
      const fs::path run(eval_run);
      const nlohmann::json lineage =
          nlohmann::json::parse(std::ifstream((run / "lineage.json").string()));
      const auto phases = lineage.value("phases", nlohmann::json::array());
      if (phases.empty()) throw ConfigError("run has no completed phases to evaluate");
      const int want = eval_phase == 0 ? static_cast<int>(phases.size()) : eval_phase;
      if (want < 1 || want > static_cast<int>(phases.size()))
        throw ConfigError(cat("phase ", want, " has not completed in this run"));
      const auto ckpt = load_checkpoint(
          (run / phases[static_cast<size_t>(want - 1)].value("best_checkpoint", "")).string());
      const BpeVocab vocab = BpeVocab::load((run / "vocab.bpe").string());
      const std::string report = run_suite(ckpt.params, vocab, cfg.eval_suite);
      if (eval_out.empty()) {
        std::cout << report << "\n";
      } else {
        std::ofstream f(eval_out, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError(cat("cannot write ", eval_out));
        f << report << "\n";
        std::cout << "report: " << eval_out << "\n";
      }
      return 0;
    }
    if (abl_cmd->parsed()) {
      const AblationResult result =
          run_ablation(load_config(abl_flags), require_run_dir(abl_run, "ablate"));
      std::cout << "report: " << result.report_path << "\n";
      return 0;
    }
    if (ver_cmd->parsed()) {
      std::cout << verify_lineage(lineage_path);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand handled\n";
  return 1;
}
