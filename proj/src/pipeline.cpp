// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

#include "json.hpp"
#include "selfsyn/checkpoint.hpp"
#include "selfsyn/data.hpp"
#include "selfsyn/eval.hpp"
#include "selfsyn/sha256.hpp"
#include "selfsyn/synthesis.hpp"

namespace selfsyn {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// Stage-seed derivation: every stage draws from the one configured seed.
constexpr std::uint64_t kSeedModelInit = 1;
constexpr std::uint64_t kSeedPhaseBase = 10;  // phase k trains with child(seed, 10+k)
constexpr std::uint64_t kSeedSynthesis = 20;
constexpr std::uint64_t kSeedMixing = 21;

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot open ", path));
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(cat("cannot write ", path));
  f << body;
  if (!f) throw IoError(cat("short write to ", path));
}

std::string fresh_run_dir(const std::string& out_dir) {
  fs::create_directories(out_dir);
  for (Index i = 0;; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "run-%04lld", static_cast<long long>(i));
    const fs::path candidate = fs::path(out_dir) / name;
    if (!fs::exists(candidate)) {
      fs::create_directories(candidate);
      return candidate.string();
    }
  }
}

struct SplitSets {
  TrainSet train, val;
};

// Document-level holdout, then per-sentence segmentation. The paper-scale
// sentence rules keep 10..256 tokens; desk corpora are tiny, so the floor
// drops to 4 to avoid starving on merged toy sentences.
SplitSets build_text_sets(const TextCorpus& corpus, const BpeVocab& vocab, const ModelConfig& mcfg,
                          double fraction, bool paper_rules) {
  const auto [train_c, val_c] = split_validation(corpus, fraction);
  const Index max_tokens = std::min<Index>(256, mcfg.max_seq_len - 2);
  const Index min_tokens = paper_rules ? 10 : 4;
  SplitSets out;
  for (const auto& d : train_c.docs)
    for (auto& s : segment_document(d.text, vocab, max_tokens, min_tokens))
      out.train.text.push_back(std::move(s));
  for (const auto& d : val_c.docs)
    for (auto& s : segment_document(d.text, vocab, max_tokens, min_tokens))
      out.val.text.push_back(std::move(s));
  return out;
}

SplitSets build_caption_sets(const std::string& manifest, const BpeVocab& vocab,
                             const ModelParams<float>& params, double fraction) {
  SkipReport skips;
  const auto pairs = load_caption_corpus(manifest, params.config.image_side, &skips);
  const Index n = static_cast<Index>(pairs.size());
  if (n < 2)
    throw ConfigError(cat("caption manifest ", manifest, " yields ", n,
                          " usable pairs (", skips.skipped, " skipped); need at least 2"));
  const Index cap = params.config.max_seq_len - params.config.n_image_slots() - 2;
  if (cap < 1)
    throw ConfigError("model config leaves no room for caption text after the image slots");

  // The frozen encoder output is cached once per distinct image path.
  std::vector<Tensor<float>> grouped;
  std::unordered_map<std::string, Index> image_index;
  std::vector<std::pair<Index, TokenSequence>> items;
  for (const auto& p : pairs) {
    auto [it, fresh] = image_index.try_emplace(p.image_path, static_cast<Index>(grouped.size()));
    if (fresh) grouped.push_back(image_to_grouped(params, p.image));
    auto tokens = vocab.encode(p.caption);
    if (static_cast<Index>(tokens.size()) > cap) tokens.resize(static_cast<size_t>(cap));
    items.emplace_back(it->second, std::move(tokens));
  }

  const Index n_val = std::clamp<Index>(
      static_cast<Index>(std::ceil(fraction * static_cast<double>(n))), 1, n - 1);
  SplitSets out;
  out.train.pairs.assign(items.begin(), items.end() - n_val);
  out.val.pairs.assign(items.end() - n_val, items.end());
  out.train.grouped_images = grouped;
  out.val.grouped_images = std::move(grouped);
  return out;
}

// Manifest image paths, canonicalized, without decoding any pixels.
std::set<std::string> caption_manifest_paths(const std::string& manifest) {
  const fs::path base = fs::path(manifest).parent_path();
  std::set<std::string> out;
  std::ifstream f(manifest, std::ios::binary);
  if (!f) throw IoError(cat("cannot open manifest: ", manifest));
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    const std::string raw = tab == std::string::npos ? line : line.substr(0, tab);
    if (raw.empty()) continue;
    out.insert(fs::weakly_canonical(base / raw).string());
  }
  return out;
}

void check_synthesis_disjoint(const std::string& caption_manifest,
                              const std::string& synthesis_manifest) {
  const auto train_imgs = caption_manifest_paths(caption_manifest);
  for (const auto& img : caption_manifest_paths(synthesis_manifest))
    if (train_imgs.count(img))
      throw ConfigError(cat("synthesis manifest reuses a caption-training image: ", img,
                            " (the captioned set and the to-be-captioned set must be disjoint)"));
}

ordered_json lineage_header(const PipelineConfig& cfg, const std::string& vocab_path,
                            Index vocab_size, const std::string& initial_digest) {
  ordered_json j;
  j["schema"] = "lineage-v1";
  j["preset"] = cfg.preset;
  j["seed"] = cfg.seed;
  j["tokenizer"] = {{"path", "vocab.bpe"}, {"digest", sha256_file_hex(vocab_path)}};
  j["vocab_size"] = vocab_size;
  j["initial_digest"] = initial_digest;
  j["phases"] = ordered_json::array();
  return j;
}

void write_lineage(const std::string& run_dir, const ordered_json& lineage) {
  write_text_file((fs::path(run_dir) / "lineage.json").string(), lineage.dump(2) + "\n");
}

double task_metric(const nlohmann::json& result) {
  if (result.contains("accuracy")) return result["accuracy"].get<double>();
  if (result.contains("train_accuracy")) return result["train_accuracy"].get<double>();
  throw CorruptionError(cat("eval result for task '", result.value("task", "?"),
                            "' carries no accuracy metric"));
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& resume_run_dir) {
  cfg.validate();
  if (cfg.preset == "paper" && !cfg.allow_paper_compute)
    throw ConfigError(
        "the paper preset needs ~100M-word corpora and days of compute; pass "
        "--i-have-the-compute to run it anyway (the desk preset is the default)");

  PipelineResult result;
  if (resume_run_dir.empty()) {
    result.run_dir = fresh_run_dir(cfg.out_dir);
  } else {
    if (!fs::is_directory(resume_run_dir))
      throw IoError(cat("resume directory does not exist: ", resume_run_dir));
    result.run_dir = resume_run_dir;
  }
  const fs::path run(result.run_dir);
  result.lineage_path = (run / "lineage.json").string();

  // Fail fast on a phase-3 image-set violation before any compute happens.
  if (cfg.last_phase() >= 3)
    check_synthesis_disjoint(cfg.phase(2).captions, cfg.phase(3).synthesis_manifest);

  // --- tokenizer -------------------------------------------------------------
  const std::string vocab_path = (run / "vocab.bpe").string();
  BpeVocab vocab;
  if (fs::exists(vocab_path)) {
    vocab = BpeVocab::load(vocab_path);
  } else {
    const auto corpus = load_text_corpus(cfg.tokenizer_corpus);
    std::vector<std::string> texts;
    texts.reserve(corpus.docs.size());
    for (const auto& d : corpus.docs) texts.push_back(d.text);
    vocab = BpeVocab::train(texts, cfg.vocab_target());
    vocab.save(vocab_path);
  }

  // --- model -----------------------------------------------------------------
  const ModelConfig mcfg = cfg.model_config(vocab.vocab_size());
  ModelParams<float> params = init_params<float>(mcfg, child_seed(cfg.seed, kSeedModelInit));
  const std::string vision_digest = params.section_digest("vision.");

  ordered_json lineage = lineage_header(cfg, vocab_path, vocab.vocab_size(), params.digest());
  ordered_json prior_phases = ordered_json::array();
  if (fs::exists(result.lineage_path)) {
    // Parse order-preserving so replayed entries re-serialize byte-identically.
    ordered_json existing;
    try {
      existing = ordered_json::parse(read_text_file(result.lineage_path));
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError(cat("malformed lineage in ", result.lineage_path, ": ", e.what()));
    }
    for (const char* key : {"preset", "initial_digest"})
      if (existing.value(key, "") != lineage[key].get<std::string>())
        throw CorruptionError(cat("resume mismatch: run was created with a different ", key));
    if (existing.value("seed", std::uint64_t(0)) != cfg.seed)
      throw CorruptionError("resume mismatch: run was created with a different seed");
    prior_phases = existing.value("phases", ordered_json::array());
  }

  for (int k = 1; k <= cfg.last_phase(); ++k) {
    // Phases already in the lineage are replayed from their best checkpoint.
    if (static_cast<int>(prior_phases.size()) >= k) {
      const auto& entry = prior_phases[static_cast<size_t>(k - 1)];
      if (entry.value("phase", 0) != k)
        throw CorruptionError(cat("lineage phase order broken at entry ", k));
      if (entry.value("start_digest", "") != params.digest())
        throw CorruptionError(cat("resume mismatch: phase ", k,
                                  " started from a different parameter state"));
      const auto ckpt =
          load_checkpoint((run / entry.value("best_checkpoint", "")).string());
      params = std::move(ckpt.params);
      if (params.digest() != entry.value("best_digest", ""))
        throw CorruptionError(cat("resume mismatch: phase ", k,
                                  " best checkpoint digest changed on disk"));
      lineage["phases"].push_back(entry);
      continue;
    }

    try {
      const PhaseSpec& spec = cfg.phase(k);
      const std::string start_digest = params.digest();

      // Phase 3 synthesizes its extra corpus, from the phase-2 handoff
      // snapshot, before any phase-3 training step.
      const std::string synth_path = (run / "synthetic.jsonl").string();
      if (k == 3 && !fs::exists(synth_path)) {
        SkipReport skips;
        const TextCorpus synth = synthesize_corpus(params, vocab, spec.synthesis_manifest,
                                                   spec.sampler, child_seed(cfg.seed, kSeedSynthesis),
                                                   &skips);
        if (synth.docs.empty())
          throw Error(cat("synthesis produced no captions (", skips.skipped,
                          " images skipped); check the manifest"));
        save_text_corpus(synth, synth_path);
      }

      SplitSets sets;
      if (k == 1 || k == 3) {
        TextCorpus corpus = load_text_corpus(spec.corpus);
        if (k == 3)
          corpus = mix_corpora(corpus, load_text_corpus(synth_path),
                               child_seed(cfg.seed, kSeedMixing));
        sets = build_text_sets(corpus, vocab, mcfg, cfg.validation_fraction,
                               cfg.preset == "paper");
        if (sets.train.text.empty() || sets.val.text.empty())
          throw ConfigError(cat("corpus ", spec.corpus,
                                " yields no usable sentences after segmentation"));
      } else {
        sets = build_caption_sets(spec.captions, vocab, params, cfg.validation_fraction);
      }

      PhaseConfig pcfg = PhaseConfig::from_preset(k, child_seed(cfg.seed, kSeedPhaseBase + k),
                                                  (run / cat("phase", k)).string());
      spec.overrides.apply(pcfg);
      const PhaseRecord record = run_phase(params, pcfg, sets.train, sets.val);
      write_text_file((run / cat("phase", k, ".json")).string(), record.to_json() + "\n");

      // Handoff: the next phase starts from this phase's best snapshot.
      const ValidationPoint& best = record.best();
      params = load_checkpoint(best.checkpoint_path).params;
      if (params.section_digest("vision.") != vision_digest)
        throw ContractError(cat("frozen vision encoder drifted during phase ", k));

      ordered_json entry;
      entry["phase"] = k;
      entry["start_digest"] = start_digest;
      entry["best_digest"] = params.digest();        // parameter digest (chain domain)
      entry["best_checkpoint_digest"] = best.digest;  // serialized-file digest
      entry["best_checkpoint"] =
          fs::relative(best.checkpoint_path, run).generic_string();
      entry["best_val_loss"] = best.val_loss;
      entry["best_step"] = best.step;
      entry["total_steps"] = record.total_steps;
      entry["final_train_loss"] = record.final_train_loss;
      entry["vision_digest"] = vision_digest;
      lineage["phases"].push_back(std::move(entry));
      write_lineage(result.run_dir, lineage);

      if (!cfg.eval_suite.empty())
        write_text_file((run / cat("eval-phase", k, ".json")).string(),
                        run_suite(params, vocab, cfg.eval_suite) + "\n");

      result.records.push_back(record);
    } catch (const Error& e) {
      throw Error(cat("phase ", k, " failed: ", e.what(),
                      " (partial artifacts preserved in ", result.run_dir, ")"));
    }
  }

  write_lineage(result.run_dir, lineage);
  return result;
}

std::string verify_lineage(const std::string& lineage_path) {
  nlohmann::json lineage;
  try {
    lineage = nlohmann::json::parse(read_text_file(lineage_path));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(cat("malformed lineage ", lineage_path, ": ", e.what()));
  }
  if (lineage.value("schema", "") != "lineage-v1")
    throw CorruptionError(cat(lineage_path, ": not a lineage-v1 file"));
  const auto phases = lineage.value("phases", nlohmann::json::array());
  if (phases.empty()) throw CorruptionError(cat(lineage_path, ": no phases recorded"));

  const fs::path base = fs::absolute(fs::path(lineage_path)).parent_path();
  std::string transcript;
  std::string expected_start = lineage.value("initial_digest", "");
  std::string vision_digest;
  for (size_t i = 0; i < phases.size(); ++i) {
    const auto& e = phases[i];
    const int k = e.value("phase", 0);
    if (k != static_cast<int>(i) + 1)
      throw CorruptionError(cat(lineage_path, ": phase entries out of order at index ", i));
    if (e.value("start_digest", "") != expected_start)
      throw CorruptionError(cat("handoff broken: phase ", k, " start digest ",
                                e.value("start_digest", "").substr(0, 12), " != expected ",
                                expected_start.substr(0, 12)));
    const std::string rel = e.value("best_checkpoint", "");
    if (checkpoint_digest((base / rel).string()) != e.value("best_checkpoint_digest", ""))
      throw CorruptionError(cat("phase ", k, " checkpoint file ", rel,
                                " does not hash to its recorded file digest"));
    const auto ckpt = load_checkpoint((base / rel).string());
    if (ckpt.params.digest() != e.value("best_digest", ""))
      throw CorruptionError(cat("phase ", k, " best checkpoint ", rel,
                                " does not hash to its recorded parameter digest"));
    const std::string v = ckpt.params.section_digest("vision.");
    if (e.value("vision_digest", "") != v)
      throw CorruptionError(cat("phase ", k, " recorded vision digest does not match ", rel));
    if (vision_digest.empty()) vision_digest = v;
    if (v != vision_digest)
      throw CorruptionError(cat("frozen encoder changed between phases: phase ", k));
    transcript += cat("phase ", k, ": start ", expected_start.substr(0, 12), " ok, best ",
                      e.value("best_digest", "").substr(0, 12), " verified from ", rel, "\n");
    expected_start = e.value("best_digest", "");
  }
  transcript += cat("lineage OK: ", phases.size(),
                    " phase(s), handoff chain intact, frozen encoder stable\n");
  return transcript;
}

AblationResult run_ablation(const PipelineConfig& cfg, const std::string& run_dir) {
  cfg.validate();
  const fs::path run(run_dir);
  const std::string lineage_path = (run / "lineage.json").string();
  if (!fs::exists(lineage_path))
    throw ConfigError(cat("no lineage.json in ", run_dir,
                          "; run the pipeline through phase 2 first"));
  nlohmann::json lineage = nlohmann::json::parse(read_text_file(lineage_path));
  const auto phases = lineage.value("phases", nlohmann::json::array());
  if (phases.size() < 2)
    throw ConfigError(cat(run_dir, " has not completed phase 2; the ablation starts from its ",
                          "best checkpoint"));
  const std::string synth_path = (run / "synthetic.jsonl").string();
  if (!fs::exists(synth_path))
    throw ConfigError(cat("no synthetic corpus at ", synth_path,
                          "; run the pipeline through phase 3 (or its synthesis step) first"));

  const fs::path ablation_dir = run / "ablation";
  if (fs::exists(ablation_dir))
    throw IoError(cat(ablation_dir.string(),
                      " already exists; runs are append-only, refusing to overwrite"));
  fs::create_directories(ablation_dir);

  const std::string base_rel = phases[1].value("best_checkpoint", "");
  const auto base_ckpt = load_checkpoint((run / base_rel).string());
  const ModelParams<float>& base = base_ckpt.params;
  if (base.digest() != phases[1].value("best_digest", ""))
    throw CorruptionError(cat("phase 2 checkpoint ", base_rel, " digest mismatch"));

  const BpeVocab vocab = BpeVocab::load((run / "vocab.bpe").string());
  const ModelConfig mcfg = cfg.model_config(vocab.vocab_size());
  const PhaseSpec& spec3 = cfg.phase(3);
  const TextCorpus real = load_text_corpus(spec3.corpus);
  const TextCorpus synth = load_text_corpus(synth_path);
  const TextCorpus mixed = mix_corpora(real, synth, child_seed(cfg.seed, kSeedMixing));

  struct Arm {
    std::string name;
    std::string dir_name;
    const TextCorpus* corpus;
    Index train_words;
  };
  std::vector<Arm> arms = {{"+Synth", "arm-plus-synth", &mixed, corpus_word_count(mixed)},
                           {"-Synth", "arm-minus-synth", &real, corpus_word_count(real)}};

  // Language-only slice of the configured suite, paths rebased to absolute.
  std::string suite_path;
  if (!cfg.eval_suite.empty()) {
    nlohmann::json suite = nlohmann::json::parse(read_text_file(cfg.eval_suite));
    const fs::path suite_base = fs::absolute(fs::path(cfg.eval_suite)).parent_path();
    ordered_json filtered;
    filtered["tasks"] = ordered_json::array();
    for (const auto& task : suite.value("tasks", nlohmann::json::array())) {
      const std::string type = task.value("type", "");
      if (type != "minimal_pairs" && type != "lora_classification") continue;
      ordered_json t = task;
      t["path"] = (suite_base / task.value("path", "")).string();
      filtered["tasks"].push_back(std::move(t));
    }
    suite_path = (ablation_dir / "suite-language.json").string();
    write_text_file(suite_path, filtered.dump(2) + "\n");
  }

  ordered_json report;
  report["schema"] = "ablation-v1";
  report["base_checkpoint"] = {{"path", base_rel}, {"digest", base.digest()}};
  report["phase3_seed"] = child_seed(cfg.seed, kSeedPhaseBase + 3);
  report["columns"] = {"+Synth", "-Synth"};
  report["word_counts"] = {{"real", corpus_word_count(real)},
                           {"synthetic", corpus_word_count(synth)},
                           {"+Synth", arms[0].train_words},
                           {"-Synth", arms[1].train_words}};
  report["arms"] = ordered_json::object();

  std::vector<nlohmann::json> arm_evals;
  for (const auto& arm : arms) {
    const auto sets = build_text_sets(*arm.corpus, vocab, mcfg, cfg.validation_fraction,
                                      cfg.preset == "paper");
    if (sets.train.text.empty() || sets.val.text.empty())
      throw ConfigError(cat("ablation arm ", arm.name, " has no usable sentences"));
    // Both arms share one seed and schedule; only the corpus differs.
    PhaseConfig pcfg = PhaseConfig::from_preset(3, child_seed(cfg.seed, kSeedPhaseBase + 3),
                                                (ablation_dir / arm.dir_name).string());
    spec3.overrides.apply(pcfg);
    ModelParams<float> params = base.clone();
    const std::string start_digest = params.digest();
    const PhaseRecord record = run_phase(params, pcfg, sets.train, sets.val);
    const ValidationPoint& best = record.best();
    params = load_checkpoint(best.checkpoint_path).params;

    ordered_json aj;
    aj["start_digest"] = start_digest;
    aj["seed"] = pcfg.seed;
    aj["train_words"] = arm.train_words;
    aj["total_steps"] = record.total_steps;
    aj["final_train_loss"] = record.final_train_loss;
    aj["best_val_loss"] = best.val_loss;
    aj["best_digest"] = params.digest();
    report["arms"][arm.name] = std::move(aj);

    if (!suite_path.empty())
      arm_evals.push_back(nlohmann::json::parse(run_suite(params, vocab, suite_path)));
  }

  report["tasks"] = ordered_json::array();
  if (!arm_evals.empty()) {
    const auto& plus_results = arm_evals[0]["results"];
    const auto& minus_results = arm_evals[1]["results"];
    for (size_t i = 0; i < plus_results.size(); ++i) {
      ordered_json row;
      row["task"] = plus_results[i].value("task", "?");
      row["type"] = plus_results[i].value("type", "?");
      row["+Synth"] = task_metric(plus_results[i]);
      row["-Synth"] = task_metric(minus_results[i]);
      report["tasks"].push_back(std::move(row));
    }
  }

  AblationResult out;
  out.report_json = report.dump(2) + "\n";
  out.report_path = (ablation_dir / "report.json").string();
  write_text_file(out.report_path, out.report_json);
  return out;
}

}  // namespace selfsyn
