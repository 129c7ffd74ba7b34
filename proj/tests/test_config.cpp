// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "selfsyn/config.hpp"
#include "selfsyn/pipeline.hpp"

using namespace selfsyn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  REQUIRE(f.good());
  f << body;
}

const char* kFullConfig = R"({
  "preset": "desk",
  "seed": 42,
  "out_dir": "runs",
  "validation_fraction": 0.2,
  "tokenizer": {"corpus": "tok.jsonl", "vocab_size": 300},
  "phases": [
    {"phase": 1, "corpus": "text.jsonl", "epochs": 3, "peak_lr": 0.01, "batch_size": 4},
    {"phase": 2, "captions": "caps.tsv", "validate_every": 2},
    {"phase": 3, "corpus": "text.jsonl", "synthesis_manifest": "imgs.txt",
     "sampler": {"temperature": 1.5, "top_k": 10, "hard_cap": 40}},
    {"phase": 4, "captions": "instr.tsv"}
  ],
  "eval_suite": "eval/suite.json"
})";

}  // namespace

TEST_CASE("config parses fields, resolves paths, and applies overrides") {
  TempDir tmp("selfsyn-config-parse");
  write_file(tmp.file("pipeline.json"), kFullConfig);
  const auto cfg = load_pipeline_config(tmp.file("pipeline.json"));

  CHECK(cfg.preset == "desk");
  CHECK(cfg.seed == 42);
  CHECK(cfg.validation_fraction == 0.2);
  CHECK(cfg.last_phase() == 4);
  CHECK(cfg.vocab_target() == 300);

  // Relative paths become absolute against the config's directory.
  CHECK(cfg.out_dir == (tmp.path / "runs").lexically_normal().string());
  CHECK(cfg.tokenizer_corpus == (tmp.path / "tok.jsonl").lexically_normal().string());
  CHECK(cfg.phase(1).corpus == (tmp.path / "text.jsonl").lexically_normal().string());
  CHECK(cfg.phase(2).captions == (tmp.path / "caps.tsv").lexically_normal().string());
  CHECK(cfg.phase(3).synthesis_manifest == (tmp.path / "imgs.txt").lexically_normal().string());
  CHECK(cfg.eval_suite == (tmp.path / "eval/suite.json").lexically_normal().string());

  // Sampler settings land on phase 3; unset ones keep their defaults.
  CHECK(cfg.phase(3).sampler.temperature == 1.5);
  CHECK(cfg.phase(3).sampler.top_k == 10);
  CHECK(cfg.phase(3).sampler.hard_cap == 40);
  CHECK(cfg.phase(3).sampler.top_p == 0.95);

  // Overrides apply on top of phase presets.
  PhaseConfig pc = PhaseConfig::from_preset(1, 7, "x");
  cfg.phase(1).overrides.apply(pc);
  CHECK(pc.epochs == 3);
  CHECK(pc.peak_lr == 0.01);
  CHECK(pc.batch_size == 4);
  PhaseConfig pc2 = PhaseConfig::from_preset(2, 7, "x");
  const Index preset_epochs = pc2.epochs;
  cfg.phase(2).overrides.apply(pc2);
  CHECK(pc2.validate_every == 2);
  CHECK(pc2.epochs == preset_epochs);  // untouched fields keep preset values

  // Model config derives from the preset plus the trained vocabulary size.
  const ModelConfig mc = cfg.model_config(300);
  CHECK(mc.vocab_size == 300);
  CHECK(mc.n_layers == 4);
}

TEST_CASE("config defaults: tokenizer corpus falls back to phase 1") {
  TempDir tmp("selfsyn-config-defaults");
  write_file(tmp.file("p.json"), R"({
    "seed": 1,
    "phases": [{"phase": 1, "corpus": "text.jsonl"}]
  })");
  const auto cfg = load_pipeline_config(tmp.file("p.json"));
  CHECK(cfg.tokenizer_corpus == cfg.phase(1).corpus);
  CHECK(cfg.preset == "desk");
  CHECK(cfg.vocab_target() == 512);
  CHECK(cfg.out_dir == (tmp.path / "runs").lexically_normal().string());
  CHECK(cfg.last_phase() == 1);
}

TEST_CASE("config rejects contract violations") {
  TempDir tmp("selfsyn-config-errors");
  auto expect = [&](const std::string& body, const std::string& fragment) {
    write_file(tmp.file("bad.json"), body);
    try {
      load_pipeline_config(tmp.file("bad.json"));
      FAIL_CHECK("expected ConfigError for: " << fragment);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };

  expect(R"({"phases": [{"phase": 1, "corpus": "t"}]})", "seed");
  expect(R"({"seed": 1, "phases": []})", "at least phase 1");
  expect(R"({"seed": 1, "phases": [{"phase": 2, "captions": "c"}]})", "order");
  expect(R"({"seed": 1, "phases": [{"phase": 1, "corpus": "t"},
            {"phase": 2, "captions": "c"}, {"phase": 4, "captions": "c"}]})",
         "order");
  expect(R"({"seed": 1, "phases": [{"phase": 1}]})", "'corpus'");
  expect(R"({"seed": 1, "phases": [{"phase": 1, "corpus": "t"},
            {"phase": 2}]})",
         "'captions'");
  expect(R"({"seed": 1, "phases": [{"phase": 1, "corpus": "t"},
            {"phase": 2, "captions": "c"}, {"phase": 3, "corpus": "t"}]})",
         "synthesis_manifest");
  expect(R"({"seed": 1, "typo_key": 3, "phases": [{"phase": 1, "corpus": "t"}]})", "typo_key");
  expect(R"({"seed": 1, "phases": [{"phase": 1, "corpus": "t", "lr": 1}]})", "lr");
  expect(R"({"seed": 1, "preset": "huge", "phases": [{"phase": 1, "corpus": "t"}]})", "preset");
  expect(R"({"seed": 1, "validation_fraction": 1.5,
             "phases": [{"phase": 1, "corpus": "t"}]})",
         "validation_fraction");
  expect(R"({"seed": 1, "tokenizer": {"vocab_size": 100},
             "phases": [{"phase": 1, "corpus": "t"}]})",
         "byte base");

  write_file(tmp.file("mangled.json"), "{nope");
  CHECK_THROWS_AS(load_pipeline_config(tmp.file("mangled.json")), CorruptionError);
  CHECK_THROWS_AS(load_pipeline_config(tmp.file("absent.json")), IoError);
}

TEST_CASE("paper preset refuses to run without the compute acknowledgement") {
  TempDir tmp("selfsyn-config-paper");
  write_file(tmp.file("p.json"), R"({
    "preset": "paper",
    "seed": 9,
    "phases": [{"phase": 1, "corpus": "text.jsonl"}]
  })");
  auto cfg = load_pipeline_config(tmp.file("p.json"));
  try {
    run_pipeline(cfg);
    FAIL_CHECK("expected the compute gate to fire");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("--i-have-the-compute") != std::string::npos);
  }
  // With the flag the gate opens; the run then fails on the missing corpus,
  // proving the gate (and nothing earlier) was the blocker.
  cfg.allow_paper_compute = true;
  CHECK_THROWS_AS(run_pipeline(cfg), IoError);
}
