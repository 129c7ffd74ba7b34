// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Zero-shot evaluation: sequence scoring, minimal-pair accuracy, two-image/
// two-caption matching, and candidate ranking, plus a JSON report runner.
//
// Dataset files are JSONL, one item per line:
//   minimal pairs: {"good": ..., "bad": ..., "context"?: ..., "category"?: ...}
//   matching:      {"image0": path, "image1": path, "caption0": ..., "caption1": ...}
//   ranking:       {"image": path, "question": ..., "candidates": [...], "gold": idx}
//   classification:{"text": ..., "label": idx}
// Image paths resolve against the dataset file's directory.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selfsyn/data.hpp"
#include "selfsyn/model.hpp"
#include "selfsyn/tokenizer.hpp"

namespace selfsyn {

// ---------------------------------------------------------------------------
// Scoring

// Sum over continuation positions of log p(token | BOS, prefix, earlier
// tokens [, image]). No EOS is appended and no length normalization applied;
// minimal pairs are near-length-matched by construction. Pass `projected`
// (the projected image block) to condition on an image.
double sequence_log_prob_given(const ModelParams<float>& params, const TokenSequence& prefix,
                               const TokenSequence& continuation,
                               const Tensor<float>* projected = nullptr);

double sequence_log_prob(const ModelParams<float>& params, const TokenSequence& tokens,
                         const Tensor<float>* projected = nullptr);

// ---------------------------------------------------------------------------
// Minimal pairs

struct MinimalPair {
  std::string context;  // optional shared prefix, may be empty
  std::string good;
  std::string bad;
  std::string category;  // optional; empty -> "uncategorized"
};

struct CategoryScore {
  double accuracy = 0.0;
  Index items = 0;
};

struct PairScores {
  double accuracy = 0.0;
  Index items = 0;
  std::map<std::string, CategoryScore> by_category;
};

// Item correct iff logP(context+good) > logP(context+bad); a tie scores 0.5.
PairScores minimal_pair_accuracy(const ModelParams<float>& params, const BpeVocab& vocab,
                                 const std::vector<MinimalPair>& pairs);

// ---------------------------------------------------------------------------
// Two-image / two-caption matching

struct MatchItem {
  std::string id;
  Image image0, image1;
  std::string caption0, caption1;
};

// s(caption j, image k) for one item.
struct MatchItemScores {
  double s00 = 0, s01 = 0, s10 = 0, s11 = 0;
};

struct MatchScores {
  double text = 0.0;   // s00 > s10 and s11 > s01
  double image = 0.0;  // s00 > s01 and s11 > s10
  double group = 0.0;  // both; any tied comparison fails its score
  Index items = 0;
};

// Aggregation over precomputed scores (also drives the statistical null test).
MatchScores matching_from_scores(const std::vector<MatchItemScores>& scores);

MatchScores matching_scores(const ModelParams<float>& params, const BpeVocab& vocab,
                            const std::vector<MatchItem>& items);

// ---------------------------------------------------------------------------
// Candidate ranking

struct RankItem {
  std::string id;
  Image image;
  std::string question;
  std::vector<std::string> candidates;
  Index gold = 0;
};

// Predicted = argmax over candidates of logP(question + candidate | image);
// ties resolve to the lowest candidate index.
double rank_accuracy(const ModelParams<float>& params, const BpeVocab& vocab,
                     const std::vector<RankItem>& items);

// ---------------------------------------------------------------------------
// Dataset loading

std::vector<MinimalPair> load_minimal_pairs(const std::string& path);
std::vector<MatchItem> load_match_items(const std::string& path, Index image_side);
std::vector<RankItem> load_rank_items(const std::string& path, Index image_side);

// ---------------------------------------------------------------------------
// Suite runner

// Manifest JSON: {"tasks": [{"name": ..., "type": "minimal_pairs" |
// "matching" | "ranking" | "lora_classification", "path": dataset, ...}]}.
// Missing datasets are reported as errors on their task entry; the rest of
// the suite still runs. Returns an `evalreport-v1` JSON document.
std::string run_suite(const ModelParams<float>& params, const BpeVocab& vocab,
                      const std::string& manifest_path);

}  // namespace selfsyn
