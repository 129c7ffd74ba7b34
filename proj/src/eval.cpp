// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <utility>

#include "json.hpp"
#include "selfsyn/training.hpp"

namespace selfsyn {
namespace {

// Sum of log softmax picks over `targets`, reading logits rows
// `first_row .. first_row+|targets|-1`. All accumulation in double.
double score_rows(const Tensor<float>& logits, const TokenSequence& targets, Index first_row) {
  const Index v = logits.dim(1);
  double total = 0.0;
  for (Index i = 0; i < static_cast<Index>(targets.size()); ++i) {
    const TokenId target = targets[static_cast<size_t>(i)];
    if (target < 0 || target >= v)
      throw ContractError(cat("sequence_log_prob: token id ", target, " outside vocab of ", v));
    const Index row = first_row + i;
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(logits(row, j)));
    double denom = 0.0;
    for (Index j = 0; j < v; ++j) denom += std::exp(static_cast<double>(logits(row, j)) - mx);
    total += static_cast<double>(logits(row, target)) - mx - std::log(denom);
  }
  return total;
}

double projected_log_prob(const ModelParams<float>& params, const Tensor<float>& projected,
                          const std::string& text, const BpeVocab& vocab) {
  auto tokens = vocab.encode(text);
  return sequence_log_prob_given(params, {}, tokens, &projected);
}

nlohmann::json parse_jsonl_line(const std::string& path, Index lineno, const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(cat(path, ":", lineno, ": malformed JSON line (", e.what(), ")"));
  }
  if (!j.is_object()) throw CorruptionError(cat(path, ":", lineno, ": expected a JSON object"));
  return j;
}

std::string require_string(const nlohmann::json& j, const char* key, const std::string& path,
                           Index lineno) {
  if (!j.contains(key) || !j[key].is_string())
    throw CorruptionError(cat(path, ":", lineno, ": missing string field '", key, "'"));
  return j[key].get<std::string>();
}

// Applies `fn` to each non-empty line of a JSONL file.
template <class Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot open dataset: ", path));
  std::string line;
  Index lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fn(parse_jsonl_line(path, lineno, line), lineno);
  }
}

Image load_relative_image(const std::string& dataset_path, const std::string& rel,
                          Index image_side) {
  const auto base = std::filesystem::path(dataset_path).parent_path();
  return load_image((base / rel).string(), image_side);
}

}  // namespace

// ---------------------------------------------------------------------------
// Scoring

double sequence_log_prob_given(const ModelParams<float>& params, const TokenSequence& prefix,
                               const TokenSequence& continuation, const Tensor<float>* projected) {
  if (continuation.empty()) throw ContractError("sequence_log_prob: empty continuation");
  // Inputs: BOS + prefix + all continuation tokens but the last. Row i of the
  // logits scores the token after input i, so the continuation occupies rows
  // |prefix| onward.
  TokenSequence inputs;
  inputs.reserve(1 + prefix.size() + continuation.size() - 1);
  inputs.push_back(BpeVocab::kBos);
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  inputs.insert(inputs.end(), continuation.begin(), continuation.end() - 1);
  const auto logits = projected == nullptr
                          ? forward_lm(params, inputs)
                          : forward_multimodal_from_projection(params, *projected, inputs);
  return score_rows(logits, continuation, static_cast<Index>(prefix.size()));
}

double sequence_log_prob(const ModelParams<float>& params, const TokenSequence& tokens,
                         const Tensor<float>* projected) {
  return sequence_log_prob_given(params, {}, tokens, projected);
}

// ---------------------------------------------------------------------------
// Minimal pairs

PairScores minimal_pair_accuracy(const ModelParams<float>& params, const BpeVocab& vocab,
                                 const std::vector<MinimalPair>& pairs) {
  if (pairs.empty()) throw ConfigError("minimal_pair_accuracy: no items");
  PairScores out;
  std::map<std::string, std::pair<double, Index>> cat_sums;
  for (const auto& p : pairs) {
    if (p.good == p.bad)
      throw ConfigError(cat("minimal_pair_accuracy: identical pair '", p.good, "'"));
    const double lp_good = sequence_log_prob(params, vocab.encode(p.context + p.good));
    const double lp_bad = sequence_log_prob(params, vocab.encode(p.context + p.bad));
    const double credit = lp_good > lp_bad ? 1.0 : (lp_good == lp_bad ? 0.5 : 0.0);
    const std::string& cat_name = p.category.empty() ? std::string("uncategorized") : p.category;
    auto& slot = cat_sums[cat_name];
    slot.first += credit;
    slot.second += 1;
    out.accuracy += credit;
  }
  out.items = static_cast<Index>(pairs.size());
  out.accuracy /= static_cast<double>(out.items);
  for (const auto& [name, sum] : cat_sums)
    out.by_category[name] = {sum.first / static_cast<double>(sum.second), sum.second};
  return out;
}

// ---------------------------------------------------------------------------
// Matching

MatchScores matching_from_scores(const std::vector<MatchItemScores>& scores) {
  if (scores.empty()) throw ConfigError("matching_from_scores: no items");
  MatchScores out;
  for (const auto& s : scores) {
    const bool text_ok = s.s00 > s.s10 && s.s11 > s.s01;
    const bool image_ok = s.s00 > s.s01 && s.s11 > s.s10;
    out.text += text_ok ? 1.0 : 0.0;
    out.image += image_ok ? 1.0 : 0.0;
    out.group += (text_ok && image_ok) ? 1.0 : 0.0;
  }
  out.items = static_cast<Index>(scores.size());
  const double n = static_cast<double>(out.items);
  out.text /= n;
  out.image /= n;
  out.group /= n;
  return out;
}

MatchScores matching_scores(const ModelParams<float>& params, const BpeVocab& vocab,
                            const std::vector<MatchItem>& items) {
  std::vector<MatchItemScores> scores;
  scores.reserve(items.size());
  for (const auto& item : items) {
    if (item.caption0 == item.caption1)
      throw ConfigError(cat("matching_scores: identical captions in item '", item.id, "'"));
    const auto proj0 = project(params, image_to_grouped(params, item.image0));
    const auto proj1 = project(params, image_to_grouped(params, item.image1));
    MatchItemScores s;
    s.s00 = projected_log_prob(params, proj0, item.caption0, vocab);
    s.s01 = projected_log_prob(params, proj1, item.caption0, vocab);
    s.s10 = projected_log_prob(params, proj0, item.caption1, vocab);
    s.s11 = projected_log_prob(params, proj1, item.caption1, vocab);
    scores.push_back(s);
  }
  return matching_from_scores(scores);
}

// ---------------------------------------------------------------------------
// Ranking

double rank_accuracy(const ModelParams<float>& params, const BpeVocab& vocab,
                     const std::vector<RankItem>& items) {
  if (items.empty()) throw ConfigError("rank_accuracy: no items");
  Index correct = 0;
  for (const auto& item : items) {
    if (item.candidates.size() < 2)
      throw ConfigError(cat("rank_accuracy: item '", item.id, "' needs at least 2 candidates"));
    if (item.gold < 0 || item.gold >= static_cast<Index>(item.candidates.size()))
      throw ConfigError(cat("rank_accuracy: item '", item.id, "' gold index ", item.gold,
                            " out of range"));
    const auto projected = project(params, image_to_grouped(params, item.image));
    Index best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < static_cast<Index>(item.candidates.size()); ++c) {
      const double s = projected_log_prob(params, projected,
                                          item.question + item.candidates[static_cast<size_t>(c)],
                                          vocab);
      if (s > best_score) {  // strict: ties keep the lowest index
        best_score = s;
        best = c;
      }
    }
    if (best == item.gold) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

// ---------------------------------------------------------------------------
// Dataset loading

std::vector<MinimalPair> load_minimal_pairs(const std::string& path) {
  std::vector<MinimalPair> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, Index lineno) {
    MinimalPair p;
    p.good = require_string(j, "good", path, lineno);
    p.bad = require_string(j, "bad", path, lineno);
    p.context = j.value("context", "");
    p.category = j.value("category", "");
    if (p.good == p.bad)
      throw CorruptionError(cat(path, ":", lineno, ": 'good' and 'bad' are identical"));
    out.push_back(std::move(p));
  });
  return out;
}

std::vector<MatchItem> load_match_items(const std::string& path, Index image_side) {
  std::vector<MatchItem> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, Index lineno) {
    MatchItem m;
    m.id = j.value("id", cat("line-", lineno));
    m.caption0 = require_string(j, "caption0", path, lineno);
    m.caption1 = require_string(j, "caption1", path, lineno);
    if (m.caption0 == m.caption1)
      throw CorruptionError(cat(path, ":", lineno, ": captions are identical"));
    m.image0 = load_relative_image(path, require_string(j, "image0", path, lineno), image_side);
    m.image1 = load_relative_image(path, require_string(j, "image1", path, lineno), image_side);
    out.push_back(std::move(m));
  });
  return out;
}

std::vector<RankItem> load_rank_items(const std::string& path, Index image_side) {
  std::vector<RankItem> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, Index lineno) {
    RankItem r;
    r.id = j.value("id", cat("line-", lineno));
    r.question = require_string(j, "question", path, lineno);
    if (!j.contains("candidates") || !j["candidates"].is_array() || j["candidates"].size() < 2)
      throw CorruptionError(cat(path, ":", lineno, ": need an array of at least 2 candidates"));
    for (const auto& c : j["candidates"]) {
      if (!c.is_string())
        throw CorruptionError(cat(path, ":", lineno, ": candidates must be strings"));
      r.candidates.push_back(c.get<std::string>());
    }
    if (!j.contains("gold") || !j["gold"].is_number_integer())
      throw CorruptionError(cat(path, ":", lineno, ": missing integer field 'gold'"));
    r.gold = j["gold"].get<Index>();
    if (r.gold < 0 || r.gold >= static_cast<Index>(r.candidates.size()))
      throw CorruptionError(cat(path, ":", lineno, ": gold index ", r.gold, " out of range"));
    r.image = load_relative_image(path, require_string(j, "image", path, lineno), image_side);
    out.push_back(std::move(r));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Suite runner

namespace {

std::vector<LabeledSequence> load_labeled(const std::string& path, const BpeVocab& vocab,
                                          Index* n_classes) {
  std::vector<LabeledSequence> out;
  Index max_label = -1;
  for_each_jsonl(path, [&](const nlohmann::json& j, Index lineno) {
    LabeledSequence s;
    s.tokens = vocab.encode(require_string(j, "text", path, lineno));
    if (!j.contains("label") || !j["label"].is_number_integer())
      throw CorruptionError(cat(path, ":", lineno, ": missing integer field 'label'"));
    s.label = j["label"].get<Index>();
    if (s.label < 0) throw CorruptionError(cat(path, ":", lineno, ": negative label"));
    max_label = std::max(max_label, s.label);
    out.push_back(std::move(s));
  });
  *n_classes = max_label + 1;
  return out;
}

nlohmann::ordered_json run_task(const ModelParams<float>& params, const BpeVocab& vocab,
                                const nlohmann::json& task, const std::string& manifest_path) {
  nlohmann::ordered_json result;
  const std::string type = task.value("type", "");
  result["task"] = task.value("name", type);
  result["type"] = type;
  const std::string rel = task.value("path", "");
  const auto base = std::filesystem::path(manifest_path).parent_path();
  const std::string path = (base / rel).string();
  if (rel.empty()) {
    result["error"] = "task has no dataset path";
    return result;
  }
  if (!std::filesystem::exists(path)) {
    result["error"] = cat("absent: ", rel);
    return result;
  }
  if (type == "minimal_pairs") {
    const auto scores = minimal_pair_accuracy(params, vocab, load_minimal_pairs(path));
    result["accuracy"] = scores.accuracy;
    result["items"] = scores.items;
    nlohmann::ordered_json cats;
    for (const auto& [name, c] : scores.by_category)
      cats[name] = {{"accuracy", c.accuracy}, {"items", c.items}};
    result["by_category"] = std::move(cats);
  } else if (type == "matching") {
    const auto scores =
        matching_scores(params, vocab, load_match_items(path, params.config.image_side));
    result["text"] = scores.text;
    result["image"] = scores.image;
    result["group"] = scores.group;
    result["items"] = scores.items;
  } else if (type == "ranking") {
    const auto items = load_rank_items(path, params.config.image_side);
    result["accuracy"] = rank_accuracy(params, vocab, items);
    result["items"] = static_cast<Index>(items.size());
  } else if (type == "lora_classification") {
    Index n_classes = 0;
    const auto dataset = load_labeled(path, vocab, &n_classes);
    LoraConfig cfg;
    cfg.rank = task.value("rank", cfg.rank);
    cfg.alpha = task.value("alpha", cfg.alpha);
    cfg.steps = task.value("steps", cfg.steps);
    cfg.lr = task.value("lr", cfg.lr);
    cfg.batch_size = task.value("batch_size", cfg.batch_size);
    cfg.seed = task.value("seed", cfg.seed);
    const auto fit = lora_finetune(params, cfg, dataset, n_classes);
    result["train_accuracy"] = fit.train_accuracy;
    result["items"] = static_cast<Index>(dataset.size());
    result["classes"] = n_classes;
    result["steps"] = cfg.steps;
  } else {
    result["error"] = cat("unknown task type '", type, "'");
  }
  return result;
}

}  // namespace

std::string run_suite(const ModelParams<float>& params, const BpeVocab& vocab,
                      const std::string& manifest_path) {
  std::ifstream f(manifest_path, std::ios::binary);
  if (!f) throw IoError(cat("cannot open suite manifest: ", manifest_path));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(cat("malformed suite manifest ", manifest_path, ": ", e.what()));
  }
  if (!manifest.is_object() || !manifest.contains("tasks") || !manifest["tasks"].is_array())
    throw ConfigError(cat("suite manifest ", manifest_path, " needs a 'tasks' array"));

  nlohmann::ordered_json report;
  report["schema"] = "evalreport-v1";
  report["model_digest"] = params.digest();
  report["config"] = manifest;
  report["results"] = nlohmann::ordered_json::array();
  for (const auto& task : manifest["tasks"]) {
    if (!task.is_object()) throw ConfigError("suite manifest: each task must be an object");
    try {
      report["results"].push_back(run_task(params, vocab, task, manifest_path));
    } catch (const Error& e) {
      nlohmann::ordered_json failed;
      failed["task"] = task.value("name", task.value("type", "?"));
      failed["type"] = task.value("type", "?");
      failed["error"] = e.what();
      report["results"].push_back(std::move(failed));
    }
  }
  return report.dump(2);
}

}  // namespace selfsyn
