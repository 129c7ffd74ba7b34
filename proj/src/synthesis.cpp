// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace selfsyn {

void SamplerConfig::validate(Index vocab_size) const {
  if (!(temperature > 0.0))
    throw ConfigError(cat("sampler: temperature must be positive, got ", temperature));
  if (top_k < 1 || top_k > vocab_size)
    throw ConfigError(cat("sampler: top_k must be in [1, ", vocab_size, "], got ", top_k));
  if (!(top_p > 0.0) || top_p > 1.0)
    throw ConfigError(cat("sampler: top_p must be in (0, 1], got ", top_p));
  if (min_len < 1) throw ConfigError(cat("sampler: min_len must be >= 1, got ", min_len));
  if (max_len_low > max_len_high || max_len_high > hard_cap)
    throw ConfigError(cat("sampler: need max_len_low <= max_len_high <= hard_cap, got ",
                          max_len_low, " / ", max_len_high, " / ", hard_cap));
}

std::vector<double> filter_logits(const std::vector<float>& logits, const SamplerConfig& cfg,
                                  const std::vector<TokenId>& banned) {
  if (!(cfg.temperature > 0.0))
    throw ConfigError(cat("filter_logits: temperature must be positive, got ", cfg.temperature));
  if (cfg.top_k < 1) throw ConfigError(cat("filter_logits: top_k must be >= 1, got ", cfg.top_k));
  if (!(cfg.top_p > 0.0) || cfg.top_p > 1.0)
    throw ConfigError(cat("filter_logits: top_p must be in (0, 1], got ", cfg.top_p));

  const Index v = static_cast<Index>(logits.size());
  std::vector<bool> is_banned(static_cast<size_t>(v), false);
  for (TokenId b : banned) {
    if (b < 0 || b >= v) throw ContractError(cat("filter_logits: banned id ", b, " outside vocab"));
    is_banned[static_cast<size_t>(b)] = true;
  }

  // Softmax over the non-banned candidates at the configured temperature.
  std::vector<Index> candidates;
  double mx = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < v; ++i) {
    if (is_banned[static_cast<size_t>(i)]) continue;
    if (!std::isfinite(logits[static_cast<size_t>(i)]))
      throw ContractError(cat("filter_logits: non-finite logit at token ", i));
    candidates.push_back(i);
    mx = std::max(mx, static_cast<double>(logits[static_cast<size_t>(i)]) / cfg.temperature);
  }
  if (candidates.empty()) throw ContractError("filter_logits: every token banned");

  std::vector<double> prob(static_cast<size_t>(v), 0.0);
  double denom = 0.0;
  for (Index i : candidates) {
    const double e =
        std::exp(static_cast<double>(logits[static_cast<size_t>(i)]) / cfg.temperature - mx);
    prob[static_cast<size_t>(i)] = e;
    denom += e;
  }
  for (Index i : candidates) prob[static_cast<size_t>(i)] /= denom;

  // Probability-descending order; boundary ties go to the lower token id.
  std::sort(candidates.begin(), candidates.end(), [&](Index a, Index b) {
    const double pa = prob[static_cast<size_t>(a)], pb = prob[static_cast<size_t>(b)];
    if (pa != pb) return pa > pb;
    return a < b;
  });

  const size_t keep_k = static_cast<size_t>(std::min<Index>(cfg.top_k,
                                                            static_cast<Index>(candidates.size())));

  // Nucleus rule on the top-k survivors: the shortest prefix whose softmax
  // mass reaches top_p (all survivors when it never does).
  size_t keep = keep_k;
  double cum = 0.0;
  for (size_t i = 0; i < keep_k; ++i) {
    cum += prob[static_cast<size_t>(candidates[i])];
    if (cum >= cfg.top_p) {
      keep = i + 1;
      break;
    }
  }

  std::vector<double> out(static_cast<size_t>(v), 0.0);
  double kept_mass = 0.0;
  for (size_t i = 0; i < keep; ++i) kept_mass += prob[static_cast<size_t>(candidates[i])];
  for (size_t i = 0; i < keep; ++i) {
    const size_t id = static_cast<size_t>(candidates[i]);
    out[id] = prob[id] / kept_mass;
  }
  return out;
}

TokenId sample_token(const std::vector<double>& probs, Rng& rng) {
  double sum = 0.0;
  Index last_support = -1;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] < 0.0)
      throw ContractError(cat("sample_token: negative probability at token ", i));
    sum += probs[i];
    if (probs[i] > 0.0) last_support = static_cast<Index>(i);
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ContractError(cat("sample_token: distribution sums to ", sum, ", not 1"));
  if (last_support < 0) throw ContractError("sample_token: empty support");

  const double u = rng.uniform01();
  double cum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum && probs[i] > 0.0) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_support);  // float tail: u landed past the last edge
}

CaptionSample generate_caption(const ModelParams<float>& params, const BpeVocab& vocab,
                               const Image& image, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate(params.config.vocab_size);

  Index limit = cfg.hard_cap;
  if (cfg.draw_target_length)
    limit = std::min(limit, static_cast<Index>(rng.uniform_int(cfg.max_len_low, cfg.max_len_high)));
  // The context window bounds generation too: image block + BOS + tokens.
  const Index slots = params.config.n_image_slots();
  limit = std::min(limit, params.config.max_seq_len - slots - 1);
  if (limit < 1) throw ConfigError("generate_caption: no room for text in the context window");

  auto projected = project(params, image_to_grouped(params, image));
  DecoderKVCache<float> cache(params.config);
  for (Index i = 0; i < slots; ++i) decode_step(params, cache, slice_rows(projected, i, 1));
  Tensor<float> logits = decode_step_token(params, cache, BpeVocab::kBos);

  CaptionSample out;
  while (true) {
    std::vector<TokenId> ban = {BpeVocab::kPad, BpeVocab::kImg, BpeVocab::kBos};
    if (static_cast<Index>(out.tokens.size()) + 1 < cfg.min_len) ban.push_back(BpeVocab::kEos);
    const TokenId t = sample_token(filter_logits(logits.values(), cfg, ban), rng);
    out.tokens.push_back(t);
    if (t == BpeVocab::kEos || static_cast<Index>(out.tokens.size()) >= limit) break;
    logits = decode_step_token(params, cache, t);
  }
  out.text = vocab.decode_lossy(out.tokens);
  return out;
}

TextCorpus synthesize_corpus(const ModelParams<float>& params, const BpeVocab& vocab,
                             const std::string& manifest_path, const SamplerConfig& cfg,
                             std::uint64_t seed, SkipReport* report) {
  cfg.validate(params.config.vocab_size);
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError(cat("cannot open image manifest ", manifest_path));

  const auto manifest_dir = std::filesystem::path(manifest_path).parent_path();
  std::vector<std::pair<std::string, size_t>> entries;  // (path, 1-based line)
  size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    entries.emplace_back(line, line_no);
  }
  if (entries.empty()) throw ConfigError(cat("image manifest ", manifest_path, " lists no images"));

  SkipReport local;
  SkipReport& rep = report ? *report : local;
  TextCorpus corpus;
  for (size_t i = 0; i < entries.size(); ++i) {
    std::filesystem::path p(entries[i].first);
    if (p.is_relative()) p = manifest_dir / p;
    const auto skip = [&](const char* what) {
      rep.skipped += 1;
      rep.reasons.push_back(cat(manifest_path, ":", entries[i].second, ": ", what));
    };
    Image img;
    try {
      img = load_image(p.string(), params.config.image_side);
    } catch (const IoError& e) {
      skip(e.what());
      continue;
    } catch (const CorruptionError& e) {
      skip(e.what());
      continue;
    }
    Rng rng(child_seed(seed, static_cast<std::uint64_t>(i)));
    CaptionSample sample = generate_caption(params, vocab, img, cfg, rng);
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%06zu", i);
    corpus.docs.push_back({id, sample.text, true});
    rep.loaded += 1;
  }

  nlohmann::ordered_json meta;
  meta["provenance"] = "synthetic";
  meta["model_digest"] = params.digest();
  meta["seed"] = seed;
  meta["sampler"] = {{"temperature", cfg.temperature},
                     {"top_k", cfg.top_k},
                     {"top_p", cfg.top_p},
                     {"min_len", cfg.min_len},
                     {"max_len_low", cfg.max_len_low},
                     {"max_len_high", cfg.max_len_high},
                     {"hard_cap", cfg.hard_cap},
                     {"draw_target_length", cfg.draw_target_length}};
  meta["images"] = rep.loaded;
  meta["skipped"] = rep.skipped;
  meta["word_count"] = corpus_word_count(corpus);
  corpus.meta_json = meta.dump();
  return corpus;
}

}  // namespace selfsyn
