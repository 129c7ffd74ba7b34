// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Caption synthesis: temperature/top-k/nucleus sampling over decoder logits,
// image-conditioned autoregressive generation, and synthetic-corpus emission.

#include <cstdint>
#include <string>
#include <vector>

#include "selfsyn/data.hpp"
#include "selfsyn/model.hpp"
#include "selfsyn/rng.hpp"
#include "selfsyn/tokenizer.hpp"

namespace selfsyn {

struct SamplerConfig {
  double temperature = 0.7;
  Index top_k = 50;
  double top_p = 0.95;
  Index min_len = 1;       // EOS is banned before this many generated tokens
  Index max_len_low = 32;  // target length drawn uniformly from [low, high]
  Index max_len_high = 64;
  Index hard_cap = 256;              // absolute stop, always enforced
  bool draw_target_length = true;    // off: only EOS or the hard cap stop generation

  void validate(Index vocab_size) const;
};

// Temperature -> softmax -> top-k (boundary ties to the lower token id) ->
// smallest probability-descending prefix of the survivors with cumulative
// mass >= top_p -> renormalize. Returns one probability per vocab entry;
// every removed or banned token is exactly 0. top_k is clamped to the number
// of candidates.
std::vector<double> filter_logits(const std::vector<float>& logits, const SamplerConfig& cfg,
                                  const std::vector<TokenId>& banned = {});

// Inverse-CDF draw. The distribution must sum to 1 within 1e-6.
TokenId sample_token(const std::vector<double>& probs, Rng& rng);

struct CaptionSample {
  TokenSequence tokens;  // sampled tokens; EOS kept if it terminated the draw
  std::string text;      // lossy-decoded text (specials skipped, bad UTF-8 -> U+FFFD)
};

// Autoregressive sampling conditioned on [projected image block; BOS], the
// same layout the multimodal phases train on -- no textual prompt. Stops at
// EOS, at the per-image target length, or at the hard cap, whichever first.
// PAD/IMG/BOS are never emitted.
CaptionSample generate_caption(const ModelParams<float>& params, const BpeVocab& vocab,
                               const Image& image, const SamplerConfig& cfg, Rng& rng);

// One caption per manifest entry (a text file listing one PPM path per line,
// relative paths resolving against the manifest directory). Each image uses
// the child seed derived from (seed, manifest index), so results do not
// depend on generation order; undecodable images are skipped and reported.
// The corpus meta line records the sampler settings, the model digest, the
// seed, and the generated word count.
TextCorpus synthesize_corpus(const ModelParams<float>& params, const BpeVocab& vocab,
                             const std::string& manifest_path, const SamplerConfig& cfg,
                             std::uint64_t seed, SkipReport* report = nullptr);

}  // namespace selfsyn
