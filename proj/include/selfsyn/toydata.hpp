// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Self-contained toy dataset generator: template-grammar text documents,
// procedurally rendered shape images with aligned captions, instruction-style
// caption pairs, a disjoint image set for caption synthesis, evaluation
// datasets (minimal pairs, matching, ranking, classification), and a
// ready-to-run pipeline config wired to all of it. Output is byte-identical
// for a fixed seed.

#include <cstdint>
#include <string>

#include "selfsyn/common.hpp"

namespace selfsyn {

struct ToyDataOptions {
  Index documents = 40;         // text.jsonl entries
  Index caption_images = 16;    // images/cap-*.ppm + captions.tsv rows
  Index synthesis_images = 12;  // images/syn-*.ppm, disjoint from the above
  Index eval_items = 8;         // rows per evaluation dataset
  Index image_side = 48;        // source resolution; loaders resize on ingest
  std::uint64_t seed = 0;
};

// Writes the dataset under `dir` (created if needed; must not already contain
// a toy config). Returns the path of the generated pipeline config.
std::string make_toy_data(const std::string& dir, const ToyDataOptions& opts = {});

}  // namespace selfsyn
