// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Corpus ingestion, sentence segmentation, caption manifests, dataset mixing,
// and deterministic batching.
//
// File formats:
//   - Text corpus: JSONL, one {"id": ..., "text": ...} object per line. An
//     optional first line {"meta": {...}} carries generation metadata for
//     synthetic corpora; meta with "provenance": "synthetic" marks every
//     document in the file synthetic.
//   - Caption manifest: TSV lines `image_path<TAB>caption`. Relative image
//     paths resolve against the manifest's directory. Images are P6 PPM.

#include <string>
#include <utility>
#include <vector>

#include "selfsyn/common.hpp"
#include "selfsyn/image.hpp"
#include "selfsyn/rng.hpp"
#include "selfsyn/tokenizer.hpp"

namespace selfsyn {

struct Document {
  std::string id;
  std::string text;
  bool synthetic = false;
};

struct TextCorpus {
  std::vector<Document> docs;
  std::string meta_json;  // generation metadata (sampler settings, model digest); empty for real text

  Index size() const { return static_cast<Index>(docs.size()); }
};

struct CaptionPair {
  std::string image_path;
  Image image;  // already center-cropped and resized to image_side
  std::string caption;
  std::string source;
};

struct SkipReport {
  Index loaded = 0;
  Index skipped = 0;
  std::vector<std::string> reasons;

  std::string to_json() const;
};

// Whitespace-token count ("words" throughout the corpus bookkeeping).
Index count_words(std::string_view text);
Index corpus_word_count(const TextCorpus& corpus);

// Sentence rule: a sentence ends at '.', '!' or '?' when the next byte is
// whitespace or end-of-text. Leading whitespace of each sentence is trimmed.
std::vector<std::string> split_sentences(std::string_view text);

// Sentences encoded, truncated to max_tokens, dropped when under min_tokens.
// The returned sequences carry neither BOS nor EOS; batching adds them.
std::vector<TokenSequence> segment_document(const std::string& text, const BpeVocab& vocab,
                                            Index max_tokens = 256, Index min_tokens = 10);

// Order-preserving JSONL load; malformed lines raise CorruptionError naming
// the 1-based line number. Duplicate ids raise CorruptionError.
TextCorpus load_text_corpus(const std::string& path);
void save_text_corpus(const TextCorpus& corpus, const std::string& path);

// Decodes each manifest row's image; rows with missing/corrupt images or
// empty captions are skipped and counted in the report.
std::vector<CaptionPair> load_caption_corpus(const std::string& manifest_path, Index image_side,
                                             SkipReport* report = nullptr);

// Concatenation followed by a seeded uniform shuffle of document order.
TextCorpus mix_corpora(const TextCorpus& real, const TextCorpus& synth, std::uint64_t seed);

// Deterministic holdout: the last `fraction` of documents (at least one, and
// at least one kept for training) become validation, taken in file order
// before any shuffling. Corpora with fewer than 2 documents cannot split.
std::pair<TextCorpus, TextCorpus> split_validation(const TextCorpus& corpus,
                                                   double fraction = 0.02);

struct Batch {
  Index rows = 0;
  Index cols = 0;
  std::vector<TokenId> tokens;  // rows*cols, PAD-filled tail per row
  // 1 on loss-bearing tokens: text content and EOS. 0 on BOS (conditioning,
  // like the image slots), on IMG slots, and on PAD.
  std::vector<std::uint8_t> mask;
  std::vector<Index> image_ids;  // one per row when image-conditioned, else empty

  TokenId token(Index r, Index c) const { return tokens[static_cast<size_t>(r * cols + c)]; }
  bool masked_in(Index r, Index c) const { return mask[static_cast<size_t>(r * cols + c)] != 0; }
};

// Each sequence becomes [BOS, seq..., EOS] padded to the longest row in its
// batch. A fresh epoch permutation comes from `rng`; the final short batch is
// emitted as-is.
std::vector<Batch> make_batches(const std::vector<TokenSequence>& sequences, Index batch_size,
                                Rng& rng);

// Image-conditioned rows: [IMG x n_image_slots, BOS, caption..., EOS, PAD...].
std::vector<Batch> make_multimodal_batches(
    const std::vector<std::pair<Index, TokenSequence>>& items, Index n_image_slots,
    Index batch_size, Rng& rng);

}  // namespace selfsyn
