// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Byte-level BPE tokenizer.
//
// Id layout: PAD=0, BOS=1, EOS=2, IMG=3, then the 256 byte symbols at 4..259,
// then one id per learned merge starting at 260. Specials are never produced
// by merges or by encoding raw text.
//
// Pre-tokenization ("whitespace-prefix" convention): text splits into chunks
// at word boundaries, where the last whitespace byte of a run attaches to the
// following word ("a  bb" -> "a", " ", " bb"). Merges never cross chunks, and
// chunk concatenation reproduces the input exactly, so decode(encode(s)) == s
// for arbitrary byte strings.

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selfsyn/common.hpp"

namespace selfsyn {

class BpeVocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kImg = 3;
  static constexpr Index kNumSpecials = 4;
  static constexpr Index kByteBase = kNumSpecials;  // byte b lives at id 4 + b
  static constexpr Index kBaseSize = kNumSpecials + 256;

  // A fresh vocab covers the 260 base ids (specials + bytes) with no merges.
  BpeVocab();

  // Learns up to vocab_size - 260 merges. Deterministic given document order:
  // the highest-count pair merges first, ties broken by lexicographically
  // smaller (left bytes, right bytes). Stops early if no pair occurs twice.
  static BpeVocab train(const std::vector<std::string>& documents, Index vocab_size);

  Index vocab_size() const { return kBaseSize + static_cast<Index>(merges_.size()); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }

  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

  // Byte string for a token id; specials map to the empty string.
  const std::string& token_bytes(TokenId id) const;

  // Greedy application of merges in training order, per chunk.
  TokenSequence encode(std::string_view text) const;

  // Concatenates token byte strings; specials are dropped; ids outside the
  // vocabulary raise DecodeError.
  std::string decode(const TokenSequence& ids) const;

  // decode() followed by UTF-8 repair: sampled token streams can split or
  // invent multi-byte sequences, and downstream text formats require valid
  // UTF-8. Malformed bytes each become U+FFFD.
  std::string decode_lossy(const TokenSequence& ids) const;

  // Line-oriented vocab file, bit-exact across platforms:
  //   bpe-v1 <vocab_size>
  //   <left_id> <right_id>        (one line per merge, training order)
  //   specials
  //   pad 0 / bos 1 / eos 2 / img 3
  void save(const std::string& path) const;
  static BpeVocab load(const std::string& path);

  // Exposed for tests of the boundary convention.
  static std::vector<std::string> split_chunks(std::string_view text);

 private:
  void rebuild_tables();

  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::vector<std::string> bytes_;  // id -> bytes, specials empty
};

}  // namespace selfsyn
