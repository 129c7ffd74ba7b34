// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace selfsyn {

namespace {

inline bool is_ws(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

inline std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

// Replaces every left-to-right non-overlapping occurrence of (a,b) with id.
void apply_merge(std::vector<TokenId>& syms, TokenId a, TokenId b, TokenId id) {
  size_t w = 0;
  for (size_t r = 0; r < syms.size();) {
    if (r + 1 < syms.size() && syms[r] == a && syms[r + 1] == b) {
      syms[w++] = id;
      r += 2;
    } else {
      syms[w++] = syms[r++];
    }
  }
  syms.resize(w);
}

}  // namespace

std::vector<std::string> BpeVocab::split_chunks(std::string_view text) {
  std::vector<std::string> chunks;
  size_t i = 0;
  const size_t n = text.size();
  while (i < n) {
    if (is_ws(static_cast<unsigned char>(text[i]))) {
      size_t j = i;
      while (j < n && is_ws(static_cast<unsigned char>(text[j]))) ++j;
      if (j < n) {
        // last whitespace byte prefixes the following word
        if (j - i > 1) chunks.emplace_back(text.substr(i, j - i - 1));
        size_t k = j;
        while (k < n && !is_ws(static_cast<unsigned char>(text[k]))) ++k;
        chunks.emplace_back(text.substr(j - 1, k - (j - 1)));
        i = k;
      } else {
        chunks.emplace_back(text.substr(i));
        i = n;
      }
    } else {
      size_t k = i;
      while (k < n && !is_ws(static_cast<unsigned char>(text[k]))) ++k;
      chunks.emplace_back(text.substr(i, k - i));
      i = k;
    }
  }
  return chunks;
}

BpeVocab::BpeVocab() { rebuild_tables(); }

BpeVocab BpeVocab::train(const std::vector<std::string>& documents, Index vocab_size) {
  if (documents.empty()) throw ConfigError("train_bpe: corpus is empty");
  if (vocab_size <= kBaseSize)
    throw ConfigError(cat("train_bpe: vocab_size ", vocab_size, " must exceed base size ",
                          kBaseSize, " (256 bytes + 4 specials)"));
  const Index budget = vocab_size - kBaseSize;

  BpeVocab vocab;

  // Deduplicated chunk inventory with counts.
  std::unordered_map<std::string, std::int64_t> chunk_count;
  for (const auto& doc : documents)
    for (auto& c : split_chunks(doc)) chunk_count[c] += 1;

  std::vector<std::vector<TokenId>> words;
  std::vector<std::int64_t> counts;
  words.reserve(chunk_count.size());
  for (const auto& [chunk, cnt] : chunk_count) {
    std::vector<TokenId> syms;
    syms.reserve(chunk.size());
    for (unsigned char c : chunk) syms.push_back(static_cast<TokenId>(kByteBase + c));
    words.push_back(std::move(syms));
    counts.push_back(cnt);
  }

  // pair -> total count, and which words contain it.
  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  std::unordered_map<std::uint64_t, std::unordered_set<std::int32_t>> pair_words;
  for (size_t w = 0; w < words.size(); ++w) {
    const auto& syms = words[w];
    for (size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto key = pair_key(syms[i], syms[i + 1]);
      pair_counts[key] += counts[w];
      pair_words[key].insert(static_cast<std::int32_t>(w));
    }
  }

  struct HeapItem {
    std::int64_t count;
    TokenId a, b;
  };
  auto worse = [&vocab](const HeapItem& x, const HeapItem& y) {
    if (x.count != y.count) return x.count < y.count;
    const auto& xa = vocab.token_bytes(x.a);
    const auto& ya = vocab.token_bytes(y.a);
    if (xa != ya) return xa > ya;  // smaller bytes win
    const auto& xb = vocab.token_bytes(x.b);
    const auto& yb = vocab.token_bytes(y.b);
    if (xb != yb) return xb > yb;
    // Distinct ids can share byte strings (different merge histories of the
    // same bytes); break that tie on ids so training order never depends on
    // hash-container iteration order.
    if (x.a != y.a) return x.a > y.a;
    return x.b > y.b;
  };
  std::priority_queue<HeapItem, std::vector<HeapItem>, decltype(worse)> heap(worse);
  for (const auto& [key, cnt] : pair_counts)
    heap.push({cnt, static_cast<TokenId>(key >> 32), static_cast<TokenId>(key & 0xFFFFFFFF)});

  for (Index m = 0; m < budget; ++m) {
    // Pop until the top entry's count is current (lazy invalidation).
    HeapItem best{0, 0, 0};
    while (!heap.empty()) {
      best = heap.top();
      heap.pop();
      auto it = pair_counts.find(pair_key(best.a, best.b));
      if (it != pair_counts.end() && it->second == best.count && best.count > 0) break;
      best.count = 0;
    }
    if (best.count < 2) break;  // no pair occurs twice; vocab stays smaller

    const TokenId new_id = static_cast<TokenId>(kBaseSize + vocab.merges_.size());
    vocab.merges_.emplace_back(best.a, best.b);
    vocab.bytes_.push_back(vocab.bytes_[static_cast<size_t>(best.a)] +
                           vocab.bytes_[static_cast<size_t>(best.b)]);

    const auto merged_key = pair_key(best.a, best.b);
    auto touched = pair_words[merged_key];  // copy; updates mutate the index
    std::unordered_set<std::uint64_t> dirty;
    for (std::int32_t w : touched) {
      auto& syms = words[static_cast<size_t>(w)];
      bool contains = false;
      for (size_t i = 0; i + 1 < syms.size(); ++i)
        if (syms[i] == best.a && syms[i + 1] == best.b) {
          contains = true;
          break;
        }
      if (!contains) continue;
      // Retract this word's pair contributions, rewrite, re-add.
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        const auto key = pair_key(syms[i], syms[i + 1]);
        auto it = pair_counts.find(key);
        it->second -= counts[static_cast<size_t>(w)];
        dirty.insert(key);
        if (it->second <= 0) {
          pair_counts.erase(it);
          pair_words[key].erase(w);
        }
      }
      apply_merge(syms, best.a, best.b, new_id);
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        const auto key = pair_key(syms[i], syms[i + 1]);
        pair_counts[key] += counts[static_cast<size_t>(w)];
        pair_words[key].insert(w);
        dirty.insert(key);
      }
    }
    pair_counts.erase(merged_key);
    pair_words.erase(merged_key);
    for (const auto key : dirty) {
      auto it = pair_counts.find(key);
      if (it != pair_counts.end() && it->second > 0)
        heap.push({it->second, static_cast<TokenId>(key >> 32),
                   static_cast<TokenId>(key & 0xFFFFFFFF)});
    }
  }
  return vocab;
}

const std::string& BpeVocab::token_bytes(TokenId id) const {
  if (id < 0 || id >= vocab_size())
    throw DecodeError(cat("token id ", id, " outside vocab of size ", vocab_size()));
  return bytes_[static_cast<size_t>(id)];
}

TokenSequence BpeVocab::encode(std::string_view text) const {
  std::unordered_map<std::uint64_t, Index> rank;
  rank.reserve(merges_.size());
  for (size_t i = 0; i < merges_.size(); ++i)
    rank[pair_key(merges_[i].first, merges_[i].second)] = static_cast<Index>(i);

  TokenSequence out;
  std::unordered_map<std::string, TokenSequence> memo;  // per-call, keeps encode pure
  for (const auto& chunk : split_chunks(text)) {
    auto it = memo.find(chunk);
    if (it == memo.end()) {
      std::vector<TokenId> syms;
      syms.reserve(chunk.size());
      for (unsigned char c : chunk) syms.push_back(static_cast<TokenId>(kByteBase + c));
      // Repeatedly apply the earliest-trained merge present anywhere in the
      // chunk; equivalent to replaying merges in training order.
      while (syms.size() >= 2) {
        Index best_rank = static_cast<Index>(merges_.size());
        for (size_t i = 0; i + 1 < syms.size(); ++i) {
          auto r = rank.find(pair_key(syms[i], syms[i + 1]));
          if (r != rank.end() && r->second < best_rank) best_rank = r->second;
        }
        if (best_rank == static_cast<Index>(merges_.size())) break;
        apply_merge(syms, merges_[static_cast<size_t>(best_rank)].first,
                    merges_[static_cast<size_t>(best_rank)].second,
                    static_cast<TokenId>(kBaseSize + best_rank));
      }
      it = memo.emplace(chunk, TokenSequence(syms.begin(), syms.end())).first;
    }
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

std::string BpeVocab::decode(const TokenSequence& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (is_special(id)) continue;
    out += token_bytes(id);
  }
  return out;
}

namespace {

// Length of the well-formed UTF-8 sequence starting at s[i], or 0. Enforces
// the RFC 3629 ranges: no overlongs, no surrogates, nothing past U+10FFFF.
size_t utf8_sequence_length(const std::string& s, size_t i) {
  const auto byte = [&](size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char b0 = byte(i);
  if (b0 < 0x80) return 1;
  const auto cont = [&](size_t k, unsigned char lo = 0x80, unsigned char hi = 0xBF) {
    return k < s.size() && byte(k) >= lo && byte(k) <= hi;
  };
  if (b0 >= 0xC2 && b0 <= 0xDF) return cont(i + 1) ? 2 : 0;
  if (b0 == 0xE0) return cont(i + 1, 0xA0) && cont(i + 2) ? 3 : 0;
  if (b0 >= 0xE1 && b0 <= 0xEC) return cont(i + 1) && cont(i + 2) ? 3 : 0;
  if (b0 == 0xED) return cont(i + 1, 0x80, 0x9F) && cont(i + 2) ? 3 : 0;
  if (b0 >= 0xEE && b0 <= 0xEF) return cont(i + 1) && cont(i + 2) ? 3 : 0;
  if (b0 == 0xF0) return cont(i + 1, 0x90) && cont(i + 2) && cont(i + 3) ? 4 : 0;
  if (b0 >= 0xF1 && b0 <= 0xF3) return cont(i + 1) && cont(i + 2) && cont(i + 3) ? 4 : 0;
  if (b0 == 0xF4) return cont(i + 1, 0x80, 0x8F) && cont(i + 2) && cont(i + 3) ? 4 : 0;
  return 0;
}

}  // namespace

std::string BpeVocab::decode_lossy(const TokenSequence& ids) const {
  const std::string raw = decode(ids);
  std::string out;
  out.reserve(raw.size());
  for (size_t i = 0; i < raw.size();) {
    const size_t len = utf8_sequence_length(raw, i);
    if (len == 0) {
      out += "\xEF\xBF\xBD";  // U+FFFD replacement character
      ++i;
    } else {
      out.append(raw, i, len);
      i += len;
    }
  }
  return out;
}

void BpeVocab::save(const std::string& path) const {
  std::ostringstream os;
  os << "bpe-v1 " << vocab_size() << "\n";
  for (const auto& [a, b] : merges_) os << a << " " << b << "\n";
  os << "specials\n";
  os << "pad " << kPad << "\n";
  os << "bos " << kBos << "\n";
  os << "eos " << kEos << "\n";
  os << "img " << kImg << "\n";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot write vocab file: ", path));
  const std::string s = os.str();
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw IoError(cat("short write to vocab file: ", path));
}

BpeVocab BpeVocab::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot open vocab file: ", path));
  std::string magic;
  Index size = 0;
  if (!(f >> magic >> size) || magic != "bpe-v1")
    throw CorruptionError(cat("bad vocab header in ", path));
  if (size < kBaseSize) throw CorruptionError(cat("vocab size ", size, " below base size"));

  BpeVocab vocab;
  const Index n_merges = size - kBaseSize;
  for (Index i = 0; i < n_merges; ++i) {
    TokenId a = 0, b = 0;
    if (!(f >> a >> b)) throw CorruptionError(cat("truncated merge list in ", path));
    const TokenId limit = static_cast<TokenId>(kBaseSize + i);
    if (a < kNumSpecials || b < kNumSpecials || a >= limit || b >= limit)
      throw CorruptionError(cat("merge ", i, " references invalid ids ", a, ",", b));
    vocab.merges_.emplace_back(a, b);
    vocab.bytes_.push_back(vocab.bytes_[static_cast<size_t>(a)] +
                           vocab.bytes_[static_cast<size_t>(b)]);
  }
  std::string word;
  if (!(f >> word) || word != "specials")
    throw CorruptionError(cat("missing specials section in ", path));
  const std::pair<std::string, TokenId> expect[] = {
      {"pad", kPad}, {"bos", kBos}, {"eos", kEos}, {"img", kImg}};
  for (const auto& [name, id] : expect) {
    std::string n;
    TokenId v = -1;
    if (!(f >> n >> v) || n != name || v != id)
      throw CorruptionError(cat("bad specials entry in ", path, " (want ", name, " ", id, ")"));
  }
  return vocab;
}

void BpeVocab::rebuild_tables() {
  bytes_.assign(static_cast<size_t>(kBaseSize), std::string());
  for (int c = 0; c < 256; ++c)
    bytes_[static_cast<size_t>(kByteBase + c)] = std::string(1, static_cast<char>(c));
}

}  // namespace selfsyn
