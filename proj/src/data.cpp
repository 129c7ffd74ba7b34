// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "json.hpp"

namespace selfsyn {

namespace {

inline bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

}  // namespace

std::string SkipReport::to_json() const {
  nlohmann::ordered_json j;
  j["loaded"] = loaded;
  j["skipped"] = skipped;
  j["reasons"] = reasons;
  return j.dump();
}

Index count_words(std::string_view text) {
  Index n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

Index corpus_word_count(const TextCorpus& corpus) {
  Index n = 0;
  for (const auto& d : corpus.docs) n += count_words(d.text);
  return n;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  size_t start = 0;
  const size_t n = text.size();
  auto emit = [&](size_t end) {  // [start, end)
    size_t b = start;
    while (b < end && is_space(static_cast<unsigned char>(text[b]))) ++b;
    size_t e = end;
    while (e > b && is_space(static_cast<unsigned char>(text[e - 1]))) --e;
    if (e > b) out.emplace_back(text.substr(b, e - b));
    start = end;
  };
  for (size_t i = 0; i < n; ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == n || is_space(static_cast<unsigned char>(text[i + 1])))) {
      emit(i + 1);
    }
  }
  emit(n);  // trailing material without a terminator still counts
  return out;
}

std::vector<TokenSequence> segment_document(const std::string& text, const BpeVocab& vocab,
                                            Index max_tokens, Index min_tokens) {
  std::vector<TokenSequence> out;
  for (const auto& sentence : split_sentences(text)) {
    auto ids = vocab.encode(sentence);
    if (static_cast<Index>(ids.size()) > max_tokens) ids.resize(static_cast<size_t>(max_tokens));
    if (static_cast<Index>(ids.size()) >= min_tokens) out.push_back(std::move(ids));
  }
  return out;
}

TextCorpus load_text_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot open corpus: ", path));
  TextCorpus corpus;
  bool synthetic = false;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  Index lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError(cat(path, ":", lineno, ": malformed JSON line (", e.what(), ")"));
    }
    if (!j.is_object()) throw CorruptionError(cat(path, ":", lineno, ": expected a JSON object"));
    if (j.contains("meta")) {
      if (lineno != 1)
        throw CorruptionError(cat(path, ":", lineno, ": meta line only allowed first"));
      corpus.meta_json = j["meta"].dump();
      synthetic = j["meta"].value("provenance", "") == "synthetic";
      continue;
    }
    if (!j.contains("text") || !j["text"].is_string())
      throw CorruptionError(cat(path, ":", lineno, ": missing string field 'text'"));
    Document doc;
    doc.text = j["text"].get<std::string>();
    doc.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                     : cat("line-", lineno);
    doc.synthetic = synthetic;
    if (!seen_ids.insert(doc.id).second)
      throw CorruptionError(cat(path, ":", lineno, ": duplicate document id '", doc.id, "'"));
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

void save_text_corpus(const TextCorpus& corpus, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot write corpus: ", path));
  if (!corpus.meta_json.empty()) {
    nlohmann::ordered_json header;
    header["meta"] = nlohmann::json::parse(corpus.meta_json);
    f << header.dump() << "\n";
  }
  for (const auto& d : corpus.docs) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["text"] = d.text;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError(cat("short write to corpus: ", path));
}

std::vector<CaptionPair> load_caption_corpus(const std::string& manifest_path, Index image_side,
                                             SkipReport* report) {
  std::ifstream f(manifest_path, std::ios::binary);
  if (!f) throw IoError(cat("cannot open manifest: ", manifest_path));
  const auto base = std::filesystem::path(manifest_path).parent_path();

  SkipReport local;
  std::vector<CaptionPair> pairs;
  std::string line;
  Index lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    auto skip = [&](const std::string& why) {
      local.skipped += 1;
      local.reasons.push_back(cat(manifest_path, ":", lineno, ": ", why));
    };
    if (tab == std::string::npos) {
      skip("no tab separator");
      continue;
    }
    CaptionPair p;
    p.image_path = line.substr(0, tab);
    p.caption = line.substr(tab + 1);
    if (p.caption.empty()) {
      skip("empty caption");
      continue;
    }
    std::filesystem::path img_path(p.image_path);
    if (img_path.is_relative()) img_path = base / img_path;
    try {
      p.image = load_image(img_path.string(), image_side);
    } catch (const Error& e) {
      skip(e.what());
      continue;
    }
    p.source = "manifest";
    local.loaded += 1;
    pairs.push_back(std::move(p));
  }
  if (report) *report = std::move(local);
  return pairs;
}

TextCorpus mix_corpora(const TextCorpus& real, const TextCorpus& synth, std::uint64_t seed) {
  TextCorpus mixed;
  mixed.docs.reserve(real.docs.size() + synth.docs.size());
  mixed.docs.insert(mixed.docs.end(), real.docs.begin(), real.docs.end());
  mixed.docs.insert(mixed.docs.end(), synth.docs.begin(), synth.docs.end());
  Rng rng(seed);
  rng.shuffle(mixed.docs);
  return mixed;
}

std::pair<TextCorpus, TextCorpus> split_validation(const TextCorpus& corpus, double fraction) {
  const Index n = corpus.size();
  if (n < 2)
    throw ConfigError(cat("split_validation: need at least 2 documents, have ", n));
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError(cat("split_validation: fraction ", fraction, " outside (0,1)"));
  Index n_val = static_cast<Index>(std::floor(static_cast<double>(n) * fraction));
  n_val = std::clamp<Index>(n_val, 1, n - 1);
  TextCorpus train, val;
  train.meta_json = corpus.meta_json;
  val.meta_json = corpus.meta_json;
  train.docs.assign(corpus.docs.begin(), corpus.docs.end() - n_val);
  val.docs.assign(corpus.docs.end() - n_val, corpus.docs.end());
  return {std::move(train), std::move(val)};
}

namespace {

std::vector<Batch> batch_rows(const std::vector<std::vector<TokenId>>& rows,
                              const std::vector<std::vector<std::uint8_t>>& masks,
                              const std::vector<Index>& image_ids, Index batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError(cat("batch_size must be >= 1, got ", batch_size));
  std::vector<Index> order(rows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  rng.shuffle(order);

  std::vector<Batch> out;
  for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), at + static_cast<size_t>(batch_size));
    Batch b;
    b.rows = static_cast<Index>(end - at);
    Index longest = 0;
    for (size_t i = at; i < end; ++i)
      longest = std::max(longest, static_cast<Index>(rows[static_cast<size_t>(order[i])].size()));
    b.cols = longest;
    b.tokens.assign(static_cast<size_t>(b.rows * b.cols), BpeVocab::kPad);
    b.mask.assign(static_cast<size_t>(b.rows * b.cols), 0);
    if (!image_ids.empty()) b.image_ids.resize(static_cast<size_t>(b.rows));
    for (size_t i = at; i < end; ++i) {
      const auto src = static_cast<size_t>(order[i]);
      const auto r = static_cast<Index>(i - at);
      const auto& toks = rows[src];
      for (size_t c = 0; c < toks.size(); ++c) {
        b.tokens[static_cast<size_t>(r * b.cols) + c] = toks[c];
        b.mask[static_cast<size_t>(r * b.cols) + c] = masks[src][c];
      }
      if (!image_ids.empty()) b.image_ids[static_cast<size_t>(r)] = image_ids[src];
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

std::vector<Batch> make_batches(const std::vector<TokenSequence>& sequences, Index batch_size,
                                Rng& rng) {
  std::vector<std::vector<TokenId>> rows(sequences.size());
  std::vector<std::vector<std::uint8_t>> masks(sequences.size());
  for (size_t i = 0; i < sequences.size(); ++i) {
    auto& r = rows[i];
    r.reserve(sequences[i].size() + 2);
    r.push_back(BpeVocab::kBos);
    r.insert(r.end(), sequences[i].begin(), sequences[i].end());
    r.push_back(BpeVocab::kEos);
    masks[i].assign(r.size(), 1);
    masks[i][0] = 0;  // BOS conditions, it is never predicted
  }
  return batch_rows(rows, masks, {}, batch_size, rng);
}

std::vector<Batch> make_multimodal_batches(
    const std::vector<std::pair<Index, TokenSequence>>& items, Index n_image_slots,
    Index batch_size, Rng& rng) {
  if (n_image_slots < 1)
    throw ConfigError(cat("n_image_slots must be >= 1, got ", n_image_slots));
  std::vector<std::vector<TokenId>> rows(items.size());
  std::vector<std::vector<std::uint8_t>> masks(items.size());
  std::vector<Index> image_ids(items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    const auto& [img, seq] = items[i];
    auto& r = rows[i];
    r.assign(static_cast<size_t>(n_image_slots), BpeVocab::kImg);
    r.push_back(BpeVocab::kBos);
    r.insert(r.end(), seq.begin(), seq.end());
    r.push_back(BpeVocab::kEos);
    masks[i].assign(r.size(), 0);
    for (size_t c = static_cast<size_t>(n_image_slots) + 1; c < r.size(); ++c) masks[i][c] = 1;
    image_ids[i] = img;
  }
  return batch_rows(rows, masks, image_ids, batch_size, rng);
}

}  // namespace selfsyn
