// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "selfsyn/eval.hpp"
#include "selfsyn/rng.hpp"

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

// Byte-level vocab (260 ids) needs vocab_size >= 260.
ModelConfig toy_config(Index layers = 2, Index d = 32, Index heads = 2, Index ff = 64,
                       Index vocab = 260) {
  ModelConfig c;
  c.n_layers = layers;
  c.hidden_dim = d;
  c.intermediate_dim = ff;
  c.n_heads = heads;
  c.vocab_size = vocab;
  c.max_seq_len = 96;
  c.patch_size = 4;
  c.image_side = 16;  // 16 patches -> 4 image slots with group_factor 4
  c.vision_dim = 8;
  c.vision_layers = 1;
  c.vision_heads = 2;
  c.group_factor = 4;
  return c;
}

Image noise_image(Index side, std::uint64_t seed) {
  Rng rng(seed);
  Image img;
  img.width = side;
  img.height = side;
  img.rgb.resize(static_cast<size_t>(side * side * 3));
  for (auto& v : img.rgb) v = static_cast<float>(rng.uniform01());
  return img;
}

TokenSequence toy_tokens(Index len, std::uint64_t seed, TokenId lo = 4, TokenId hi = 259) {
  Rng rng(seed);
  TokenSequence s;
  for (Index j = 0; j < len; ++j) s.push_back(static_cast<TokenId>(rng.uniform_int(lo, hi)));
  return s;
}

// Independent scorer: run the forward pass once, then walk the logits rows
// with an explicit softmax (probabilities first, log second).
double oracle_log_prob(const ModelParams<float>& p, const TokenSequence& tokens,
                       const Tensor<float>* projected = nullptr) {
  TokenSequence inputs;
  inputs.push_back(BpeVocab::kBos);
  inputs.insert(inputs.end(), tokens.begin(), tokens.end() - 1);
  const auto logits = projected == nullptr
                          ? forward_lm(p, inputs)
                          : forward_multimodal_from_projection(p, *projected, inputs);
  double total = 0.0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    const Index row = static_cast<Index>(i);
    std::vector<double> probs(static_cast<size_t>(logits.dim(1)));
    double mx = -1e300;
    for (Index j = 0; j < logits.dim(1); ++j)
      mx = std::max(mx, static_cast<double>(logits(row, j)));
    double denom = 0.0;
    for (Index j = 0; j < logits.dim(1); ++j) {
      probs[static_cast<size_t>(j)] = std::exp(static_cast<double>(logits(row, j)) - mx);
      denom += probs[static_cast<size_t>(j)];
    }
    total += std::log(probs[static_cast<size_t>(tokens[i])] / denom);
  }
  return total;
}

}  // namespace

TEST_CASE("sequence_log_prob matches an explicit per-position softmax oracle") {
  auto p = init_params<float>(toy_config(), 31);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto tokens = toy_tokens(9, seed);
    const double got = sequence_log_prob(p, tokens);
    const double want = oracle_log_prob(p, tokens);
    CHECK(got == doctest::Approx(want).epsilon(1e-6));
    CHECK(got < 0.0);  // a proper log probability
  }
  // Image-conditioned path.
  const auto projected = project(p, image_to_grouped(p, noise_image(16, 7)));
  const auto tokens = toy_tokens(7, 4);
  CHECK(sequence_log_prob(p, tokens, &projected) ==
        doctest::Approx(oracle_log_prob(p, tokens, &projected)).epsilon(1e-6));
  // Conditioning changes the score for a random model.
  CHECK(sequence_log_prob(p, tokens, &projected) != sequence_log_prob(p, tokens));
}

TEST_CASE("single token under an all-zero output head scores ln(1/V)") {
  auto cfg = toy_config();
  cfg.tied_head = true;
  auto p = init_params<float>(cfg, 5);
  // Tied head: zeroing the embedding zeroes every logit, so the next-token
  // distribution is exactly uniform at each position.
  auto& embed = p.at("decoder.embed");
  std::fill(embed.values().begin(), embed.values().end(), 0.0f);
  const double want = -std::log(static_cast<double>(cfg.vocab_size));
  CHECK(sequence_log_prob(p, {42}) == doctest::Approx(want).epsilon(1e-12));
  // k tokens score k * ln(1/V), and equal-length sequences tie exactly.
  CHECK(sequence_log_prob(p, {10, 20, 30}) == doctest::Approx(3 * want).epsilon(1e-12));
  CHECK(sequence_log_prob(p, {11, 21, 31}) == sequence_log_prob(p, {10, 20, 30}));
}

TEST_CASE("log probability is additive over a prefix/continuation split") {
  auto p = init_params<float>(toy_config(), 77);
  const auto a = toy_tokens(6, 100);
  const auto b = toy_tokens(5, 200);
  TokenSequence ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const double whole = sequence_log_prob(p, ab);
  const double parts = sequence_log_prob(p, a) + sequence_log_prob_given(p, a, b);
  // Causal attention makes the prefix rows identical across the two forward
  // passes, so the split only re-associates the double-precision sum.
  CHECK(whole == doctest::Approx(parts).epsilon(1e-9));

  const auto projected = project(p, image_to_grouped(p, noise_image(16, 9)));
  const double whole_img = sequence_log_prob(p, ab, &projected);
  const double parts_img =
      sequence_log_prob(p, a, &projected) + sequence_log_prob_given(p, a, b, &projected);
  CHECK(whole_img == doctest::Approx(parts_img).epsilon(1e-9));
}

TEST_CASE("sequence_log_prob input guards") {
  auto cfg = toy_config();
  auto p = init_params<float>(cfg, 3);
  CHECK_THROWS_AS(sequence_log_prob(p, {}), ContractError);
  CHECK_THROWS_AS(sequence_log_prob(p, {-1}), ContractError);
  CHECK_THROWS_AS(sequence_log_prob(p, {static_cast<TokenId>(cfg.vocab_size)}), ContractError);
  // BOS + (n-1) inputs hit the context limit once n exceeds max_seq_len.
  CHECK_NOTHROW(sequence_log_prob(p, toy_tokens(cfg.max_seq_len, 1)));
  CHECK_THROWS_AS(sequence_log_prob(p, toy_tokens(cfg.max_seq_len + 1, 1)), LengthError);
  // Image slots shrink the budget by n_image_slots.
  const auto projected = project(p, image_to_grouped(p, noise_image(16, 2)));
  const Index slots = cfg.n_image_slots();
  CHECK_NOTHROW(sequence_log_prob(p, toy_tokens(cfg.max_seq_len - slots, 1), &projected));
  CHECK_THROWS_AS(sequence_log_prob(p, toy_tokens(cfg.max_seq_len - slots + 1, 1), &projected),
                  LengthError);
}

TEST_CASE("scoring leaves the model untouched") {
  auto p = init_params<float>(toy_config(), 11);
  const std::string before = p.digest();
  (void)sequence_log_prob(p, toy_tokens(8, 1));
  const auto projected = project(p, image_to_grouped(p, noise_image(16, 3)));
  (void)sequence_log_prob(p, toy_tokens(8, 2), &projected);
  CHECK(p.digest() == before);
}

TEST_CASE("minimal pairs: reversal symmetry and category breakdown") {
  auto p = init_params<float>(toy_config(), 13);
  BpeVocab vocab;
  std::vector<MinimalPair> pairs;
  Rng rng(99);
  const std::vector<std::string> words = {"alpha", "bravo", "carol", "delta",
                                          "echos", "fable", "grain", "house"};
  for (size_t i = 0; i + 1 < words.size(); i += 2) {
    MinimalPair mp;
    mp.context = "the word is ";
    mp.good = words[i];
    mp.bad = words[i + 1];
    mp.category = i < 4 ? "first-half" : "second-half";
    pairs.push_back(mp);
  }
  const auto scores = minimal_pair_accuracy(p, vocab, pairs);
  CHECK(scores.items == 4);
  // Per-item credit is 0 or 1 here (exact float ties between different word
  // pairs do not occur for a random model), so reversing every pair
  // complements the accuracy.
  auto reversed = pairs;
  for (auto& mp : reversed) std::swap(mp.good, mp.bad);
  const auto rev = minimal_pair_accuracy(p, vocab, reversed);
  CHECK(scores.accuracy + rev.accuracy == doctest::Approx(1.0).epsilon(1e-12));

  // Per-category means recombine to the overall mean.
  REQUIRE(scores.by_category.size() == 2);
  double weighted = 0.0;
  Index total = 0;
  for (const auto& [name, c] : scores.by_category) {
    weighted += c.accuracy * static_cast<double>(c.items);
    total += c.items;
    CHECK(c.items == 2);
  }
  CHECK(total == scores.items);
  CHECK(weighted / static_cast<double>(total) == doctest::Approx(scores.accuracy));

  // Order of presentation cannot matter.
  auto shuffled = pairs;
  rng.shuffle(shuffled);
  CHECK(minimal_pair_accuracy(p, vocab, shuffled).accuracy == doctest::Approx(scores.accuracy));

  // Uncategorized items land in a shared bucket.
  auto blank = pairs;
  for (auto& mp : blank) mp.category.clear();
  const auto uncat = minimal_pair_accuracy(p, vocab, blank);
  REQUIRE(uncat.by_category.count("uncategorized") == 1);
  CHECK(uncat.by_category.at("uncategorized").items == 4);
}

TEST_CASE("minimal pairs: an exact tie scores half credit") {
  auto cfg = toy_config();
  cfg.tied_head = true;
  auto p = init_params<float>(cfg, 5);
  auto& embed = p.at("decoder.embed");
  std::fill(embed.values().begin(), embed.values().end(), 0.0f);  // uniform model
  BpeVocab vocab;
  // Same byte length -> same token count -> identical score under uniformity.
  MinimalPair tie{"", "ax", "by", ""};
  MinimalPair longer{"", "a", "abc", ""};  // shorter sequence wins under uniformity
  const auto scores = minimal_pair_accuracy(p, vocab, {tie, longer});
  CHECK(scores.accuracy == doctest::Approx((0.5 + 1.0) / 2.0));
  CHECK_THROWS_AS(minimal_pair_accuracy(p, vocab, {{"", "same", "same", ""}}), ConfigError);
  CHECK_THROWS_AS(minimal_pair_accuracy(p, vocab, {}), ConfigError);
}

TEST_CASE("matching aggregation on hand-built score tables") {
  // Perfect item: matched pairs dominate both comparisons.
  MatchItemScores perfect{/*s00=*/-1.0, /*s01=*/-5.0, /*s10=*/-6.0, /*s11=*/-2.0};
  // Text-correct only: caption 0 prefers image 1 (s00 < s01).
  MatchItemScores text_only{/*s00=*/-2.0, /*s01=*/-1.5, /*s10=*/-6.0, /*s11=*/-1.0};
  // Image-correct only: image 1 prefers caption 0 (s11 < s01).
  MatchItemScores image_only{/*s00=*/-1.0, /*s01=*/-5.0, /*s10=*/-8.0, /*s11=*/-6.0};
  {
    const auto m = matching_from_scores({perfect});
    CHECK(m.text == 1.0);
    CHECK(m.image == 1.0);
    CHECK(m.group == 1.0);
    CHECK(m.items == 1);
  }
  {
    const auto m = matching_from_scores({text_only});
    CHECK(m.text == 1.0);
    CHECK(m.image == 0.0);
    CHECK(m.group == 0.0);
  }
  {
    const auto m = matching_from_scores({image_only});
    CHECK(m.text == 0.0);
    CHECK(m.image == 1.0);
    CHECK(m.group == 0.0);
  }
  {
    const auto m = matching_from_scores({perfect, text_only, image_only});
    CHECK(m.text == doctest::Approx(2.0 / 3.0));
    CHECK(m.image == doctest::Approx(2.0 / 3.0));
    CHECK(m.group == doctest::Approx(1.0 / 3.0));
  }
  // A tied comparison never counts as correct.
  MatchItemScores tied{/*s00=*/-1.0, /*s01=*/-5.0, /*s10=*/-1.0, /*s11=*/-0.5};  // s00 == s10
  const auto t = matching_from_scores({tied});
  CHECK(t.text == 0.0);
  CHECK(t.image == 1.0);
  CHECK(t.group == 0.0);
  CHECK_THROWS_AS(matching_from_scores({}), ConfigError);
}

TEST_CASE("matching: group success implies text and image success") {
  Rng rng(424242);
  std::vector<MatchItemScores> scores;
  Index text_n = 0, image_n = 0, both_n = 0;
  for (int i = 0; i < 500; ++i) {
    MatchItemScores s{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const bool t = s.s00 > s.s10 && s.s11 > s.s01;
    const bool v = s.s00 > s.s01 && s.s11 > s.s10;
    text_n += t;
    image_n += v;
    both_n += t && v;
    scores.push_back(s);
  }
  const auto m = matching_from_scores(scores);
  CHECK(m.text == doctest::Approx(text_n / 500.0).epsilon(1e-12));
  CHECK(m.image == doctest::Approx(image_n / 500.0).epsilon(1e-12));
  CHECK(m.group == doctest::Approx(both_n / 500.0).epsilon(1e-12));
  CHECK(m.group <= std::min(m.text, m.image));
}

TEST_CASE("matching under random scores approaches the combinatorial baseline") {
  // With four i.i.d. continuous scores, each pairwise comparison is a fair
  // coin, so text and image scores sit at 1/4. The group score requires the
  // two matched scores to beat both mismatched ones, i.e. {s00, s11} must be
  // the top two of four exchangeable values: 2!*2!/4! = 4/24 = 1/6, not
  // (1/4)*(1/2) -- the text and image events share randomness and are
  // positively correlated.
  const Index n = 1000;
  Rng rng(20260825);
  std::vector<MatchItemScores> scores;
  for (Index i = 0; i < n; ++i)
    scores.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
  const auto m = matching_from_scores(scores);

  const double sigma_quarter = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
  CHECK(std::abs(m.text - 0.25) < 3 * sigma_quarter);
  CHECK(std::abs(m.image - 0.25) < 3 * sigma_quarter);

  const double p_group = 1.0 / 6.0;
  const double sigma_group = std::sqrt(p_group * (1 - p_group) / static_cast<double>(n));
  CHECK(std::abs(m.group - p_group) < 3 * sigma_group);
  // The naive independence guess of 1/8 is ruled out by the same margin.
  CHECK(std::abs(m.group - 0.125) > 3 * sigma_group);
}

TEST_CASE("matching_scores end to end equals the composed scorer") {
  auto p = init_params<float>(toy_config(), 21);
  BpeVocab vocab;
  std::vector<MatchItem> items;
  for (int i = 0; i < 3; ++i) {
    MatchItem it;
    it.id = "item-" + std::to_string(i);
    it.image0 = noise_image(16, 100 + static_cast<std::uint64_t>(i));
    it.image1 = noise_image(16, 200 + static_cast<std::uint64_t>(i));
    it.caption0 = "a red square sits alone " + std::to_string(i);
    it.caption1 = "the blue circle floats " + std::to_string(i);
    items.push_back(it);
  }
  const std::string before = p.digest();
  const auto got = matching_scores(p, vocab, items);
  CHECK(p.digest() == before);
  CHECK(got.items == 3);

  std::vector<MatchItemScores> manual;
  for (const auto& it : items) {
    const auto proj0 = project(p, image_to_grouped(p, it.image0));
    const auto proj1 = project(p, image_to_grouped(p, it.image1));
    MatchItemScores s;
    s.s00 = sequence_log_prob(p, vocab.encode(it.caption0), &proj0);
    s.s01 = sequence_log_prob(p, vocab.encode(it.caption0), &proj1);
    s.s10 = sequence_log_prob(p, vocab.encode(it.caption1), &proj0);
    s.s11 = sequence_log_prob(p, vocab.encode(it.caption1), &proj1);
    manual.push_back(s);
  }
  const auto want = matching_from_scores(manual);
  CHECK(got.text == want.text);
  CHECK(got.image == want.image);
  CHECK(got.group == want.group);

  auto dup = items;
  dup[0].caption1 = dup[0].caption0;
  CHECK_THROWS_AS(matching_scores(p, vocab, dup), ConfigError);
}

TEST_CASE("ranking picks the argmax candidate, lowest index on ties") {
  auto p = init_params<float>(toy_config(), 17);
  BpeVocab vocab;
  RankItem item;
  item.id = "q0";
  item.image = noise_image(16, 5);
  item.question = "what shape is shown? ";
  item.candidates = {"square", "circle", "triangle"};

  // Find the model's favorite by scoring manually, then check both gold
  // placements.
  const auto projected = project(p, image_to_grouped(p, item.image));
  Index fav = 0;
  double best = -1e300;
  for (Index c = 0; c < 3; ++c) {
    const double s = sequence_log_prob(
        p, vocab.encode(item.question + item.candidates[static_cast<size_t>(c)]), &projected);
    if (s > best) {
      best = s;
      fav = c;
    }
  }
  item.gold = fav;
  CHECK(rank_accuracy(p, vocab, {item}) == 1.0);
  item.gold = (fav + 1) % 3;
  CHECK(rank_accuracy(p, vocab, {item}) == 0.0);

  // Identical candidates tie exactly; the tie goes to index 0.
  RankItem tie = item;
  tie.candidates = {"same text", "same text"};
  tie.gold = 0;
  CHECK(rank_accuracy(p, vocab, {tie}) == 1.0);
  tie.gold = 1;
  CHECK(rank_accuracy(p, vocab, {tie}) == 0.0);

  RankItem bad = item;
  bad.candidates = {"only one"};
  bad.gold = 0;
  CHECK_THROWS_AS(rank_accuracy(p, vocab, {bad}), ConfigError);
  RankItem oob = item;
  oob.gold = 3;
  CHECK_THROWS_AS(rank_accuracy(p, vocab, {oob}), ConfigError);
  CHECK_THROWS_AS(rank_accuracy(p, vocab, {}), ConfigError);
}

TEST_CASE("dataset loaders parse JSONL and reject malformed items") {
  TempDir tmp("selfsyn-eval-loaders");
  write_file(tmp.file("pairs.jsonl"),
             R"({"good": "dogs bark", "bad": "dogs barks", "category": "agreement"})"
             "\n\n"
             R"({"good": "one cat", "bad": "one cats", "context": "look: "})"
             "\n");
  const auto pairs = load_minimal_pairs(tmp.file("pairs.jsonl"));
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].good == "dogs bark");
  CHECK(pairs[0].category == "agreement");
  CHECK(pairs[0].context.empty());
  CHECK(pairs[1].context == "look: ");
  CHECK(pairs[1].category.empty());

  write_file(tmp.file("dup.jsonl"), R"({"good": "x", "bad": "x"})" "\n");
  CHECK_THROWS_AS(load_minimal_pairs(tmp.file("dup.jsonl")), CorruptionError);
  write_file(tmp.file("missing.jsonl"), R"({"good": "x"})" "\n");
  CHECK_THROWS_AS(load_minimal_pairs(tmp.file("missing.jsonl")), CorruptionError);
  write_file(tmp.file("mangled.jsonl"), "{not json\n");
  CHECK_THROWS_AS(load_minimal_pairs(tmp.file("mangled.jsonl")), CorruptionError);
  CHECK_THROWS_AS(load_minimal_pairs(tmp.file("nope.jsonl")), IoError);

  // Matching and ranking datasets carry images next to the file.
  encode_ppm(noise_image(16, 1), tmp.file("a.ppm"));
  encode_ppm(noise_image(16, 2), tmp.file("b.ppm"));
  write_file(tmp.file("match.jsonl"),
             R"({"id": "m0", "image0": "a.ppm", "image1": "b.ppm",)"
             R"( "caption0": "left", "caption1": "right"})"
             "\n");
  const auto match = load_match_items(tmp.file("match.jsonl"), 16);
  REQUIRE(match.size() == 1);
  CHECK(match[0].id == "m0");
  CHECK(match[0].image0.width == 16);
  CHECK(match[0].caption1 == "right");

  write_file(tmp.file("match-dup.jsonl"),
             R"({"image0": "a.ppm", "image1": "b.ppm", "caption0": "x", "caption1": "x"})"
             "\n");
  CHECK_THROWS_AS(load_match_items(tmp.file("match-dup.jsonl"), 16), CorruptionError);
  write_file(tmp.file("match-gone.jsonl"),
             R"({"image0": "zz.ppm", "image1": "b.ppm", "caption0": "x", "caption1": "y"})"
             "\n");
  CHECK_THROWS_AS(load_match_items(tmp.file("match-gone.jsonl"), 16), IoError);

  write_file(tmp.file("rank.jsonl"),
             R"({"image": "a.ppm", "question": "color? ",)"
             R"( "candidates": ["red", "blue"], "gold": 1})"
             "\n");
  const auto rank = load_rank_items(tmp.file("rank.jsonl"), 16);
  REQUIRE(rank.size() == 1);
  CHECK(rank[0].gold == 1);
  CHECK(rank[0].candidates.size() == 2);

  write_file(tmp.file("rank-oob.jsonl"),
             R"({"image": "a.ppm", "question": "q", "candidates": ["a", "b"], "gold": 2})"
             "\n");
  CHECK_THROWS_AS(load_rank_items(tmp.file("rank-oob.jsonl"), 16), CorruptionError);
  write_file(tmp.file("rank-short.jsonl"),
             R"({"image": "a.ppm", "question": "q", "candidates": ["a"], "gold": 0})"
             "\n");
  CHECK_THROWS_AS(load_rank_items(tmp.file("rank-short.jsonl"), 16), CorruptionError);
}

TEST_CASE("run_suite produces a structured report and survives absent datasets") {
  TempDir tmp("selfsyn-eval-suite");
  auto p = init_params<float>(toy_config(), 29);
  BpeVocab vocab;

  write_file(tmp.file("pairs.jsonl"),
             R"({"good": "aa bb", "bad": "aa bbb", "category": "len"})"
             "\n"
             R"({"good": "cc dd", "bad": "cc ddd", "category": "len"})"
             "\n");
  encode_ppm(noise_image(16, 1), tmp.file("a.ppm"));
  encode_ppm(noise_image(16, 2), tmp.file("b.ppm"));
  write_file(tmp.file("match.jsonl"),
             R"({"image0": "a.ppm", "image1": "b.ppm",)"
             R"( "caption0": "one thing", "caption1": "another thing"})"
             "\n");
  write_file(tmp.file("rank.jsonl"),
             R"({"image": "a.ppm", "question": "pick: ",)"
             R"( "candidates": ["first", "second"], "gold": 0})"
             "\n");
  // Tiny classification set: two "classes" keyed by distinct tokens.
  std::string cls;
  for (int i = 0; i < 6; ++i) {
    cls += R"({"text": "red red red", "label": 0})" "\n";
    cls += R"({"text": "blue blue blue", "label": 1})" "\n";
  }
  write_file(tmp.file("cls.jsonl"), cls);

  write_file(tmp.file("suite.json"), R"({
    "tasks": [
      {"name": "grammar", "type": "minimal_pairs", "path": "pairs.jsonl"},
      {"name": "match", "type": "matching", "path": "match.jsonl"},
      {"name": "vqa", "type": "ranking", "path": "rank.jsonl"},
      {"name": "probe", "type": "lora_classification", "path": "cls.jsonl",
       "steps": 5, "rank": 2, "batch_size": 4, "seed": 7},
      {"name": "ghost", "type": "minimal_pairs", "path": "not-there.jsonl"},
      {"name": "weird", "type": "frisbee", "path": "pairs.jsonl"}
    ]
  })");

  const std::string before = p.digest();
  const auto report_text = run_suite(p, vocab, tmp.file("suite.json"));
  CHECK(p.digest() == before);

  const auto report = nlohmann::json::parse(report_text);
  CHECK(report["schema"] == "evalreport-v1");
  CHECK(report["model_digest"] == p.digest());
  CHECK(report["config"]["tasks"].size() == 6);
  REQUIRE(report["results"].size() == 6);

  const auto& grammar = report["results"][0];
  CHECK(grammar["task"] == "grammar");
  CHECK(grammar["items"] == 2);
  CHECK(grammar["by_category"].contains("len"));
  CHECK(grammar["accuracy"].is_number());

  const auto& match = report["results"][1];
  for (const char* key : {"text", "image", "group"}) {
    CHECK(match[key].is_number());
    CHECK(match[key].get<double>() >= 0.0);
    CHECK(match[key].get<double>() <= 1.0);
  }
  CHECK(match["items"] == 1);

  CHECK(report["results"][2]["accuracy"].is_number());
  CHECK(report["results"][3]["train_accuracy"].is_number());
  CHECK(report["results"][3]["classes"] == 2);
  CHECK(report["results"][3]["items"] == 12);

  const auto& ghost = report["results"][4];
  CHECK(ghost["task"] == "ghost");
  CHECK(ghost["error"].get<std::string>().find("absent") != std::string::npos);
  CHECK_FALSE(ghost.contains("accuracy"));

  CHECK(report["results"][5]["error"].get<std::string>().find("frisbee") != std::string::npos);

  // Re-running yields the identical report (pure evaluation, fixed seeds).
  CHECK(run_suite(p, vocab, tmp.file("suite.json")) == report_text);

  // Empty task list is a valid, empty report.
  write_file(tmp.file("empty.json"), R"({"tasks": []})");
  const auto empty = nlohmann::json::parse(run_suite(p, vocab, tmp.file("empty.json")));
  CHECK(empty["results"].empty());

  CHECK_THROWS_AS(run_suite(p, vocab, tmp.file("void.json")), IoError);
  write_file(tmp.file("broken.json"), "{");
  CHECK_THROWS_AS(run_suite(p, vocab, tmp.file("broken.json")), CorruptionError);
  write_file(tmp.file("typeless.json"), R"({"no_tasks": 1})");
  CHECK_THROWS_AS(run_suite(p, vocab, tmp.file("typeless.json")), ConfigError);
}
