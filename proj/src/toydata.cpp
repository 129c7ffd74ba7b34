// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/toydata.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "json.hpp"
#include "selfsyn/data.hpp"
#include "selfsyn/image.hpp"
#include "selfsyn/rng.hpp"

namespace selfsyn {
namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kColors = {"red", "blue", "green", "yellow", "purple", "orange"};
const std::vector<std::string> kShapes = {"square", "circle", "triangle", "diamond"};
const std::vector<std::string> kPlaces = {"above", "beside", "under", "near"};
const std::vector<std::string> kVerbs = {"sits", "rests", "floats", "stands"};

struct Palette {
  float r, g, b;
};

Palette color_rgb(Index c) {
  switch (c) {
    case 0: return {0.85f, 0.15f, 0.15f};  // red
    case 1: return {0.15f, 0.25f, 0.85f};  // blue
    case 2: return {0.15f, 0.70f, 0.25f};  // green
    case 3: return {0.90f, 0.85f, 0.20f};  // yellow
    case 4: return {0.60f, 0.20f, 0.75f};  // purple
    default: return {0.95f, 0.55f, 0.15f};  // orange
  }
}

template <class R>
const std::string& pick(const std::vector<std::string>& v, R& rng) {
  return v[static_cast<size_t>(rng.uniform_int(0, static_cast<Index>(v.size()) - 1))];
}

std::string sentence(Rng& rng) {
  const std::string& c1 = pick(kColors, rng);
  const std::string& s1 = pick(kShapes, rng);
  const std::string& v = pick(kVerbs, rng);
  const std::string& pl = pick(kPlaces, rng);
  const std::string& c2 = pick(kColors, rng);
  const std::string& s2 = pick(kShapes, rng);
  switch (rng.uniform_int(0, 3)) {
    case 0: return cat("the ", c1, " ", s1, " ", v, " ", pl, " a ", c2, " ", s2, ".");
    case 1: return cat("a ", c1, " ", s1, " and a ", c2, " ", s2, " share the scene.");
    case 2: return cat("every ", s1, " in the picture is ", c1, " and ", v, " quietly.");
    default: return cat("one small ", c1, " ", s1, " ", v, " ", pl, " the ", c2, " ", s2, ".");
  }
}

struct Scene {
  Index shape;  // index into kShapes
  Index color;  // index into kColors
  Index bg;     // background color, != color
};

Scene draw_scene(Rng& rng) {
  Scene s;
  s.shape = rng.uniform_int(0, static_cast<Index>(kShapes.size()) - 1);
  s.color = rng.uniform_int(0, static_cast<Index>(kColors.size()) - 1);
  do {
    s.bg = rng.uniform_int(0, static_cast<Index>(kColors.size()) - 1);
  } while (s.bg == s.color);
  return s;
}

std::string scene_caption(const Scene& s) {
  return cat("a ", kColors[static_cast<size_t>(s.color)], " ",
             kShapes[static_cast<size_t>(s.shape)], " on a ",
             kColors[static_cast<size_t>(s.bg)], " background.");
}

Image render_scene(const Scene& s, Index side, Rng& rng) {
  Image img;
  img.width = side;
  img.height = side;
  img.rgb.assign(static_cast<size_t>(side * side * 3), 0.0f);
  const Palette bg = color_rgb(s.bg);
  const Palette fg = color_rgb(s.color);
  // Jittered center and size keep images distinct without moving the shape
  // off-canvas.
  const double cx = side * (0.42 + 0.16 * rng.uniform01());
  const double cy = side * (0.42 + 0.16 * rng.uniform01());
  const double r = side * (0.18 + 0.10 * rng.uniform01());
  for (Index y = 0; y < side; ++y)
    for (Index x = 0; x < side; ++x) {
      const double dx = x - cx, dy = y - cy;
      bool inside = false;
      switch (s.shape) {
        case 0: inside = std::abs(dx) <= r && std::abs(dy) <= r; break;            // square
        case 1: inside = dx * dx + dy * dy <= r * r; break;                        // circle
        case 2: inside = dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2; break;  // triangle
        default: inside = std::abs(dx) + std::abs(dy) <= r; break;                 // diamond
      }
      const Palette& p = inside ? fg : bg;
      img.at(y, x, 0) = p.r;
      img.at(y, x, 1) = p.g;
      img.at(y, x, 2) = p.b;
    }
  return img;
}

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(cat("toy data: cannot write ", path.string()));
  f << body;
  if (!f) throw IoError(cat("toy data: short write to ", path.string()));
}

std::string zero_pad(Index n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03lld", static_cast<long long>(n));
  return buf;
}

}  // namespace

std::string make_toy_data(const std::string& dir, const ToyDataOptions& opts) {
  if (opts.documents < 4 || opts.caption_images < 4 || opts.synthesis_images < 1 ||
      opts.eval_items < 2 || opts.image_side < 16)
    throw ConfigError("toy data: need at least 4 documents, 4 caption images, 1 synthesis "
                      "image, 2 eval items, and image_side >= 16");
  const fs::path root(dir);
  const fs::path config_path = root / "config.json";
  if (fs::exists(config_path))
    throw IoError(cat("toy data: ", config_path.string(), " already exists; refusing to clobber"));
  fs::create_directories(root / "images");
  fs::create_directories(root / "eval");

  // --- text corpus ---------------------------------------------------------
  {
    TextCorpus corpus;
    for (Index d = 0; d < opts.documents; ++d) {
      Rng rng(child_seed(opts.seed, 1000 + static_cast<std::uint64_t>(d)));
      std::string text;
      const Index sentences = rng.uniform_int(3, 5);
      for (Index s = 0; s < sentences; ++s) {
        if (s) text += " ";
        text += sentence(rng);
      }
      corpus.docs.push_back({cat("toy-", zero_pad(d)), text, false});
    }
    save_text_corpus(corpus, (root / "text.jsonl").string());
  }

  // --- caption images (training) and instruction pairs ---------------------
  std::vector<Scene> cap_scenes;
  {
    std::string captions, instructions;
    for (Index i = 0; i < opts.caption_images; ++i) {
      Rng rng(child_seed(opts.seed, 2000 + static_cast<std::uint64_t>(i)));
      const Scene s = draw_scene(rng);
      cap_scenes.push_back(s);
      const std::string rel = cat("images/cap-", zero_pad(i), ".ppm");
      encode_ppm(render_scene(s, opts.image_side, rng), (root / rel).string());
      captions += cat(rel, "\t", scene_caption(s), "\n");
      instructions += cat(rel, "\tdescribe the picture: ", scene_caption(s), "\n");
    }
    write_file(root / "captions.tsv", captions);
    write_file(root / "instructions.tsv", instructions);
  }

  // --- synthesis images (disjoint from the caption set) --------------------
  {
    std::string manifest;
    for (Index i = 0; i < opts.synthesis_images; ++i) {
      Rng rng(child_seed(opts.seed, 3000 + static_cast<std::uint64_t>(i)));
      const Scene s = draw_scene(rng);
      const std::string rel = cat("images/syn-", zero_pad(i), ".ppm");
      encode_ppm(render_scene(s, opts.image_side, rng), (root / rel).string());
      manifest += rel + "\n";
    }
    write_file(root / "synthesis-images.txt", manifest);
  }

  // --- evaluation datasets --------------------------------------------------
  {
    Rng rng(child_seed(opts.seed, 4000));
    std::string pairs;
    for (Index i = 0; i < opts.eval_items; ++i) {
      const std::string& color = pick(kColors, rng);
      const std::string& shape = pick(kShapes, rng);
      nlohmann::ordered_json j;
      if (i % 2 == 0) {
        j["good"] = cat("the ", shape, "s are ", color, ".");
        j["bad"] = cat("the ", shape, "s is ", color, ".");
        j["category"] = "agreement";
      } else {
        j["good"] = cat("a ", color, " ", shape, " sits here.");
        j["bad"] = cat("a ", color, " ", shape, " sit here.");
        j["category"] = "agreement";
      }
      pairs += j.dump() + "\n";
    }
    write_file(root / "eval" / "pairs.jsonl", pairs);

    std::string match;
    for (Index i = 0; i < opts.eval_items; ++i) {
      const Index a = i % opts.caption_images;
      // Partner with a differing caption; scenes repeat eventually, so scan.
      Index b = (a + 1) % opts.caption_images;
      while (scene_caption(cap_scenes[static_cast<size_t>(b)]) ==
                 scene_caption(cap_scenes[static_cast<size_t>(a)]) &&
             b != a)
        b = (b + 1) % opts.caption_images;
      if (b == a) continue;  // all scenes identical; cannot build an item
      nlohmann::ordered_json j;
      j["id"] = cat("match-", zero_pad(i));
      j["image0"] = cat("../images/cap-", zero_pad(a), ".ppm");
      j["image1"] = cat("../images/cap-", zero_pad(b), ".ppm");
      j["caption0"] = scene_caption(cap_scenes[static_cast<size_t>(a)]);
      j["caption1"] = scene_caption(cap_scenes[static_cast<size_t>(b)]);
      match += j.dump() + "\n";
    }
    write_file(root / "eval" / "match.jsonl", match);

    std::string rank;
    for (Index i = 0; i < opts.eval_items; ++i) {
      const Index a = i % opts.caption_images;
      const Scene& s = cap_scenes[static_cast<size_t>(a)];
      nlohmann::ordered_json j;
      j["id"] = cat("rank-", zero_pad(i));
      j["image"] = cat("../images/cap-", zero_pad(a), ".ppm");
      j["question"] = "the shape shown is a ";
      j["candidates"] = kShapes;
      j["gold"] = s.shape;
      rank += j.dump() + "\n";
    }
    write_file(root / "eval" / "rank.jsonl", rank);

    std::string cls;
    for (Index i = 0; i < opts.eval_items * 2; ++i) {
      Rng crng(child_seed(opts.seed, 5000 + static_cast<std::uint64_t>(i)));
      const Scene s = draw_scene(crng);
      nlohmann::ordered_json j;
      j["text"] = scene_caption(s);
      j["label"] = s.shape;
      cls += j.dump() + "\n";
    }
    write_file(root / "eval" / "cls.jsonl", cls);

    nlohmann::ordered_json suite;
    suite["tasks"] = nlohmann::ordered_json::array(
        {{{"name", "grammar"}, {"type", "minimal_pairs"}, {"path", "pairs.jsonl"}},
         {{"name", "matching"}, {"type", "matching"}, {"path", "match.jsonl"}},
         {{"name", "ranking"}, {"type", "ranking"}, {"path", "rank.jsonl"}},
         {{"name", "classification"},
          {"type", "lora_classification"},
          {"path", "cls.jsonl"},
          {"steps", 10},
          {"rank", 2},
          {"batch_size", 8},
          {"seed", 11}}});
    write_file(root / "eval" / "suite.json", suite.dump(2));
  }

  // --- pipeline config ------------------------------------------------------
  {
    nlohmann::ordered_json c;
    c["preset"] = "desk";
    c["seed"] = opts.seed;
    c["out_dir"] = "runs";
    c["validation_fraction"] = 0.1;
    c["tokenizer"] = {{"corpus", "text.jsonl"}, {"vocab_size", 384}};
    nlohmann::ordered_json sampler = {{"temperature", 0.9}, {"top_k", 40},   {"top_p", 0.95},
                                      {"min_len", 3},       {"max_len_low", 4}, {"max_len_high", 10},
                                      {"hard_cap", 24}};
    c["phases"] = nlohmann::ordered_json::array(
        {{{"phase", 1}, {"corpus", "text.jsonl"}, {"epochs", 2}, {"batch_size", 8},
          {"validate_every", 8}},
         {{"phase", 2}, {"captions", "captions.tsv"}, {"epochs", 2}, {"batch_size", 8},
          {"validate_every", 4}},
         {{"phase", 3}, {"corpus", "text.jsonl"}, {"synthesis_manifest", "synthesis-images.txt"},
          {"sampler", sampler}, {"epochs", 1}, {"batch_size", 8}, {"validate_every", 8}},
         {{"phase", 4}, {"captions", "instructions.tsv"}, {"epochs", 1}, {"batch_size", 8},
          {"validate_every", 4}}});
    c["eval_suite"] = "eval/suite.json";
    write_file(config_path, c.dump(2) + "\n");
  }

  return config_path.string();
}

}  // namespace selfsyn
