// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// The language model, the frozen vision encoder, and the projection bridge.
//
// Decoder (trainable, section "decoder."): token embedding, N pre-norm blocks
// of causal multi-head attention with rotary positions plus a gated-silu MLP,
// a final norm, and an untied output head.
//
// Vision encoder (section "vision.", frozen): patch linear embedding with a
// learned per-patch position embedding, then bidirectional pre-norm blocks
// with gelu MLPs. Its weights come from a fixed seed and never train, so its
// output for a given image is identical forever.
//
// Projection (trainable, section "proj."): consecutive patch vectors are
// grouped (concatenated) and mapped into the decoder's embedding space by a
// two-layer gelu MLP with biases.
//
// Multimodal layout: [projected image vectors][BOS, text...]. Rotary phases
// come from absolute sequence positions; image vectors occupy positions
// 0..n_image_slots-1.

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "selfsyn/image.hpp"
#include "selfsyn/rng.hpp"
#include "selfsyn/sha256.hpp"
#include "selfsyn/tensor.hpp"
#include "selfsyn/tokenizer.hpp"

namespace selfsyn {

struct ModelConfig {
  Index n_layers = 0;
  Index hidden_dim = 0;
  Index intermediate_dim = 0;
  Index n_heads = 0;
  Index vocab_size = 0;
  Index max_seq_len = 0;
  bool tied_head = false;

  Index patch_size = 8;
  Index image_side = 128;
  Index vision_dim = 64;
  Index vision_layers = 4;
  Index vision_heads = 4;
  Index group_factor = 4;

  double norm_eps = 1e-5;

  Index n_patches() const {
    const Index g = image_side / patch_size;
    return g * g;
  }
  Index n_image_slots() const { return n_patches() / group_factor; }
  Index head_dim() const { return hidden_dim / n_heads; }

  // Full-scale layout: 16 layers, width 512, MLP 1024, 8 heads, 16k vocab.
  static ModelConfig paper_preset() {
    ModelConfig c;
    c.n_layers = 16;
    c.hidden_dim = 512;
    c.intermediate_dim = 1024;
    c.n_heads = 8;
    c.vocab_size = 16000;
    c.max_seq_len = 512;
    return c;
  }

  // Single-core-friendly layout used by the toy pipeline and most tests.
  static ModelConfig desk_preset(Index vocab_size) {
    ModelConfig c;
    c.n_layers = 4;
    c.hidden_dim = 64;
    c.intermediate_dim = 128;
    c.n_heads = 4;
    c.vocab_size = vocab_size;
    c.max_seq_len = 256;
    return c;
  }

  void validate() const {
    auto positive = [](Index v, const char* what) {
      if (v < 1) throw ConfigError(cat("ModelConfig: ", what, " must be positive, got ", v));
    };
    positive(n_layers + 1, "n_layers (>=0)");  // zero layers allowed for toys
    positive(hidden_dim, "hidden_dim");
    positive(intermediate_dim, "intermediate_dim");
    positive(n_heads, "n_heads");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    positive(patch_size, "patch_size");
    positive(image_side, "image_side");
    positive(vision_dim, "vision_dim");
    positive(vision_layers, "vision_layers");
    positive(vision_heads, "vision_heads");
    positive(group_factor, "group_factor");
    if (hidden_dim % n_heads != 0)
      throw ConfigError(cat("ModelConfig: hidden_dim ", hidden_dim, " not divisible by ",
                            n_heads, " heads"));
    if (head_dim() % 2 != 0)
      throw ConfigError(cat("ModelConfig: head dim ", head_dim(), " must be even for rotary"));
    if (image_side % patch_size != 0)
      throw ConfigError(cat("ModelConfig: image_side ", image_side, " not divisible by patch ",
                            patch_size));
    if (n_patches() % group_factor != 0)
      throw ConfigError(cat("ModelConfig: ", n_patches(), " patches not divisible by group ",
                            group_factor));
    if (vision_dim % vision_heads != 0)
      throw ConfigError(cat("ModelConfig: vision_dim ", vision_dim, " not divisible by ",
                            vision_heads, " heads"));
    if (n_image_slots() + 2 > max_seq_len)
      throw ConfigError(cat("ModelConfig: max_seq_len ", max_seq_len, " cannot fit ",
                            n_image_slots(), " image slots plus text"));
  }
};

// Number of language-model weights (the "decoder." section): embedding,
// per-layer attention and gated MLP and their two norms, the final norm when
// any layer exists, and the output head unless tied to the embedding.
inline Index count_parameters(const ModelConfig& c) {
  const Index d = c.hidden_dim, ff = c.intermediate_dim, v = c.vocab_size;
  Index n = v * d;                                      // token embedding
  n += c.n_layers * (4 * d * d + 3 * d * ff + 2 * d);   // attention + MLP + norms
  if (c.n_layers > 0) n += d;                           // final norm
  if (!c.tied_head) n += d * v;                         // output head
  return n;
}

// The fixed seed behind the frozen vision encoder. Changing it changes every
// cached image representation, so it is a constant, not a config knob.
inline constexpr std::uint64_t kVisionSeed = 0x5EED;

template <class S>
class ModelParams {
 public:
  ModelConfig config;

  void add(const std::string& name, Tensor<S> t, bool trainable) {
    if (index_.count(name)) throw ContractError(cat("ModelParams: duplicate tensor ", name));
    t.set_requires_grad(trainable);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError(cat("ModelParams: no tensor named ", name));
    return entries_[it->second].second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError(cat("ModelParams: no tensor named ", name));
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<S>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<S>>>& entries() { return entries_; }

  Index section_numel(const std::string& prefix) const {
    Index n = 0;
    for (const auto& [name, t] : entries_)
      if (name.rfind(prefix, 0) == 0) n += t.numel();
    return n;
  }

  Index total_numel() const { return section_numel(""); }

  // Digest of the f32 serialization (name, shape, little-endian float bits)
  // of every tensor whose name starts with `prefix`, in map order.
  std::string section_digest(const std::string& prefix) const {
    Sha256 h;
    for (const auto& [name, t] : entries_) {
      if (name.rfind(prefix, 0) != 0) continue;
      h.update(name.data(), name.size());
      h.update("\0", 1);
      const std::uint64_t rank = static_cast<std::uint64_t>(t.rank());
      h.update(&rank, sizeof(rank));
      for (Index i = 0; i < t.rank(); ++i) {
        const std::int64_t d = t.dim(i);
        h.update(&d, sizeof(d));
      }
      for (Index i = 0; i < t.numel(); ++i) {
        const float f = static_cast<float>(t(i));
        h.update(&f, sizeof(f));
      }
    }
    return to_hex(h.finish());
  }

  std::string digest() const { return section_digest(""); }

  // Deep copy: fresh storage, no gradients, same trainability flags.
  ModelParams<S> clone() const {
    ModelParams<S> c;
    c.config = config;
    for (const auto& [name, t] : entries_) c.add(name, t.clone_values(), t.requires_grad());
    return c;
  }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

namespace detail {

template <class S>
Tensor<S> random_tensor(Rng& rng, Shape shape, double stddev) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t(i) = static_cast<S>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace detail

// Fresh parameters. Trainable sections draw from `seed` in map order with
// stddev 0.02 (norms start at one, biases at zero); the vision section always
// draws from kVisionSeed, so two models share one frozen encoder bit-for-bit.
template <class S>
ModelParams<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<S> p;
  p.config = cfg;
  const Index d = cfg.hidden_dim, ff = cfg.intermediate_dim, v = cfg.vocab_size;
  const double sd = 0.02;

  Rng rng(seed);
  p.add("decoder.embed", detail::random_tensor<S>(rng, {v, d}, sd), true);
  for (Index l = 0; l < cfg.n_layers; ++l) {
    const std::string base = cat("decoder.L", l, ".");
    p.add(base + "attn_norm", Tensor<S>::full({d}, S(1)), true);
    p.add(base + "wq", detail::random_tensor<S>(rng, {d, d}, sd), true);
    p.add(base + "wk", detail::random_tensor<S>(rng, {d, d}, sd), true);
    p.add(base + "wv", detail::random_tensor<S>(rng, {d, d}, sd), true);
    p.add(base + "wo", detail::random_tensor<S>(rng, {d, d}, sd), true);
    p.add(base + "mlp_norm", Tensor<S>::full({d}, S(1)), true);
    p.add(base + "w_gate", detail::random_tensor<S>(rng, {d, ff}, sd), true);
    p.add(base + "w_up", detail::random_tensor<S>(rng, {d, ff}, sd), true);
    p.add(base + "w_down", detail::random_tensor<S>(rng, {ff, d}, sd), true);
  }
  if (cfg.n_layers > 0) p.add("decoder.final_norm", Tensor<S>::full({d}, S(1)), true);
  if (!cfg.tied_head) p.add("decoder.head", detail::random_tensor<S>(rng, {d, v}, sd), true);

  const Index gdim = cfg.group_factor * cfg.vision_dim;
  p.add("proj.w1", detail::random_tensor<S>(rng, {gdim, d}, sd), true);
  p.add("proj.b1", Tensor<S>::zeros({d}), true);
  p.add("proj.w2", detail::random_tensor<S>(rng, {d, d}, sd), true);
  p.add("proj.b2", Tensor<S>::zeros({d}), true);

  Rng vrng(kVisionSeed);
  const Index vd = cfg.vision_dim, pd = cfg.patch_size * cfg.patch_size * 3;
  p.add("vision.patch_embed", detail::random_tensor<S>(vrng, {pd, vd}, sd), false);
  p.add("vision.patch_bias", Tensor<S>::zeros({vd}), false);
  p.add("vision.pos_embed", detail::random_tensor<S>(vrng, {cfg.n_patches(), vd}, sd), false);
  for (Index l = 0; l < cfg.vision_layers; ++l) {
    const std::string base = cat("vision.L", l, ".");
    p.add(base + "attn_norm", Tensor<S>::full({vd}, S(1)), false);
    p.add(base + "wq", detail::random_tensor<S>(vrng, {vd, vd}, sd), false);
    p.add(base + "wk", detail::random_tensor<S>(vrng, {vd, vd}, sd), false);
    p.add(base + "wv", detail::random_tensor<S>(vrng, {vd, vd}, sd), false);
    p.add(base + "wo", detail::random_tensor<S>(vrng, {vd, vd}, sd), false);
    p.add(base + "mlp_norm", Tensor<S>::full({vd}, S(1)), false);
    p.add(base + "w1", detail::random_tensor<S>(vrng, {vd, 4 * vd}, sd), false);
    p.add(base + "b1", Tensor<S>::zeros({4 * vd}), false);
    p.add(base + "w2", detail::random_tensor<S>(vrng, {4 * vd, vd}, sd), false);
    p.add(base + "b2", Tensor<S>::zeros({vd}), false);
  }
  p.add("vision.final_norm", Tensor<S>::full({vd}, S(1)), false);
  return p;
}

// ---------------------------------------------------------------------------
// Decoder forward

// One pre-norm block stack over ready-made embeddings x [T x d], with rotary
// phases taken from `positions`. Returns the final-normed hidden states.
template <class S>
Tensor<S> decoder_hidden(const ModelParams<S>& p, Tensor<S> x,
                         std::span<const Index> positions) {
  const ModelConfig& cfg = p.config;
  const Index hd = cfg.head_dim();
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  const S eps = static_cast<S>(cfg.norm_eps);
  for (Index l = 0; l < cfg.n_layers; ++l) {
    const std::string base = cat("decoder.L", l, ".");
    auto h = rms_norm(x, p.at(base + "attn_norm"), eps);
    auto q = rope_apply(matmul(h, p.at(base + "wq")), cfg.n_heads, positions);
    auto k = rope_apply(matmul(h, p.at(base + "wk")), cfg.n_heads, positions);
    auto v = matmul(h, p.at(base + "wv"));
    std::vector<Tensor<S>> heads;
    heads.reserve(static_cast<size_t>(cfg.n_heads));
    for (Index hh = 0; hh < cfg.n_heads; ++hh) {
      auto qh = slice_cols(q, hh * hd, hd);
      auto kh = slice_cols(k, hh * hd, hd);
      auto vh = slice_cols(v, hh * hd, hd);
      auto attn = causal_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
      heads.push_back(matmul(attn, vh));
    }
    x = add(x, matmul(concat_cols(heads), p.at(base + "wo")));
    auto m = rms_norm(x, p.at(base + "mlp_norm"), eps);
    auto gated = mul(silu(matmul(m, p.at(base + "w_gate"))), matmul(m, p.at(base + "w_up")));
    x = add(x, matmul(gated, p.at(base + "w_down")));
  }
  if (cfg.n_layers > 0) x = rms_norm(x, p.at("decoder.final_norm"), eps);
  return x;
}

template <class S>
Tensor<S> output_logits(const ModelParams<S>& p, const Tensor<S>& hidden) {
  if (p.config.tied_head) return matmul(hidden, transpose(p.at("decoder.embed")));
  return matmul(hidden, p.at("decoder.head"));
}

// Text-only forward: logits [|tokens| x V].
template <class S>
Tensor<S> forward_lm(const ModelParams<S>& p, const TokenSequence& tokens) {
  const Index t = static_cast<Index>(tokens.size());
  if (t < 1) throw ContractError("forward_lm: empty sequence");
  if (t > p.config.max_seq_len)
    throw LengthError(cat("forward_lm: sequence of ", t, " exceeds max_seq_len ",
                          p.config.max_seq_len));
  std::vector<Index> positions(static_cast<size_t>(t));
  std::iota(positions.begin(), positions.end(), Index(0));
  auto x = embedding(p.at("decoder.embed"), tokens);
  return output_logits(p, decoder_hidden(p, std::move(x), positions));
}

// ---------------------------------------------------------------------------
// Vision encoder (always frozen, always eager)

// Patch grid in row-major order; within a patch, pixels row-major with
// interleaved RGB. Output [n_patches x patch_size^2*3].
template <class S>
Tensor<S> patchify(const Image& img, const ModelConfig& cfg) {
  if (img.width != cfg.image_side || img.height != cfg.image_side)
    throw ShapeError(cat("patchify: image ", img.width, "x", img.height, " but config wants ",
                         cfg.image_side, "x", cfg.image_side));
  const Index ps = cfg.patch_size;
  const Index grid = cfg.image_side / ps;
  Tensor<S> out = Tensor<S>::zeros({grid * grid, ps * ps * 3});
  for (Index py = 0; py < grid; ++py)
    for (Index px = 0; px < grid; ++px) {
      const Index row = py * grid + px;
      Index col = 0;
      for (Index y = 0; y < ps; ++y)
        for (Index x = 0; x < ps; ++x)
          for (Index c = 0; c < 3; ++c)
            out(row, col++) = static_cast<S>(img.at(py * ps + y, px * ps + x, c));
    }
  return out;
}

// 256 patch vectors from the frozen encoder. Same image, same bytes, always.
template <class S>
Tensor<S> encode_image(const ModelParams<S>& p, const Image& img) {
  const ModelConfig& cfg = p.config;
  const S eps = static_cast<S>(cfg.norm_eps);
  const Index vd = cfg.vision_dim;
  const Index heads = cfg.vision_heads;
  const Index hd = vd / heads;
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

  auto x = add(add_bias(matmul(patchify<S>(img, cfg), p.at("vision.patch_embed")),
                        p.at("vision.patch_bias")),
               p.at("vision.pos_embed"));
  for (Index l = 0; l < cfg.vision_layers; ++l) {
    const std::string base = cat("vision.L", l, ".");
    auto h = rms_norm(x, p.at(base + "attn_norm"), eps);
    auto q = matmul(h, p.at(base + "wq"));
    auto k = matmul(h, p.at(base + "wk"));
    auto v = matmul(h, p.at(base + "wv"));
    std::vector<Tensor<S>> outs;
    for (Index hh = 0; hh < heads; ++hh) {
      auto qh = slice_cols(q, hh * hd, hd);
      auto kh = slice_cols(k, hh * hd, hd);
      auto vh = slice_cols(v, hh * hd, hd);
      auto attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), Index(1));
      outs.push_back(matmul(attn, vh));
    }
    x = add(x, matmul(concat_cols(outs), p.at(base + "wo")));
    auto m = rms_norm(x, p.at(base + "mlp_norm"), eps);
    x = add(x, add_bias(matmul(gelu(add_bias(matmul(m, p.at(base + "w1")), p.at(base + "b1"))),
                               p.at(base + "w2")),
                        p.at(base + "b2")));
  }
  return rms_norm(x, p.at("vision.final_norm"), eps);
}

// [n_patches x vd] -> [n_patches/g x g*vd]; row j is the concatenation of
// source rows g*j .. g*j+g-1 (a pure reshape of row-major storage). The
// result is a constant: gradients stop at the frozen encoder anyway.
template <class S>
Tensor<S> group_tokens(const Tensor<S>& raw, Index group_factor) {
  if (raw.rank() != 2) throw ShapeError(cat("group_tokens: want 2-D, got ", raw.shape()));
  const Index n = raw.dim(0), vd = raw.dim(1);
  if (group_factor < 1 || n % group_factor != 0)
    throw ShapeError(cat("group_tokens: ", n, " rows not divisible by group ", group_factor));
  return Tensor<S>::from_vector(raw.values(), {n / group_factor, group_factor * vd});
}

// Grouped image vectors -> decoder space, via linear/gelu/linear. Trainable.
template <class S>
Tensor<S> project(const ModelParams<S>& p, const Tensor<S>& grouped) {
  auto h = gelu(add_bias(matmul(grouped, p.at("proj.w1")), p.at("proj.b1")));
  return add_bias(matmul(h, p.at("proj.w2")), p.at("proj.b2"));
}

// Convenience: image -> grouped constant, ready for project(). Cache this per
// image during training; the encoder is frozen so it never goes stale.
template <class S>
Tensor<S> image_to_grouped(const ModelParams<S>& p, const Image& img) {
  return group_tokens(encode_image(p, img), p.config.group_factor);
}

// Image-conditioned forward over already-projected image vectors. `tokens`
// is the text row, BOS first; logits cover exactly the token positions.
template <class S>
Tensor<S> forward_multimodal_from_projection(const ModelParams<S>& p, const Tensor<S>& projected,
                                             const TokenSequence& tokens) {
  const ModelConfig& cfg = p.config;
  const Index slots = cfg.n_image_slots();
  if (projected.rank() != 2 || projected.dim(0) != slots || projected.dim(1) != cfg.hidden_dim)
    throw ShapeError(cat("forward_multimodal: projected image block ", projected.shape(),
                         " but config wants [", slots, "x", cfg.hidden_dim, "]"));
  const Index t = static_cast<Index>(tokens.size());
  if (t < 1) throw ContractError("forward_multimodal: empty text");
  if (slots + t > cfg.max_seq_len)
    throw LengthError(cat("forward_multimodal: ", slots, " image slots + ", t,
                          " tokens exceed max_seq_len ", cfg.max_seq_len));
  auto x = concat_rows(projected, embedding(p.at("decoder.embed"), tokens));
  std::vector<Index> positions(static_cast<size_t>(slots + t));
  std::iota(positions.begin(), positions.end(), Index(0));
  auto hidden = decoder_hidden(p, std::move(x), positions);
  return output_logits(p, slice_rows(hidden, slots, t));
}

template <class S>
Tensor<S> forward_multimodal(const ModelParams<S>& p, const Image& img,
                             const TokenSequence& tokens) {
  auto projected = project(p, image_to_grouped(p, img));
  return forward_multimodal_from_projection(p, projected, tokens);
}

// ---------------------------------------------------------------------------
// Incremental decoding (inference only; bit-compatible with the full forward)

template <class S>
struct DecoderKVCache {
  std::vector<Tensor<S>> k;  // per layer, [P x d] rotary-applied keys
  std::vector<Tensor<S>> v;  // per layer, [P x d]
  Index length = 0;

  explicit DecoderKVCache(const ModelConfig& cfg)
      : k(static_cast<size_t>(cfg.n_layers)), v(static_cast<size_t>(cfg.n_layers)) {}
};

// Appends one position (an embedding row [1 x d]) and returns its logits
// [1 x V]. Must be called with consecutive positions starting at 0.
template <class S>
Tensor<S> decode_step(const ModelParams<S>& p, DecoderKVCache<S>& cache, Tensor<S> x) {
  const ModelConfig& cfg = p.config;
  if (x.rank() != 2 || x.dim(0) != 1 || x.dim(1) != cfg.hidden_dim)
    throw ShapeError(cat("decode_step: want [1x", cfg.hidden_dim, "], got ", x.shape()));
  if (cache.length >= cfg.max_seq_len)
    throw LengthError(cat("decode_step: cache full at max_seq_len ", cfg.max_seq_len));
  const Index hd = cfg.head_dim();
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  const S eps = static_cast<S>(cfg.norm_eps);
  const std::vector<Index> pos = {cache.length};

  for (Index l = 0; l < cfg.n_layers; ++l) {
    const std::string base = cat("decoder.L", l, ".");
    auto& layer_k = cache.k[static_cast<size_t>(l)];
    auto& layer_v = cache.v[static_cast<size_t>(l)];
    auto h = rms_norm(x, p.at(base + "attn_norm"), eps);
    auto q = rope_apply(matmul(h, p.at(base + "wq")), cfg.n_heads, pos);
    auto knew = rope_apply(matmul(h, p.at(base + "wk")), cfg.n_heads, pos);
    auto vnew = matmul(h, p.at(base + "wv"));
    layer_k = layer_k.defined() ? concat_rows(layer_k, knew) : knew;
    layer_v = layer_v.defined() ? concat_rows(layer_v, vnew) : vnew;
    std::vector<Tensor<S>> heads;
    for (Index hh = 0; hh < cfg.n_heads; ++hh) {
      auto qh = slice_cols(q, hh * hd, hd);
      auto kh = slice_cols(layer_k, hh * hd, hd);
      auto vh = slice_cols(layer_v, hh * hd, hd);
      auto attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), Index(1));
      heads.push_back(matmul(attn, vh));
    }
    x = add(x, matmul(concat_cols(heads), p.at(base + "wo")));
    auto m = rms_norm(x, p.at(base + "mlp_norm"), eps);
    auto gated = mul(silu(matmul(m, p.at(base + "w_gate"))), matmul(m, p.at(base + "w_up")));
    x = add(x, matmul(gated, p.at(base + "w_down")));
  }
  cache.length += 1;
  if (cfg.n_layers > 0) x = rms_norm(x, p.at("decoder.final_norm"), eps);
  return output_logits(p, x);
}

// Token id convenience wrapper around decode_step.
template <class S>
Tensor<S> decode_step_token(const ModelParams<S>& p, DecoderKVCache<S>& cache, TokenId token) {
  return decode_step(p, cache, embedding(p.at("decoder.embed"), TokenSequence{token}));
}

}  // namespace selfsyn
