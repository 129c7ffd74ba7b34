// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "selfsyn/sha256.hpp"

namespace selfsyn {
namespace {

constexpr char kMagic[] = "ssckpt-v1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;
constexpr size_t kDigestLen = 32;
constexpr std::uint8_t kDtypeF32 = 0;

// All multi-byte fields are little-endian. We serialize through explicit byte
// shifts so the format does not depend on host endianness.
void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i64(std::string& out, std::int64_t v) { put_u64(out, static_cast<std::uint64_t>(v)); }

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

void put_f32_array(std::string& out, const std::vector<float>& v) {
  out.reserve(out.size() + v.size() * 4);
  for (float x : v) put_f32(out, x);
}

class Reader {
 public:
  Reader(const std::string& data, std::string origin)
      : data_(data), origin_(std::move(origin)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> f32_array(std::uint64_t n) {
    need(n * 4);
    std::vector<float> v(n);
    for (std::uint64_t i = 0; i < n; ++i) v[i] = f32();
    return v;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::uint64_t n) {
    if (pos_ + n > data_.size())
      throw CorruptionError(cat(origin_, ": truncated checkpoint (need ", n, " bytes at offset ",
                                pos_, " of ", data_.size(), ")"));
  }
  const std::string& data_;
  std::string origin_;
  size_t pos_ = 0;
};

void put_config(std::string& out, const ModelConfig& c) {
  put_i64(out, c.n_layers);
  put_i64(out, c.hidden_dim);
  put_i64(out, c.intermediate_dim);
  put_i64(out, c.n_heads);
  put_i64(out, c.vocab_size);
  put_i64(out, c.max_seq_len);
  put_u8(out, c.tied_head ? 1 : 0);
  put_i64(out, c.patch_size);
  put_i64(out, c.image_side);
  put_i64(out, c.vision_dim);
  put_i64(out, c.vision_layers);
  put_i64(out, c.vision_heads);
  put_i64(out, c.group_factor);
  put_f64(out, c.norm_eps);
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.n_layers = r.i64();
  c.hidden_dim = r.i64();
  c.intermediate_dim = r.i64();
  c.n_heads = r.i64();
  c.vocab_size = r.i64();
  c.max_seq_len = r.i64();
  c.tied_head = r.u8() != 0;
  c.patch_size = r.i64();
  c.image_side = r.i64();
  c.vision_dim = r.i64();
  c.vision_layers = r.i64();
  c.vision_heads = r.i64();
  c.group_factor = r.i64();
  c.norm_eps = r.f64();
  return c;
}

std::array<std::uint8_t, 32> digest_of(const void* data, size_t len) {
  Sha256 h;
  h.update(data, len);
  return h.finish();
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat("cannot open checkpoint ", path));
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) throw IoError(cat("read failure on ", path));
  return data;
}

// Splits the raw file into (payload, stored digest) after verifying integrity.
std::string verified_payload(const std::string& data, const std::string& path,
                             std::string* digest_out) {
  if (data.size() < kMagicLen + kDigestLen)
    throw CorruptionError(cat(path, ": truncated checkpoint (", data.size(), " bytes)"));
  if (data.compare(0, kMagicLen, kMagic) != 0)
    throw CorruptionError(cat(path, ": bad checkpoint magic"));
  const std::string payload = data.substr(0, data.size() - kDigestLen);
  const auto digest = digest_of(payload.data(), payload.size());
  if (std::memcmp(digest.data(), data.data() + payload.size(), kDigestLen) != 0)
    throw CorruptionError(cat(path, ": checkpoint digest mismatch"));
  if (digest_out) *digest_out = to_hex(digest);
  return payload;
}

}  // namespace

std::string save_checkpoint(const ModelParams<float>& params, const OptimState* optim,
                            const std::string& metadata_json, const std::string& path) {
  std::string out;
  out.append(kMagic, kMagicLen);
  put_config(out, params.config);

  put_u32(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, t] : params.entries()) {
    put_string(out, name);
    put_u8(out, kDtypeF32);
    put_u8(out, t.requires_grad() ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (Index i = 0; i < t.rank(); ++i) put_i64(out, t.dim(i));
    put_f32_array(out, t.values());
  }

  put_u8(out, optim ? 1 : 0);
  if (optim) {
    if (optim->names.size() != optim->m.size() || optim->names.size() != optim->v.size())
      throw ContractError("save_checkpoint: optimizer state arrays out of sync");
    put_i64(out, optim->step);
    put_u32(out, static_cast<std::uint32_t>(optim->names.size()));
    for (size_t i = 0; i < optim->names.size(); ++i) {
      if (optim->m[i].size() != optim->v[i].size())
        throw ContractError(cat("save_checkpoint: moment size mismatch for ", optim->names[i]));
      put_string(out, optim->names[i]);
      put_u64(out, optim->m[i].size());
      put_f32_array(out, optim->m[i]);
      put_f32_array(out, optim->v[i]);
    }
  }

  put_string(out, metadata_json);

  const auto digest = digest_of(out.data(), out.size());
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());

  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(cat("cannot write checkpoint ", tmp.string()));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f.good()) throw IoError(cat("write failure on ", tmp.string()));
  }
  fs::rename(tmp, target);
  return to_hex(digest);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string data = read_file_bytes(path);
  Checkpoint ck;
  const std::string payload = verified_payload(data, path, &ck.digest);

  Reader r(payload, path);
  // Skip the already-verified magic.
  for (size_t i = 0; i < kMagicLen; ++i) r.u8();
  ck.params.config = read_config(r);

  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str();
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32)
      throw CorruptionError(cat(path, ": unknown dtype ", int(dtype), " for tensor ", name));
    const bool trainable = r.u8() != 0;
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CorruptionError(cat(path, ": implausible rank ", rank, " for ", name));
    Shape shape(rank);
    Index numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = r.i64();
      if (shape[d] < 1) throw CorruptionError(cat(path, ": bad dim for tensor ", name));
      numel *= shape[d];
    }
    std::vector<float> values = r.f32_array(static_cast<std::uint64_t>(numel));
    ck.params.add(name, Tensor<float>::from_vector(std::move(values), shape), trainable);
  }

  if (r.u8() != 0) {
    OptimState st;
    st.step = r.i64();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      st.names.push_back(r.str());
      const std::uint64_t numel = r.u64();
      st.m.push_back(r.f32_array(numel));
      st.v.push_back(r.f32_array(numel));
    }
    ck.optim = std::move(st);
  }

  ck.metadata_json = r.str();
  if (r.remaining() != 0)
    throw CorruptionError(cat(path, ": ", r.remaining(), " trailing bytes after metadata"));
  return ck;
}

std::string checkpoint_digest(const std::string& path) {
  std::string digest;
  verified_payload(read_file_bytes(path), path, &digest);
  return digest;
}

}  // namespace selfsyn
