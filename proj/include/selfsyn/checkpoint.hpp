// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary checkpoint container, format "ssckpt-v1":
//
//   magic "ssckpt-v1\n"
//   config block: fixed-order little-endian fields of ModelConfig
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u8 dtype (0 = f32), u8 trainable,
//     u32 rank, i64 dims[rank], f32 values[numel]
//   u8 optimizer-state flag; when set:
//     i64 step, u32 entry count, then per entry:
//       u32 name length, name bytes, u64 numel, f32 m[numel], f32 v[numel]
//   u32 metadata length, metadata bytes (JSON)
//   32-byte SHA-256 of everything above
//
// Everything is little-endian. load() recomputes the digest and rejects any
// mismatch or truncation. save() writes to a temp file and renames, so a
// crash never leaves a half-written checkpoint behind.

#include <optional>
#include <string>
#include <vector>

#include "selfsyn/model.hpp"

namespace selfsyn {

// First/second AdamW moment vectors, keyed by parameter name.
struct OptimState {
  std::int64_t step = 0;
  std::vector<std::string> names;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  Index find(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<Index>(i);
    return -1;
  }
};

struct Checkpoint {
  ModelParams<float> params;
  std::optional<OptimState> optim;
  std::string metadata_json;
  std::string digest;  // hex SHA-256 of the file content before the footer
};

// Returns the content digest (also stored in the footer).
std::string save_checkpoint(const ModelParams<float>& params, const OptimState* optim,
                            const std::string& metadata_json, const std::string& path);

Checkpoint load_checkpoint(const std::string& path);

// Digest check without materializing tensors; throws CorruptionError on any
// integrity failure, otherwise returns the hex digest.
std::string checkpoint_digest(const std::string& path);

}  // namespace selfsyn
