// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfsyn {

using Index = std::int64_t;
using Shape = std::vector<Index>;
using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension disagreements between tensors or files and expectations.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid user-supplied configuration (vocab too small, odd head dim, ...).
struct ConfigError : Error {
  using Error::Error;
};

// A caller violated an API precondition (non-scalar loss, bad distribution).
struct ContractError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Checkpoint or vocab file failed its integrity check.
struct CorruptionError : Error {
  using Error::Error;
};

// Tokenizer decode hit an id outside the vocabulary.
struct DecodeError : Error {
  using Error::Error;
};

// Masked loss with every position masked out.
struct EmptyLossError : Error {
  using Error::Error;
};

// A sequence is too long for the configured context window.
struct LengthError : Error {
  using Error::Error;
};

namespace detail {

template <class T>
void cat_one(std::ostringstream& os, const T& v) {
  os << v;
}

inline void cat_one(std::ostringstream& os, const Shape& s) {
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
}

}  // namespace detail

// Lightweight message builder; cat("got ", shape, " want ", other).
template <class... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  (detail::cat_one(os, args), ...);
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  return cat(s);
}

}  // namespace selfsyn
