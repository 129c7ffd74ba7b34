// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#include "selfsyn/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace selfsyn {

namespace {

// Header scanner: skips whitespace and '#' comments between header fields.
struct HeaderReader {
  std::string_view s;
  size_t pos = 0;
  const std::string& origin;

  void skip_separators() {
    while (pos < s.size()) {
      const char c = s[pos];
      if (c == '#') {
        while (pos < s.size() && s[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  }

  long next_int() {
    skip_separators();
    if (pos >= s.size() || s[pos] < '0' || s[pos] > '9')
      throw CorruptionError(cat("ppm header: expected integer in ", origin));
    long v = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      v = v * 10 + (s[pos] - '0');
      if (v > 1'000'000'000) throw CorruptionError(cat("ppm header: absurd value in ", origin));
      ++pos;
    }
    return v;
  }
};

}  // namespace

Image decode_ppm_bytes(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw CorruptionError(cat("not a P6 ppm: ", origin));
  HeaderReader h{bytes, 2, origin};
  const long w = h.next_int();
  const long hgt = h.next_int();
  const long maxval = h.next_int();
  if (w <= 0 || hgt <= 0) throw CorruptionError(cat("ppm: bad dimensions in ", origin));
  if (maxval != 255)
    throw CorruptionError(cat("ppm: unsupported maxval ", maxval, " in ", origin, " (want 255)"));
  // exactly one whitespace byte separates the header from pixel data
  if (h.pos >= bytes.size() ||
      !(bytes[h.pos] == '\n' || bytes[h.pos] == ' ' || bytes[h.pos] == '\t' ||
        bytes[h.pos] == '\r'))
    throw CorruptionError(cat("ppm: missing header terminator in ", origin));
  const size_t data_start = h.pos + 1;
  const size_t need = static_cast<size_t>(w) * static_cast<size_t>(hgt) * 3;
  if (bytes.size() - data_start < need)
    throw CorruptionError(cat("ppm: truncated pixel data in ", origin, " (need ", need,
                              " bytes, have ", bytes.size() - data_start, ")"));

  Image img;
  img.width = w;
  img.height = hgt;
  img.rgb.resize(need);
  for (size_t i = 0; i < need; ++i)
    img.rgb[i] = static_cast<float>(static_cast<unsigned char>(bytes[data_start + i])) / 255.0f;
  return img;
}

Image decode_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot open image: ", path));
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_ppm_bytes(bytes, path);
}

std::string encode_ppm_bytes(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.reserve(out.size() + img.rgb.size());
  for (float v : img.rgb) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    out += static_cast<char>(std::lround(c * 255.0f));
  }
  return out;
}

void encode_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(cat("cannot write image: ", path));
  const auto bytes = encode_ppm_bytes(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(cat("short write to image: ", path));
}

Image center_crop_square(const Image& img) {
  const Index side = std::min(img.width, img.height);
  const Index x0 = (img.width - side) / 2;
  const Index y0 = (img.height - side) / 2;
  if (side == img.width && side == img.height) return img;
  Image out;
  out.width = side;
  out.height = side;
  out.rgb.resize(static_cast<size_t>(side * side * 3));
  for (Index y = 0; y < side; ++y)
    for (Index x = 0; x < side; ++x)
      for (Index c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

Image resize_nearest(const Image& img, Index out_side) {
  if (out_side <= 0) throw ConfigError(cat("resize_nearest: bad side ", out_side));
  if (img.width == out_side && img.height == out_side) return img;
  Image out;
  out.width = out_side;
  out.height = out_side;
  out.rgb.resize(static_cast<size_t>(out_side * out_side * 3));
  auto src_index = [out_side](Index dst, Index src_dim) {
    auto s = static_cast<Index>((static_cast<double>(dst) + 0.5) *
                                static_cast<double>(src_dim) / static_cast<double>(out_side));
    return std::clamp<Index>(s, 0, src_dim - 1);
  };
  for (Index y = 0; y < out_side; ++y) {
    const Index sy = src_index(y, img.height);
    for (Index x = 0; x < out_side; ++x) {
      const Index sx = src_index(x, img.width);
      for (Index c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

Image load_image(const std::string& path, Index image_side) {
  return resize_nearest(center_crop_square(decode_ppm(path)), image_side);
}

}  // namespace selfsyn
