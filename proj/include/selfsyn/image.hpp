// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal RGB image support. P6 PPM (binary, maxval 255) is the only file
// format; pixels live in [0,1] floats, row-major, 3 channels interleaved.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "selfsyn/common.hpp"

namespace selfsyn {

struct Image {
  Index width = 0;
  Index height = 0;
  std::vector<float> rgb;  // height*width*3 floats in [0,1]

  float& at(Index y, Index x, Index c) { return rgb[static_cast<size_t>((y * width + x) * 3 + c)]; }
  float at(Index y, Index x, Index c) const {
    return rgb[static_cast<size_t>((y * width + x) * 3 + c)];
  }
};

// P6 decode. Accepts '#' comments in the header; requires maxval 255.
// Missing file -> IoError; malformed or truncated data -> CorruptionError.
Image decode_ppm_bytes(std::string_view bytes, const std::string& origin = "<memory>");
Image decode_ppm(const std::string& path);

// P6 encode; values clamped to [0,1] and rounded to bytes.
std::string encode_ppm_bytes(const Image& img);
void encode_ppm(const Image& img, const std::string& path);

// Largest centered square (offsets round down when the margin is odd).
Image center_crop_square(const Image& img);

// Nearest-neighbor: source index = floor((dst + 0.5) * src / dst).
Image resize_nearest(const Image& img, Index out_side);

// decode -> center-crop -> resize, the documented preprocessing pipeline.
Image load_image(const std::string& path, Index image_side);

}  // namespace selfsyn
