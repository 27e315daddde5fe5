// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "mvdiff/common/error.h"

namespace mvdiff {

using Rgb = std::array<float, 3>;

/// Interleaved RGB image, row-major, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h, Rgb fill = {0.f, 0.f, 0.f});

  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  float& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  Rgb pixel(int x, int y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
  void set(int x, int y, const Rgb& c) {
    for (int k = 0; k < 3; ++k) at(x, y, k) = c[k];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Box-filters by an integer factor.
Image downsample(const Image& img, int factor);

// Values clamped to [0, 1].
Image clamped(Image img);

}  // namespace mvdiff
