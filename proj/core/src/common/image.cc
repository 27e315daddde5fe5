// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/common/image.h"

#include <algorithm>
#include <stdexcept>

namespace mvdiff {

Image::Image(int w, int h, Rgb fill) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
  if (w <= 0 || h <= 0) throw ShapeError("image dimensions must be positive");
  for (std::size_t i = 0; i < pixels(); ++i) {
    for (int c = 0; c < 3; ++c) rgb[i * 3 + c] = fill[c];
  }
}

Image downsample(const Image& img, int factor) {
  if (factor <= 0 || img.width % factor || img.height % factor) {
    throw ShapeError("downsample factor must divide the image size");
  }
  Image out(img.width / factor, img.height / factor);
  const float norm = 1.0f / static_cast<float>(factor * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        float acc = 0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) acc += img.at(x * factor + dx, y * factor + dy, c);
        }
        out.at(x, y, c) = acc * norm;
      }
    }
  }
  return out;
}

Image clamped(Image img) {
  for (float& v : img.rgb) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

}  // namespace mvdiff
