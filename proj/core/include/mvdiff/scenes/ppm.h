// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>

#include "mvdiff/common/image.h"

namespace mvdiff::scenes {

// Binary PPM (P6, maxval 255). Values are clamped to [0, 1] and rounded.
void write_ppm(std::ostream& out, const Image& img);
Image read_ppm(std::istream& in);
void save_ppm(const std::filesystem::path& path, const Image& img);
Image load_ppm(const std::filesystem::path& path);

// Rounds through the 8-bit representation a PPM round trip would apply.
Image quantize8(Image img);

}  // namespace mvdiff::scenes
