// Copyright 2026  smt-lab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>

#include "smt/types.hpp"

namespace smt::image {

/// 8-bit grayscale PNG. Values are quantized as round(255 * v).
void write_png(const std::string& path, const GrayImage& img);

/// Reads any PNG (palette, RGB, alpha and 16-bit are reduced to 8-bit gray).
GrayImage read_png(const std::string& path);

/// Bilinear resize to a fixed height, width scaled proportionally (>= 1).
GrayImage resize_to_height(const GrayImage& img, int height);

/// Reads a PNG and normalizes it to `height`. When the SMT_LAB_CACHE
/// environment variable names a directory, normalized pixels are cached
/// there keyed by file content and height.
GrayImage load_normalized(const std::string& path, int height);

/// Quantizes to the 8-bit grid a PNG round trip would produce.
GrayImage quantize8(const GrayImage& img);

}  // namespace smt::image
