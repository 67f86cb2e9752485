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

#include "smt/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "smt/rng.hpp"

namespace smt::image {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO", "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_png(const std::string& path, const GrayImage& img) {
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw Error("IO", "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("IO", "libpng initialization failed");
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.cols()));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("IO", "libpng write error for " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.cols()), static_cast<png_uint_32>(img.rows()),
               8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Eigen::Index y = 0; y < img.rows(); ++y) {
    for (Eigen::Index x = 0; x < img.cols(); ++x) row[static_cast<std::size_t>(x)] = to_byte(img(y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_png(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw Error("IO", "cannot read " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw Error("IO", path + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("IO", "libpng initialization failed");
  }
  GrayImage img;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("IO", "corrupt PNG " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  img.resize(height, width);
  for (png_uint_32 y = 0; y < height; ++y)
    for (png_uint_32 x = 0; x < width; ++x)
      img(y, x) = static_cast<float>(rows[y][x]) / 255.0f;
  return img;
}

GrayImage resize_to_height(const GrayImage& img, int height) {
  if (img.rows() == height) return img;
  const double scale = static_cast<double>(height) / static_cast<double>(img.rows());
  const int width = std::max(1, static_cast<int>(std::lround(img.cols() * scale)));
  GrayImage out(height, width);
  const double sy = static_cast<double>(img.rows()) / height;
  const double sx = static_cast<double>(img.cols()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.rows() - 1));
    const auto y0 = static_cast<Eigen::Index>(fy);
    const auto y1 = std::min<Eigen::Index>(y0 + 1, img.rows() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.cols() - 1));
      const auto x0 = static_cast<Eigen::Index>(fx);
      const auto x1 = std::min<Eigen::Index>(x0 + 1, img.cols() - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = img(y0, x0) * (1 - wx) + img(y0, x1) * wx;
      const double bottom = img(y1, x0) * (1 - wx) + img(y1, x1) * wx;
      out(y, x) = static_cast<float>(top * (1 - wy) + bottom * wy);
    }
  }
  return out;
}

GrayImage quantize8(const GrayImage& img) {
  return img.unaryExpr([](float v) { return static_cast<float>(to_byte(v)) / 255.0f; });
}

GrayImage load_normalized(const std::string& path, int height) {
  const char* cache_dir = std::getenv("SMT_LAB_CACHE");
  if (!cache_dir || !*cache_dir) return resize_to_height(read_png(path), height);

  const auto bytes = read_bytes(path);
  char name[64];
  std::snprintf(name, sizeof name, "%016llx-h%d.gray",
                static_cast<unsigned long long>(fnv1a64(bytes)), height);
  const auto cached = std::filesystem::path(cache_dir) / name;
  if (std::ifstream in{cached, std::ios::binary}) {
    std::int32_t dims[2];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    GrayImage img(dims[0], dims[1]);
    in.read(reinterpret_cast<char*>(img.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(img.size())));
    if (in) return img;
  }
  GrayImage img = resize_to_height(read_png(path), height);
  std::filesystem::create_directories(cache_dir);
  const auto tmp = cached.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    const std::int32_t dims[2] = {static_cast<std::int32_t>(img.rows()),
                                  static_cast<std::int32_t>(img.cols())};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(img.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(img.size())));
  }
  std::filesystem::rename(tmp, cached);
  return img;
}

}  // namespace smt::image
