// Copyright 2026 The Diptych Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "diptych/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "diptych/error.hpp"

namespace diptych {

ToyImage::ToyImage(std::size_t height, std::size_t width, Rgb fill)
    : height_(height), width_(width), values_(height * width * kChannels) {
  for (std::size_t i = 0; i < height * width; ++i) {
    std::copy(fill.begin(), fill.end(), values_.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
}

Rgb ToyImage::pixel(std::size_t y, std::size_t x) const {
  const double* p = &values_[(y * width_ + x) * 3];
  return {p[0], p[1], p[2]};
}

void ToyImage::set_pixel(std::size_t y, std::size_t x, const Rgb& rgb) {
  std::copy(rgb.begin(), rgb.end(), values_.begin() + static_cast<std::ptrdiff_t>((y * width_ + x) * 3));
}

ToyImage ToyImage::crop(std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) const {
  if (y0 + h > height_ || x0 + w > width_) throw ShapeError("crop rectangle exceeds image bounds");
  ToyImage out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const auto src = values_.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * width_ + x0) * 3);
    std::copy(src, src + static_cast<std::ptrdiff_t>(w * 3), out.values_.begin() + static_cast<std::ptrdiff_t>(y * w * 3));
  }
  return out;
}

ToyImage hconcat(const ToyImage& left, const ToyImage& right) {
  if (left.height() != right.height()) throw ShapeError("hconcat: heights differ");
  ToyImage out(left.height(), left.width() + right.width());
  for (std::size_t y = 0; y < left.height(); ++y) {
    for (std::size_t x = 0; x < left.width(); ++x) out.set_pixel(y, x, left.pixel(y, x));
    for (std::size_t x = 0; x < right.width(); ++x) out.set_pixel(y, left.width() + x, right.pixel(y, x));
  }
  return out;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("mask_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    inter += (a.values[i] && b.values[i]) ? 1 : 0;
    uni += (a.values[i] || b.values[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::uint8_t quantize(double v) {
  const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(q);
}

ToyImage quantized(const ToyImage& image) {
  ToyImage out = image;
  for (double& v : out.values()) v = quantize(v) / 255.0;
  return out;
}

namespace {

std::vector<std::uint8_t> encode_raw(const std::uint8_t* pixels, std::size_t h, std::size_t w,
                                     png_uint_32 format) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> decode_raw(std::span<const std::uint8_t> bytes, png_uint_32 format,
                                     std::size_t& h, std::size_t& w) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError(std::string("png decode failed: ") + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError(std::string("png decode failed: ") + img.message);
  }
  h = img.height;
  w = img.width;
  return pixels;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const ToyImage& image) {
  std::vector<std::uint8_t> px(image.values().size());
  std::transform(image.values().begin(), image.values().end(), px.begin(), quantize);
  return encode_raw(px.data(), image.height(), image.width(), PNG_FORMAT_RGB);
}

std::vector<std::uint8_t> encode_png(const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.values.size());
  std::transform(mask.values.begin(), mask.values.end(), px.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
  return encode_raw(px.data(), mask.height, mask.width, PNG_FORMAT_GRAY);
}

ToyImage decode_png_rgb(std::span<const std::uint8_t> bytes) {
  std::size_t h = 0, w = 0;
  const auto px = decode_raw(bytes, PNG_FORMAT_RGB, h, w);
  ToyImage out(h, w);
  std::transform(px.begin(), px.end(), out.values().begin(), [](std::uint8_t v) { return v / 255.0; });
  return out;
}

BinaryMask decode_png_mask(std::span<const std::uint8_t> bytes) {
  std::size_t h = 0, w = 0;
  const auto px = decode_raw(bytes, PNG_FORMAT_GRAY, h, w);
  BinaryMask out(h, w);
  std::transform(px.begin(), px.end(), out.values.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v > 127 ? 1 : 0); });
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_file_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_png(const std::filesystem::path& path, const ToyImage& image) { write_file(path, encode_png(image)); }
void write_png(const std::filesystem::path& path, const BinaryMask& mask) { write_file(path, encode_png(mask)); }
ToyImage read_png(const std::filesystem::path& path) { return decode_png_rgb(read_file(path)); }
BinaryMask read_png_mask(const std::filesystem::path& path) { return decode_png_mask(read_file(path)); }

}  // namespace diptych
