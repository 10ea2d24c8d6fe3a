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

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace diptych {

using Rgb = std::array<double, 3>;

// Interleaved RGB image with channel values in [0, 1].
class ToyImage {
 public:
  static constexpr std::size_t kChannels = 3;

  ToyImage() = default;
  ToyImage(std::size_t height, std::size_t width, Rgb fill = {0.0, 0.0, 0.0});

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixel_count() const { return height_ * width_; }
  bool empty() const { return values_.empty(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) { return values_[(y * width_ + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return values_[(y * width_ + x) * 3 + c]; }
  Rgb pixel(std::size_t y, std::size_t x) const;
  void set_pixel(std::size_t y, std::size_t x, const Rgb& rgb);

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  // Columns [x0, x0 + w) and rows [y0, y0 + h).
  ToyImage crop(std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) const;

  friend bool operator==(const ToyImage&, const ToyImage&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

// Side-by-side concatenation; heights must match.
ToyImage hconcat(const ToyImage& left, const ToyImage& right);

// Single-channel binary grid, row-major.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}
  std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t count() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

double mask_iou(const BinaryMask& a, const BinaryMask& b);

// 8-bit quantization used by all persisted images: round(v * 255) clamped.
std::uint8_t quantize(double v);
// Snaps every value to the nearest representable 8-bit level.
ToyImage quantized(const ToyImage& image);

std::vector<std::uint8_t> encode_png(const ToyImage& image);
std::vector<std::uint8_t> encode_png(const BinaryMask& mask);  // 1-channel, 0/255
ToyImage decode_png_rgb(std::span<const std::uint8_t> bytes);
BinaryMask decode_png_mask(std::span<const std::uint8_t> bytes);  // > 127 => 1

void write_png(const std::filesystem::path& path, const ToyImage& image);
void write_png(const std::filesystem::path& path, const BinaryMask& mask);
ToyImage read_png(const std::filesystem::path& path);
BinaryMask read_png_mask(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_file_text(const std::filesystem::path& path);

}  // namespace diptych
