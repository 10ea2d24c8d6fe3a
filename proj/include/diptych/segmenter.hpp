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

// Background removal for the reference panel.
#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <string_view>

#include "diptych/image.hpp"

namespace diptych {

// Half-open pixel box [top, bottom) x [left, right).
struct Box {
  std::size_t top = 0, left = 0, bottom = 0, right = 0;
  bool contains(std::size_t y, std::size_t x) const { return y >= top && y < bottom && x >= left && x < right; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct SegmentationResult {
  BinaryMask mask;
  Box box;
  ToyImage segmented;  // input on mask = 1, fill elsewhere
};

// Builds the segmented image and tight box for a mask. Used by both the toy
// and the remote segmenter so their downstream semantics agree.
SegmentationResult make_result(const ToyImage& image, BinaryMask mask, const Box& box, const Rgb& fill);

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  // Throws EmptyDetectionError when no subject is found.
  virtual SegmentationResult segment(const ToyImage& image, std::string_view subject_name) const = 0;
};

struct ToySegmenterOptions {
  double threshold = 0.12;   // RGB distance from the background estimate
  int border_levels = 16;    // quantization levels for the modal border color
  Rgb fill = {1.0, 1.0, 1.0};
};

// Background color = mean of the border pixels in the modal quantized color
// bin. Foreground = pixels farther than `threshold` from it; the largest
// 4-connected component wins, with ties broken towards the color family named
// in the subject (then raster order). A uniform image whose color belongs to
// the named family is treated as all subject.
class ToySegmenter : public Segmenter {
 public:
  explicit ToySegmenter(ToySegmenterOptions options = {}) : options_(options) {}
  SegmentationResult segment(const ToyImage& image, std::string_view subject_name) const override;
  const ToySegmenterOptions& options() const { return options_; }

 private:
  ToySegmenterOptions options_;
};

SegmentationResult segment_subject(const ToyImage& image, std::string_view subject_name,
                                   const ToySegmenterOptions& options = {});

struct RemoteOptions {
  int retries = 3;  // total attempts
  std::chrono::milliseconds backoff{100};  // doubled after each failed attempt
  std::chrono::milliseconds timeout{5000};
  Rgb fill = {1.0, 1.0, 1.0};
};

// POSTs {"image": <base64 PNG>, "subject": <name>} to `endpoint` and parses
// {"box": [t, l, b, r], "mask": <base64 1-channel PNG>}. Transport failures
// and 5xx responses raise NetworkError, malformed payloads ProtocolError, in
// both cases after `retries` attempts.
SegmentationResult remote_segment(const std::string& endpoint, const ToyImage& image,
                                  std::string_view subject_name, const RemoteOptions& options = {});

class RemoteSegmenter : public Segmenter {
 public:
  explicit RemoteSegmenter(std::string endpoint, RemoteOptions options = {})
      : endpoint_(std::move(endpoint)), options_(options) {}
  SegmentationResult segment(const ToyImage& image, std::string_view subject_name) const override {
    return remote_segment(endpoint_, image, subject_name, options_);
  }

 private:
  std::string endpoint_;
  RemoteOptions options_;
};

inline constexpr const char* kSegmenterEndpointEnv = "DIPTYCH_SEGMENTER_URL";

// RemoteSegmenter when DIPTYCH_SEGMENTER_URL is set, ToySegmenter otherwise.
std::unique_ptr<Segmenter> make_default_segmenter(const Rgb& fill = {1.0, 1.0, 1.0});

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);  // ProtocolError on bad input

}  // namespace diptych
