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

// The inpainting triplet: two-panel canvas, binary mask, and diptych text.
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>

#include "diptych/image.hpp"

namespace diptych {

// Value of every channel in the blank right panel.
inline constexpr double kBlankFill = 0.5;

struct DiptychCanvas {
  ToyImage left;   // reference panel
  ToyImage right;  // blank or editing target

  std::size_t panel_height() const { return left.height(); }
  std::size_t panel_width() const { return left.width(); }
  // panel_height x 2 * panel_width image.
  ToyImage compose() const;
  // Inverse of compose(); throws ShapeError on odd widths.
  static DiptychCanvas split(const ToyImage& composed);
};

// Reference on the left, uniform kBlankFill on the right.
DiptychCanvas build_canvas(const ToyImage& reference);
// Reference on the left, editing target on the right.
DiptychCanvas build_canvas_editing(const ToyImage& reference, const ToyImage& target);

struct FullRight {};
// Half-open canvas rectangle [top, bottom) x [left, right).
struct MaskRect {
  std::size_t top = 0, left = 0, bottom = 0, right = 0;
  std::size_t area() const { return (bottom - top) * (right - left); }
};
using MaskRegion = std::variant<FullRight, MaskRect>;

struct DiptychMask {
  BinaryMask values;  // panel_height x 2 * panel_width; 1 = synthesize
  MaskRegion region;
};

// Zeros everywhere except the region. Rectangles must have positive area,
// lie inside the right panel, and align to `patch` (pass 1 to skip the grid
// check); violations raise RegionError.
DiptychMask build_mask(std::size_t h, std::size_t w, const MaskRegion& region, std::size_t patch = 4);

enum class PromptKind { kGeneration, kSubjectInpaint, kStyleInpaint };

std::string_view to_string(PromptKind kind);
PromptKind prompt_kind_from_string(std::string_view s);

struct DiptychPrompt {
  PromptKind kind = PromptKind::kSubjectInpaint;
  std::string subject;      // object / subject name; "style" for style prompts
  std::string left_desc;    // empty for subject prompts
  std::string target_text;
  std::string rendered;
};

// Fills the template for `kind`. Placeholders the template uses must be
// nonempty (TemplateError otherwise); the others are ignored.
//   generation:      subject = object, left_desc, target_text = right desc
//   subject-inpaint: subject, target_text
//   style-inpaint:   left_desc = original description, target_text
DiptychPrompt render_prompt(PromptKind kind, std::string_view subject, std::string_view left_desc,
                            std::string_view target_text);

}  // namespace diptych
