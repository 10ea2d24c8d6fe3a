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

#include "diptych/canvas.hpp"

#include "diptych/error.hpp"

namespace diptych {

ToyImage DiptychCanvas::compose() const { return hconcat(left, right); }

DiptychCanvas DiptychCanvas::split(const ToyImage& composed) {
  if (composed.width() % 2 != 0) throw ShapeError("diptych width must be even");
  const std::size_t w = composed.width() / 2;
  return {composed.crop(0, 0, composed.height(), w), composed.crop(0, w, composed.height(), w)};
}

DiptychCanvas build_canvas(const ToyImage& reference) {
  if (reference.empty() || reference.height() != reference.width()) {
    throw ShapeError("reference panel must be square and nonempty");
  }
  return {reference, ToyImage(reference.height(), reference.width(), {kBlankFill, kBlankFill, kBlankFill})};
}

DiptychCanvas build_canvas_editing(const ToyImage& reference, const ToyImage& target) {
  if (reference.empty() || reference.height() != reference.width()) {
    throw ShapeError("reference panel must be square and nonempty");
  }
  if (target.height() != reference.height() || target.width() != reference.width()) {
    throw ShapeError("editing target must match the reference panel size");
  }
  return {reference, target};
}

DiptychMask build_mask(std::size_t h, std::size_t w, const MaskRegion& region, std::size_t patch) {
  if (h == 0 || w == 0) throw ShapeError("mask panels must be nonempty");
  DiptychMask m{BinaryMask(h, 2 * w), region};
  if (std::holds_alternative<FullRight>(region)) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = w; x < 2 * w; ++x) m.values.at(y, x) = 1;
    }
    return m;
  }
  const MaskRect& r = std::get<MaskRect>(region);
  if (r.bottom <= r.top || r.right <= r.left) throw RegionError("edit rectangle has zero area");
  if (r.left < w || r.right > 2 * w || r.bottom > h) {
    throw RegionError("edit rectangle must lie inside the right panel");
  }
  if (patch > 1 && (r.top % patch || r.bottom % patch || r.left % patch || r.right % patch)) {
    throw RegionError("edit rectangle must align to the " + std::to_string(patch) + "-pixel patch grid");
  }
  for (std::size_t y = r.top; y < r.bottom; ++y) {
    for (std::size_t x = r.left; x < r.right; ++x) m.values.at(y, x) = 1;
  }
  return m;
}

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::kGeneration:
      return "generation";
    case PromptKind::kSubjectInpaint:
      return "subject-inpaint";
    case PromptKind::kStyleInpaint:
      return "style-inpaint";
  }
  return "unknown";
}

PromptKind prompt_kind_from_string(std::string_view s) {
  if (s == "generation") return PromptKind::kGeneration;
  if (s == "subject-inpaint") return PromptKind::kSubjectInpaint;
  if (s == "style-inpaint") return PromptKind::kStyleInpaint;
  throw TemplateError("unknown prompt kind '" + std::string(s) + "'");
}

namespace {

void require(std::string_view value, const char* placeholder) {
  if (value.empty()) throw TemplateError(std::string("empty template placeholder {") + placeholder + "}");
}

}  // namespace

DiptychPrompt render_prompt(PromptKind kind, std::string_view subject, std::string_view left_desc,
                            std::string_view target_text) {
  DiptychPrompt p;
  p.kind = kind;
  p.target_text = target_text;
  switch (kind) {
    case PromptKind::kGeneration:
      require(subject, "object");
      require(left_desc, "description of left image");
      require(target_text, "description of right image");
      p.subject = subject;
      p.left_desc = left_desc;
      p.rendered = "A diptych with two side-by-side images of the same " + p.subject + ". On the left, " +
                   p.left_desc + ". On the right, replicate this " + p.subject + " but as " + p.target_text;
      break;
    case PromptKind::kSubjectInpaint:
      require(subject, "subject name");
      require(target_text, "target text prompt");
      p.subject = subject;
      p.rendered = "A diptych with two side-by-side images of same " + p.subject + ". On the left, a photo of " +
                   p.subject + ". On the right, replicate this " + p.subject + " exactly but as " +
                   p.target_text;
      break;
    case PromptKind::kStyleInpaint:
      require(left_desc, "original image description");
      require(target_text, "target image description");
      p.subject = "style";
      p.left_desc = left_desc;
      p.rendered = "A diptych with two side-by-side images of same style. On the left, " + p.left_desc +
                   ". On the right, replicate this style exactly but as " + p.target_text;
      break;
  }
  return p;
}

}  // namespace diptych
