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

#include <gtest/gtest.h>

#include <set>

#include "diptych/caption.hpp"
#include "diptych/error.hpp"
#include "diptych/sprites.hpp"

namespace diptych {
namespace {

ToyImage random_image(SeededRng& rng, std::size_t h, std::size_t w) {
  ToyImage img(h, w);
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

TEST(Canvas, LeftHalfIsReferenceAndRightIsBlank) {
  SeededRng rng(11);
  const ToyImage ref = random_image(rng, 32, 32);
  const DiptychCanvas c = build_canvas(ref);
  EXPECT_EQ(c.left, ref);
  const ToyImage composed = c.compose();
  ASSERT_EQ(composed.height(), 32u);
  ASSERT_EQ(composed.width(), 64u);
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        EXPECT_EQ(composed.at(y, x, ch), x < 32 ? ref.at(y, x, ch) : kBlankFill);
      }
    }
  }
}

TEST(Canvas, RejectsNonSquareReference) {
  EXPECT_THROW(build_canvas(ToyImage(32, 16)), ShapeError);
  EXPECT_THROW(build_canvas(ToyImage()), ShapeError);
}

TEST(Canvas, EditingCanvasKeepsTarget) {
  SeededRng rng(12);
  const ToyImage ref = random_image(rng, 32, 32), target = random_image(rng, 32, 32);
  const DiptychCanvas c = build_canvas_editing(ref, target);
  EXPECT_EQ(c.left, ref);
  EXPECT_EQ(c.right, target);
  const DiptychCanvas sym = build_canvas_editing(ref, ref);
  EXPECT_EQ(sym.left, sym.right);
  EXPECT_THROW(build_canvas_editing(ref, ToyImage(32, 31)), ShapeError);
}

TEST(Canvas, EditingWithFullRightMaskMatchesGenerationMask) {
  SeededRng rng(13);
  const ToyImage ref = random_image(rng, 32, 32), target = random_image(rng, 32, 32);
  const DiptychMask full = build_mask(32, 32, FullRight{});
  const ToyImage gen = build_canvas(ref).compose();
  const ToyImage edit = build_canvas_editing(ref, target).compose();
  // Wherever the mask keeps pixels, both canvases agree.
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      if (full.values.at(y, x) == 0) {
        EXPECT_EQ(gen.pixel(y, x), edit.pixel(y, x));
      }
    }
  }
}

TEST(Canvas, SplitRoundTrip) {
  SeededRng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 1 + rng.below(20), w = 1 + rng.below(20);
    const DiptychCanvas c{random_image(rng, h, w), random_image(rng, h, w)};
    const DiptychCanvas back = DiptychCanvas::split(c.compose());
    EXPECT_EQ(back.left, c.left);
    EXPECT_EQ(back.right, c.right);
  }
  EXPECT_THROW(DiptychCanvas::split(ToyImage(4, 7)), ShapeError);
}

TEST(Mask, FullRightHas1024OnesInRightColumns) {
  const DiptychMask m = build_mask(32, 32, FullRight{});
  EXPECT_EQ(m.values.height, 32u);
  EXPECT_EQ(m.values.width, 64u);
  EXPECT_EQ(m.values.count(), 1024u);
  std::size_t left_sum = 0;
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      if (x < 32) left_sum += m.values.at(y, x);
      else EXPECT_EQ(m.values.at(y, x), 1);
    }
  }
  EXPECT_EQ(left_sum, 0u);
}

TEST(Mask, RectangleArea) {
  const DiptychMask m = build_mask(32, 32, MaskRect{8, 40, 16, 48});
  EXPECT_EQ(m.values.count(), 64u);
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      EXPECT_EQ(m.values.at(y, x), (y >= 8 && y < 16 && x >= 40 && x < 48) ? 1 : 0);
    }
  }
}

TEST(Mask, RegionErrors) {
  EXPECT_THROW(build_mask(32, 32, MaskRect{8, 40, 8, 48}), RegionError);   // zero area
  EXPECT_THROW(build_mask(32, 32, MaskRect{8, 28, 16, 40}), RegionError);  // crosses the seam
  EXPECT_THROW(build_mask(32, 32, MaskRect{8, 40, 16, 68}), RegionError);  // past the right edge
  EXPECT_THROW(build_mask(32, 32, MaskRect{8, 40, 36, 48}), RegionError);  // past the bottom
  EXPECT_THROW(build_mask(32, 32, MaskRect{8, 41, 16, 48}), RegionError);  // off the patch grid
  EXPECT_NO_THROW(build_mask(32, 32, MaskRect{8, 41, 16, 48}, 1));
}

TEST(Mask, RandomAlignedRectanglesNeverTouchLeftPanel) {
  SeededRng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t top = 4 * rng.below(8), bottom = top + 4 * (1 + rng.below((32 - top) / 4));
    const std::size_t left = 32 + 4 * rng.below(8), right = left + 4 * (1 + rng.below((64 - left) / 4));
    const DiptychMask m = build_mask(32, 32, MaskRect{top, left, bottom, right});
    EXPECT_EQ(m.values.count(), (bottom - top) * (right - left));
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) EXPECT_EQ(m.values.at(y, x), 0);
    }
  }
}

TEST(Prompt, SubjectInpaintGolden) {
  const DiptychPrompt p = render_prompt(PromptKind::kSubjectInpaint, "cat", "", "a photo of a cat in the jungle");
  EXPECT_EQ(p.rendered,
            "A diptych with two side-by-side images of same cat. On the left, a photo of cat. On the right, "
            "replicate this cat exactly but as a photo of a cat in the jungle");
}

TEST(Prompt, GenerationGolden) {
  const DiptychPrompt p = render_prompt(PromptKind::kGeneration, "cat", "a photo of a cat in front of Eiffel Tower",
                                        "a photo of a cat in the jungle");
  EXPECT_EQ(p.rendered,
            "A diptych with two side-by-side images of the same cat. On the left, a photo of a cat in front of "
            "Eiffel Tower. On the right, replicate this cat but as a photo of a cat in the jungle");
}

TEST(Prompt, StyleInpaintGolden) {
  const DiptychPrompt p =
      render_prompt(PromptKind::kStyleInpaint, "", "a watercolor painting of a house", "a watercolor painting of a dog");
  EXPECT_EQ(p.rendered,
            "A diptych with two side-by-side images of same style. On the left, a watercolor painting of a house. "
            "On the right, replicate this style exactly but as a watercolor painting of a dog");
  EXPECT_EQ(p.subject, "style");
}

TEST(Prompt, EmptyPlaceholdersRejected) {
  EXPECT_THROW(render_prompt(PromptKind::kSubjectInpaint, "", "", "x"), TemplateError);
  EXPECT_THROW(render_prompt(PromptKind::kSubjectInpaint, "cat", "", ""), TemplateError);
  EXPECT_THROW(render_prompt(PromptKind::kGeneration, "cat", "", "x"), TemplateError);
  EXPECT_THROW(render_prompt(PromptKind::kStyleInpaint, "", "", "x"), TemplateError);
}

TEST(Prompt, KindNamesRoundTrip) {
  for (PromptKind k : {PromptKind::kGeneration, PromptKind::kSubjectInpaint, PromptKind::kStyleInpaint}) {
    EXPECT_EQ(prompt_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(prompt_kind_from_string("triptych"), TemplateError);
}

TEST(Prompt, SpriteFillsTokenizeWithinCaptionLength) {
  const Tokenizer& tok = default_tokenizer();
  for (std::size_t s = 0; s < sprites::shapes().size(); ++s) {
    for (std::size_t c = 0; c < sprites::contexts().size(); ++c) {
      const std::string shape = sprites::shapes()[s].name;
      const auto p = render_prompt(PromptKind::kSubjectInpaint, shape, "", sprites::target_text(s, c));
      const Caption cap = tok.encode(p.rendered, kDefaultCaptionLength);
      EXPECT_EQ(cap.length(), kDefaultCaptionLength);
      EXPECT_FALSE(cap.is_unconditional());
    }
  }
}

TEST(Tokenizer, EncodeDecodeAndErrors) {
  const Tokenizer& tok = default_tokenizer();
  const Caption c = tok.encode("A photo of a Striped red circle.", 10);
  const std::vector<std::string> expect = {"a", "photo", "of", "a", "striped", "red", "circle"};
  EXPECT_EQ(tok.decode(c), expect);
  EXPECT_EQ(c.ids[7], Tokenizer::kPad);
  EXPECT_THROW(tok.encode("a photo of a unicorn", 10), InputError);
  EXPECT_THROW(tok.encode("a a a a", 3), InputError);
  EXPECT_TRUE(tok.unconditional(5).is_unconditional());
  // Distinct words receive distinct ids.
  std::set<std::int32_t> ids;
  for (const auto& w : sprites::vocabulary_words()) ids.insert(tok.encode(w, 1).ids[0]);
  EXPECT_EQ(ids.size(), sprites::vocabulary_words().size());
}

TEST(Image, PngRoundTripIsQuantized) {
  SeededRng rng(16);
  const ToyImage img = random_image(rng, 9, 13);
  const ToyImage back = decode_png_rgb(encode_png(img));
  EXPECT_EQ(back, quantized(img));
  BinaryMask m(5, 7);
  for (auto& v : m.values) v = rng.below(2);
  EXPECT_EQ(decode_png_mask(encode_png(m)), m);
}

TEST(Image, MaskIou) {
  BinaryMask a(2, 2), b(2, 2);
  a.at(0, 0) = a.at(0, 1) = 1;
  b.at(0, 1) = b.at(1, 1) = 1;
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(mask_iou(a, a), 1.0);
}

TEST(Sprites, RenderMatchesMaskAndCaption) {
  SeededRng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    sprites::Scene s{{rng.below(3), rng.below(4), rng.below(2)}, rng.below(sprites::contexts().size()), sprites::random_layout(rng, 32)};
    const auto r = sprites::render(s, 32);
    const Rgb bg = sprites::contexts()[*s.context].rgb;
    EXPECT_GT(r.mask.count(), 20u);
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        if (!r.mask.at(y, x)) {
          EXPECT_EQ(r.image.pixel(y, x), bg);
        }
      }
    }
    EXPECT_NO_THROW(default_tokenizer().encode(sprites::describe(s), kDefaultCaptionLength));
  }
  const sprites::Scene plain{{0, 0, 1}, std::nullopt, {}};
  EXPECT_EQ(sprites::describe(plain), "a photo of a striped red circle");
  EXPECT_EQ(sprites::target_text(1, 0), "a square on a purple background");
}

}  // namespace
}  // namespace diptych
