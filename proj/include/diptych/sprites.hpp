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

// The synthetic sprite world: a closed vocabulary of shapes, colors, texture
// motifs and background contexts, a renderer, and the caption grammar that
// describes rendered scenes.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diptych/image.hpp"
#include "diptych/numerics.hpp"

namespace diptych::sprites {

struct Attribute {
  std::string name;
  Rgb rgb;  // unused for shapes and textures
};

std::span<const Attribute> shapes();     // circle, square, triangle
std::span<const Attribute> colors();     // red, green, blue, yellow
std::span<const Attribute> textures();   // solid, striped
std::span<const Attribute> contexts();   // background colors: purple, orange, cyan, pink, brown, olive

std::optional<std::size_t> find_shape(std::string_view word);
std::optional<std::size_t> find_color(std::string_view word);
std::optional<std::size_t> find_texture(std::string_view word);
std::optional<std::size_t> find_context(std::string_view word);

// Multiplier applied to the sprite color on the dark bands of "striped".
inline constexpr double kStripeShade = 0.55;
inline constexpr Rgb kWhite = {1.0, 1.0, 1.0};

struct SubjectClass {
  std::size_t shape = 0;
  std::size_t color = 0;
  std::size_t texture = 0;

  std::string id() const;         // "striped_red_circle"
  std::string full_name() const;  // "striped red circle"
  std::string shape_name() const;
  friend bool operator==(const SubjectClass&, const SubjectClass&) = default;
};

struct Layout {
  double center_y = 16.0;
  double center_x = 16.0;
  double radius = 8.0;
};

Layout random_layout(SeededRng& rng, std::size_t size);

struct Scene {
  SubjectClass subject;
  std::optional<std::size_t> context;  // nullopt: plain white background
  Layout layout;
};

struct Rendered {
  ToyImage image;
  BinaryMask mask;  // exact sprite support
};

// Renders a size x size panel. Pixel (y, x) belongs to the sprite when its
// center (y + 0.5, x + 0.5) lies inside the shape.
Rendered render(const Scene& scene, std::size_t size);

// "a photo of a striped red circle on a purple background".
std::string describe(const Scene& scene);
// "on a purple background" / "on an orange background".
std::string context_phrase(std::size_t context);
// Target text used by subject-driven prompts: "a circle on a purple background".
std::string target_text(std::size_t shape, std::size_t context);

// All words that can appear in captions, including the diptych templates.
const std::vector<std::string>& vocabulary_words();

}  // namespace diptych::sprites
