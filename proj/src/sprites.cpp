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

#include "diptych/sprites.hpp"

#include <algorithm>
#include <cmath>

#include "diptych/error.hpp"

namespace diptych::sprites {
namespace {

const std::vector<Attribute> kShapes = {{"circle", {}}, {"square", {}}, {"triangle", {}}};
const std::vector<Attribute> kColors = {{"red", {0.85, 0.15, 0.15}},
                                        {"green", {0.15, 0.75, 0.20}},
                                        {"blue", {0.15, 0.25, 0.85}},
                                        {"yellow", {0.90, 0.85, 0.15}}};
const std::vector<Attribute> kTextures = {{"solid", {}}, {"striped", {}}};
const std::vector<Attribute> kContexts = {{"purple", {0.55, 0.30, 0.70}},
                                          {"orange", {0.95, 0.55, 0.15}},
                                          {"cyan", {0.35, 0.80, 0.85}},
                                          {"pink", {0.95, 0.65, 0.80}},
                                          {"brown", {0.45, 0.30, 0.20}},
                                          {"olive", {0.55, 0.55, 0.25}}};

std::optional<std::size_t> find_in(std::span<const Attribute> table, std::string_view word) {
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].name == word) return i;
  }
  return std::nullopt;
}

bool inside(const Layout& l, std::size_t shape, double y, double x) {
  const double dy = y - l.center_y;
  const double dx = x - l.center_x;
  const double r = l.radius;
  switch (shape) {
    case 0:
      return dy * dy + dx * dx <= r * r;
    case 1:
      return std::abs(dy) <= 0.85 * r && std::abs(dx) <= 0.85 * r;
    default:
      // Upward isosceles triangle: apex at the top, base of half-width r.
      return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.5;
  }
}

}  // namespace

std::span<const Attribute> shapes() { return kShapes; }
std::span<const Attribute> colors() { return kColors; }
std::span<const Attribute> textures() { return kTextures; }
std::span<const Attribute> contexts() { return kContexts; }

std::optional<std::size_t> find_shape(std::string_view w) { return find_in(kShapes, w); }
std::optional<std::size_t> find_color(std::string_view w) { return find_in(kColors, w); }
std::optional<std::size_t> find_texture(std::string_view w) { return find_in(kTextures, w); }
std::optional<std::size_t> find_context(std::string_view w) { return find_in(kContexts, w); }

std::string SubjectClass::id() const {
  return kTextures.at(texture).name + "_" + kColors.at(color).name + "_" + kShapes.at(shape).name;
}

std::string SubjectClass::full_name() const {
  return kTextures.at(texture).name + " " + kColors.at(color).name + " " + kShapes.at(shape).name;
}

std::string SubjectClass::shape_name() const { return kShapes.at(shape).name; }

Layout random_layout(SeededRng& rng, std::size_t size) {
  const double s = static_cast<double>(size);
  Layout l;
  l.radius = s * (0.19 + 0.12 * rng.uniform());
  const double margin = l.radius + 1.0;
  l.center_y = rng.uniform(margin, s - margin);
  l.center_x = rng.uniform(margin, s - margin);
  return l;
}

Rendered render(const Scene& scene, std::size_t size) {
  const SubjectClass& sc = scene.subject;
  if (sc.shape >= kShapes.size() || sc.color >= kColors.size() || sc.texture >= kTextures.size()) {
    throw InputError("render: subject attribute out of range");
  }
  if (scene.context && *scene.context >= kContexts.size()) throw InputError("render: context out of range");
  const Rgb background = scene.context ? kContexts[*scene.context].rgb : kWhite;
  const Rgb base = kColors[sc.color].rgb;
  const Rgb dark = {base[0] * kStripeShade, base[1] * kStripeShade, base[2] * kStripeShade};
  const bool striped = kTextures[sc.texture].name == "striped";

  Rendered out{ToyImage(size, size, background), BinaryMask(size, size)};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      if (!inside(scene.layout, sc.shape, y + 0.5, x + 0.5)) continue;
      out.mask.at(y, x) = 1;
      out.image.set_pixel(y, x, (striped && (y / 2) % 2 == 1) ? dark : base);
    }
  }
  return out;
}

std::string context_phrase(std::size_t context) {
  const std::string& name = kContexts.at(context).name;
  const bool vowel = std::string_view("aeiou").find(name.front()) != std::string_view::npos;
  return std::string(vowel ? "on an " : "on a ") + name + " background";
}

std::string describe(const Scene& scene) {
  std::string s = "a photo of a " + scene.subject.full_name();
  if (scene.context) s += " " + context_phrase(*scene.context);
  return s;
}

std::string target_text(std::size_t shape, std::size_t context) {
  return "a " + kShapes.at(shape).name + " " + context_phrase(context);
}

const std::vector<std::string>& vocabulary_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w = {"a",     "an",          "diptych", "with",   "two",   "side-by-side",
                                  "images", "of",         "the",     "same",   "on",    "left",
                                  "right", "photo",       "replicate", "this", "exactly", "but",
                                  "as",    "background",  "style"};
    for (const auto* table : {&kShapes, &kColors, &kTextures, &kContexts}) {
      for (const Attribute& a : *table) {
        if (std::find(w.begin(), w.end(), a.name) == w.end()) w.push_back(a.name);
      }
    }
    return w;
  }();
  return words;
}

}  // namespace diptych::sprites
