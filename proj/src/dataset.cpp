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

#include "diptych/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "diptych/caption.hpp"
#include "diptych/error.hpp"

namespace diptych {

using nlohmann::json;

std::string_view to_string(ItemKind kind) {
  switch (kind) {
    case ItemKind::kSingle:
      return "single";
    case ItemKind::kSubjectDiptych:
      return "subject-diptych";
    case ItemKind::kGenerationDiptych:
      return "generation-diptych";
    case ItemKind::kStyleDiptych:
      return "style-diptych";
  }
  return "unknown";
}

namespace {

ItemKind item_kind_from_string(std::string_view s) {
  for (ItemKind k : {ItemKind::kSingle, ItemKind::kSubjectDiptych, ItemKind::kGenerationDiptych,
                     ItemKind::kStyleDiptych}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown dataset item kind '" + std::string(s) + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::string item_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "item_%05zu", i);
  return buf;
}

sprites::SubjectClass random_subject(SeededRng& rng) {
  return {rng.below(sprites::shapes().size()), rng.below(sprites::colors().size()),
          rng.below(sprites::textures().size())};
}

std::size_t random_context(SeededRng& rng) { return rng.below(sprites::contexts().size()); }

std::vector<sprites::SubjectClass> all_subject_classes() {
  std::vector<sprites::SubjectClass> out;
  for (std::size_t t = 0; t < sprites::textures().size(); ++t) {
    for (std::size_t c = 0; c < sprites::colors().size(); ++c) {
      for (std::size_t s = 0; s < sprites::shapes().size(); ++s) out.push_back({s, c, t});
    }
  }
  return out;
}

template <typename T>
void shuffle(std::vector<T>& v, SeededRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

DatasetItem make_item(const DatasetSpec& spec, std::uint64_t seed, std::size_t index) {
  SeededRng rng(mix_seed({seed, 0x64617461ULL, index}));
  const double total = spec.single_weight + spec.subject_weight + spec.generation_weight + spec.style_weight;
  double u = rng.uniform() * total;
  ItemKind kind = ItemKind::kStyleDiptych;
  if ((u -= spec.single_weight) < 0) kind = ItemKind::kSingle;
  else if ((u -= spec.subject_weight) < 0) kind = ItemKind::kSubjectDiptych;
  else if ((u -= spec.generation_weight) < 0) kind = ItemKind::kGenerationDiptych;

  DatasetItem item;
  item.id = item_id(index);
  item.kind = kind;
  item.left.subject = random_subject(rng);
  item.left.layout = sprites::random_layout(rng, spec.panel);
  if (kind == ItemKind::kSingle) {
    if (rng.uniform() >= spec.white_single) item.left.context = random_context(rng);
    const auto r = sprites::render(item.left, spec.panel);
    item.image = r.image;
    item.mask = r.mask;
    item.caption = sprites::describe(item.left);
    return item;
  }

  const bool white = rng.uniform() < spec.white_left;
  if (!white) item.left.context = random_context(rng);
  sprites::Scene right;
  right.subject = item.left.subject;
  right.layout = sprites::random_layout(rng, spec.panel);
  const bool keep = item.left.context && rng.uniform() < spec.same_context;
  right.context = keep ? *item.left.context : random_context(rng);
  if (kind == ItemKind::kStyleDiptych) {
    const std::size_t shift = 1 + rng.below(sprites::shapes().size() - 1);
    right.subject.shape = (item.left.subject.shape + shift) % sprites::shapes().size();
  }
  const std::string shape = right.subject.shape_name();
  switch (kind) {
    case ItemKind::kSubjectDiptych:
      item.caption = render_prompt(PromptKind::kSubjectInpaint, item.left.subject.shape_name(), "",
                                   sprites::target_text(right.subject.shape, *right.context))
                         .rendered;
      break;
    case ItemKind::kGenerationDiptych:
      item.caption = render_prompt(PromptKind::kGeneration, item.left.subject.shape_name(),
                                   sprites::describe(item.left), sprites::describe(right))
                         .rendered;
      break;
    default:
      item.caption = render_prompt(PromptKind::kStyleInpaint, "", sprites::describe(item.left),
                                   sprites::target_text(right.subject.shape, *right.context))
                         .rendered;
      break;
  }
  const auto l = sprites::render(item.left, spec.panel);
  const auto r = sprites::render(right, spec.panel);
  item.image = hconcat(l.image, r.image);
  item.mask = BinaryMask(spec.panel, 2 * spec.panel);
  for (std::size_t y = 0; y < spec.panel; ++y) {
    for (std::size_t x = 0; x < spec.panel; ++x) {
      item.mask.at(y, x) = l.mask.at(y, x);
      item.mask.at(y, x + spec.panel) = r.mask.at(y, x);
    }
  }
  item.right = right;
  return item;
}

}  // namespace

json DatasetSpec::to_json() const {
  return {{"panel", panel},
          {"count", count},
          {"single_weight", single_weight},
          {"subject_weight", subject_weight},
          {"generation_weight", generation_weight},
          {"style_weight", style_weight},
          {"white_single", white_single},
          {"white_left", white_left},
          {"same_context", same_context}};
}

DatasetSpec DatasetSpec::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("dataset spec must be a JSON object");
  DatasetSpec s;
  s.panel = get_or(j, "panel", s.panel);
  s.count = get_or(j, "count", s.count);
  s.single_weight = get_or(j, "single_weight", s.single_weight);
  s.subject_weight = get_or(j, "subject_weight", s.subject_weight);
  s.generation_weight = get_or(j, "generation_weight", s.generation_weight);
  s.style_weight = get_or(j, "style_weight", s.style_weight);
  s.white_single = get_or(j, "white_single", s.white_single);
  s.white_left = get_or(j, "white_left", s.white_left);
  s.same_context = get_or(j, "same_context", s.same_context);
  s.validate();
  return s;
}

void DatasetSpec::validate() const {
  if (panel < 8 || panel % 4 != 0) throw ConfigError("dataset panel must be a multiple of 4 and at least 8");
  if (count == 0) throw ConfigError("dataset count must be positive");
  for (double w : {single_weight, subject_weight, generation_weight, style_weight}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("dataset mixture weights must be >= 0");
  }
  if (single_weight + subject_weight + generation_weight + style_weight <= 0.0) {
    throw ConfigError("dataset mixture weights sum to zero");
  }
  for (double p : {white_single, white_left, same_context}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("dataset probabilities must lie in [0, 1]");
  }
}

std::vector<DatasetItem> build_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<DatasetItem> items;
  items.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) items.push_back(make_item(spec, seed, i));
  return items;
}

std::vector<TrainingSample> to_training_samples(const std::vector<DatasetItem>& items, std::size_t text_length) {
  std::vector<TrainingSample> out;
  out.reserve(items.size());
  for (const DatasetItem& it : items) {
    out.push_back({it.image, default_tokenizer().encode(it.caption, text_length)});
  }
  return out;
}

json scene_to_json(const sprites::Scene& s) {
  return {{"shape", sprites::shapes()[s.subject.shape].name},
          {"color", sprites::colors()[s.subject.color].name},
          {"texture", sprites::textures()[s.subject.texture].name},
          {"context", s.context ? json(sprites::contexts()[*s.context].name) : json(nullptr)},
          {"center_y", s.layout.center_y},
          {"center_x", s.layout.center_x},
          {"radius", s.layout.radius}};
}

sprites::Scene scene_from_json(const json& j) {
  const auto need = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw ConfigError(std::string("scene is missing '") + key + "'");
    return j.at(key);
  };
  const auto lookup = [](auto found, const std::string& word) {
    if (!found) throw ConfigError("unknown sprite attribute '" + word + "'");
    return *found;
  };
  sprites::Scene s;
  try {
    const std::string shape = need("shape"), color = need("color"), texture = need("texture");
    s.subject.shape = lookup(sprites::find_shape(shape), shape);
    s.subject.color = lookup(sprites::find_color(color), color);
    s.subject.texture = lookup(sprites::find_texture(texture), texture);
    if (!need("context").is_null()) {
      const std::string ctx = need("context");
      s.context = lookup(sprites::find_context(ctx), ctx);
    }
    s.layout.center_y = need("center_y");
    s.layout.center_x = need("center_x");
    s.layout.radius = need("radius");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed scene: ") + e.what());
  }
  return s;
}

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, std::uint64_t seed,
                   const std::vector<DatasetItem>& items) {
  json manifest = {{"schema", "diptych.dataset"}, {"schema_version", 1}, {"seed", seed}, {"spec", spec.to_json()}};
  json classes = json::array();
  for (const auto& c : all_subject_classes()) classes.push_back(c.id());
  manifest["subject_classes"] = classes;
  json list = json::array();
  for (const DatasetItem& it : items) {
    const std::string image = "images/" + it.id + ".png", mask = "masks/" + it.id + ".png";
    write_png(dir / image, it.image);
    write_png(dir / mask, it.mask);
    json e = {{"id", it.id},       {"kind", to_string(it.kind)}, {"caption", it.caption},
              {"image", image},    {"mask", mask},               {"subject_class", it.left.subject.id()},
              {"left", scene_to_json(it.left)}};
    e["right"] = it.right ? scene_to_json(*it.right) : json(nullptr);
    list.push_back(std::move(e));
  }
  manifest["items"] = std::move(list);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
  const std::filesystem::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open dataset manifest " + manifest_path.string());
  LoadedDataset out;
  try {
    const json m = json::parse(in);
    if (m.at("schema") != "diptych.dataset" || m.at("schema_version") != 1) {
      throw ConfigError("unsupported dataset manifest schema");
    }
    out.seed = m.at("seed");
    out.spec = DatasetSpec::from_json(m.at("spec"));
    for (const json& e : m.at("items")) {
      DatasetItem it;
      it.id = e.at("id");
      it.kind = item_kind_from_string(e.at("kind").get<std::string>());
      it.caption = e.at("caption");
      it.left = scene_from_json(e.at("left"));
      if (!e.at("right").is_null()) it.right = scene_from_json(e.at("right"));
      it.image = read_png(dir / e.at("image").get<std::string>());
      it.mask = read_png_mask(dir / e.at("mask").get<std::string>());
      if (it.mask.height != it.image.height() || it.mask.width != it.image.width()) {
        throw ConfigError("dataset item " + it.id + " has a mask of the wrong size");
      }
      out.items.push_back(std::move(it));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed dataset manifest: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark

json BenchmarkSpec::to_json() const {
  return {{"panel", panel},   {"subjects", subjects}, {"prompts", prompts}, {"images_per_cell", images_per_cell},
          {"styles", styles}, {"edits", edits}};
}

BenchmarkSpec BenchmarkSpec::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("benchmark spec must be a JSON object");
  BenchmarkSpec s;
  s.panel = get_or(j, "panel", s.panel);
  s.subjects = get_or(j, "subjects", s.subjects);
  s.prompts = get_or(j, "prompts", s.prompts);
  s.images_per_cell = get_or(j, "images_per_cell", s.images_per_cell);
  s.styles = get_or(j, "styles", s.styles);
  s.edits = get_or(j, "edits", s.edits);
  if (s.subjects == 0 || s.subjects > all_subject_classes().size()) throw ConfigError("benchmark subjects out of range");
  if (s.prompts == 0 || s.prompts >= sprites::contexts().size()) {
    throw ConfigError("benchmark prompts must be fewer than the number of contexts");
  }
  if (s.images_per_cell == 0) throw ConfigError("benchmark images_per_cell must be positive");
  return s;
}

namespace {

BenchmarkPrompt make_prompt(std::size_t index, std::size_t shape, std::size_t context) {
  return {"p" + std::to_string(index), context, sprites::target_text(shape, context)};
}

json prompt_to_json(const BenchmarkPrompt& p) {
  return {{"id", p.id}, {"context", sprites::contexts()[p.context].name}, {"text", p.text}};
}

BenchmarkPrompt prompt_from_json(const json& j) {
  BenchmarkPrompt p;
  p.id = j.at("id");
  const std::string ctx = j.at("context");
  const auto c = sprites::find_context(ctx);
  if (!c) throw ConfigError("unknown context '" + ctx + "'");
  p.context = *c;
  p.text = j.at("text");
  return p;
}

// Patch-aligned box around the sprite, grown by one patch, clipped to the
// panel, in canvas coordinates of the right panel.
MaskRect edit_rect(const BinaryMask& mask, std::size_t panel) {
  std::size_t t = panel, l = panel, b = 0, r = 0;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      t = std::min(t, y);
      l = std::min(l, x);
      b = std::max(b, y + 1);
      r = std::max(r, x + 1);
    }
  }
  const auto down = [](std::size_t v) { return v / 4 * 4; };
  const auto up = [panel](std::size_t v) { return std::min(panel, (v + 3) / 4 * 4); };
  t = down(t >= 4 ? t - 4 : 0);
  l = down(l >= 4 ? l - 4 : 0);
  b = up(b + 4);
  r = up(r + 4);
  return {t, l + panel, b, r + panel};
}

}  // namespace

BenchmarkManifest build_benchmark(const BenchmarkSpec& spec, std::uint64_t seed) {
  BenchmarkManifest m;
  m.spec = spec;
  m.seed = seed;
  SeededRng rng(mix_seed({seed, 0x62656e6368ULL}));
  auto classes = all_subject_classes();
  shuffle(classes, rng);
  const std::size_t n_ctx = sprites::contexts().size();
  for (std::size_t i = 0; i < spec.subjects; ++i) {
    BenchmarkSubject s;
    s.subject = classes[i];
    s.id = s.subject.id();
    s.name = s.subject.shape_name();
    s.scene.subject = s.subject;
    s.scene.context = rng.below(n_ctx);
    s.scene.layout = sprites::random_layout(rng, spec.panel);
    std::vector<std::size_t> ctx;
    for (std::size_t c = 0; c < n_ctx; ++c) {
      if (c != *s.scene.context) ctx.push_back(c);
    }
    shuffle(ctx, rng);
    for (std::size_t p = 0; p < spec.prompts; ++p) s.prompts.push_back(make_prompt(p, s.subject.shape, ctx[p]));
    s.reference_path = "references/" + s.id + ".png";
    m.subjects.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < spec.styles; ++i) {
    BenchmarkStyle st;
    st.id = "style" + std::to_string(i);
    st.scene.subject = classes[(spec.subjects + i) % classes.size()];
    st.scene.context = rng.below(n_ctx);
    st.scene.layout = sprites::random_layout(rng, spec.panel);
    st.description = sprites::describe(st.scene);
    for (std::size_t p = 0; p < spec.prompts; ++p) {
      const std::size_t shape =
          (st.scene.subject.shape + 1 + rng.below(sprites::shapes().size() - 1)) % sprites::shapes().size();
      st.prompts.push_back(make_prompt(p, shape, rng.below(n_ctx)));
      st.prompt_shapes.push_back(shape);
    }
    st.reference_path = "styles/" + st.id + ".png";
    m.styles.push_back(std::move(st));
  }
  for (std::size_t i = 0; i < spec.edits && !m.subjects.empty(); ++i) {
    BenchmarkEdit e;
    e.id = "edit" + std::to_string(i);
    e.subject = i % m.subjects.size();
    const BenchmarkSubject& s = m.subjects[e.subject];
    sprites::SubjectClass other = classes[(i + 3) % classes.size()];
    if (other == s.subject) other = classes[(i + 4) % classes.size()];
    e.target.subject = other;
    e.target.context = rng.below(n_ctx);
    e.target.layout = sprites::random_layout(rng, spec.panel);
    e.rect = edit_rect(sprites::render(e.target, spec.panel).mask, spec.panel);
    e.prompt = make_prompt(0, s.subject.shape, *e.target.context);
    e.target_path = "edits/" + e.id + "_target.png";
    m.edits.push_back(std::move(e));
  }
  return m;
}

json BenchmarkManifest::to_json() const {
  json j = {{"schema", "diptych.benchmark"}, {"schema_version", kSchemaVersion}, {"seed", seed},
            {"spec", spec.to_json()}};
  json subs = json::array();
  for (const auto& s : subjects) {
    json prompts = json::array();
    for (const auto& p : s.prompts) prompts.push_back(prompt_to_json(p));
    subs.push_back({{"id", s.id}, {"subject_name", s.name}, {"scene", scene_to_json(s.scene)},
                    {"reference", s.reference_path}, {"prompts", prompts}});
  }
  j["subjects"] = subs;
  json sts = json::array();
  for (const auto& st : styles) {
    json prompts = json::array();
    for (std::size_t p = 0; p < st.prompts.size(); ++p) {
      json pj = prompt_to_json(st.prompts[p]);
      pj["shape"] = sprites::shapes()[st.prompt_shapes[p]].name;
      prompts.push_back(pj);
    }
    sts.push_back({{"id", st.id}, {"description", st.description}, {"scene", scene_to_json(st.scene)},
                   {"reference", st.reference_path}, {"prompts", prompts}});
  }
  j["styles"] = sts;
  json eds = json::array();
  for (const auto& e : edits) {
    eds.push_back({{"id", e.id},
                   {"subject", subjects.at(e.subject).id},
                   {"target_scene", scene_to_json(e.target)},
                   {"target", e.target_path},
                   {"rect", {e.rect.top, e.rect.left, e.rect.bottom, e.rect.right}},
                   {"prompt", prompt_to_json(e.prompt)}});
  }
  j["edits"] = eds;
  return j;
}

BenchmarkManifest BenchmarkManifest::from_json(const json& j) {
  try {
    if (j.at("schema") != "diptych.benchmark") throw ConfigError("not a benchmark manifest");
    if (j.at("schema_version") != kSchemaVersion) throw ConfigError("unsupported benchmark schema version");
    BenchmarkManifest m;
    m.seed = j.at("seed");
    m.spec = BenchmarkSpec::from_json(j.at("spec"));
    for (const auto& sj : j.at("subjects")) {
      BenchmarkSubject s;
      s.id = sj.at("id");
      s.name = sj.at("subject_name");
      s.scene = scene_from_json(sj.at("scene"));
      s.subject = s.scene.subject;
      s.reference_path = sj.at("reference");
      for (const auto& pj : sj.at("prompts")) s.prompts.push_back(prompt_from_json(pj));
      m.subjects.push_back(std::move(s));
    }
    for (const auto& sj : j.at("styles")) {
      BenchmarkStyle st;
      st.id = sj.at("id");
      st.description = sj.at("description");
      st.scene = scene_from_json(sj.at("scene"));
      st.reference_path = sj.at("reference");
      for (const auto& pj : sj.at("prompts")) {
        st.prompts.push_back(prompt_from_json(pj));
        const std::string shape = pj.at("shape");
        const auto found = sprites::find_shape(shape);
        if (!found) throw ConfigError("unknown shape '" + shape + "'");
        st.prompt_shapes.push_back(*found);
      }
      m.styles.push_back(std::move(st));
    }
    for (const auto& ej : j.at("edits")) {
      BenchmarkEdit e;
      e.id = ej.at("id");
      const std::string sid = ej.at("subject");
      const auto it = std::find_if(m.subjects.begin(), m.subjects.end(), [&](const auto& s) { return s.id == sid; });
      if (it == m.subjects.end()) throw ConfigError("edit refers to unknown subject '" + sid + "'");
      e.subject = static_cast<std::size_t>(it - m.subjects.begin());
      e.target = scene_from_json(ej.at("target_scene"));
      e.target_path = ej.at("target");
      const auto& r = ej.at("rect");
      e.rect = {r.at(0), r.at(1), r.at(2), r.at(3)};
      e.prompt = prompt_from_json(ej.at("prompt"));
      m.edits.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed benchmark manifest: ") + e.what());
  }
}

void write_benchmark(const std::filesystem::path& dir, const BenchmarkManifest& m) {
  for (const auto& s : m.subjects) write_png(dir / s.reference_path, sprites::render(s.scene, m.spec.panel).image);
  for (const auto& st : m.styles) write_png(dir / st.reference_path, sprites::render(st.scene, m.spec.panel).image);
  for (const auto& e : m.edits) write_png(dir / e.target_path, sprites::render(e.target, m.spec.panel).image);
  write_text(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

BenchmarkManifest read_benchmark(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open benchmark manifest " + manifest_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("benchmark manifest is not JSON: ") + e.what());
  }
  return BenchmarkManifest::from_json(j);
}

}  // namespace diptych
