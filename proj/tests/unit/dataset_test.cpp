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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "diptych/caption.hpp"
#include "diptych/error.hpp"

namespace diptych {
namespace {

using nlohmann::json;

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("diptych_dataset_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

DatasetSpec small_spec(std::size_t count) {
  DatasetSpec s;
  s.count = count;
  return s;
}

TEST(Dataset, DeterministicAndPrefixStable) {
  const auto a = build_dataset(small_spec(120), 5);
  const auto b = build_dataset(small_spec(120), 5);
  const auto c = build_dataset(small_spec(60), 5);
  const auto d = build_dataset(small_spec(60), 6);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < 60; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].caption, b[i].caption);
    EXPECT_EQ(a[i].image, c[i].image);
    EXPECT_EQ(a[i].id, c[i].id);
    differing += a[i].image != d[i].image;
  }
  EXPECT_GT(differing, 50u);
}

TEST(Dataset, MixtureMatchesWeights) {
  const auto items = build_dataset(small_spec(4000), 1);
  std::map<ItemKind, double> freq;
  for (const auto& it : items) freq[it.kind] += 1.0 / items.size();
  EXPECT_NEAR(freq[ItemKind::kSingle], 0.25, 0.03);
  EXPECT_NEAR(freq[ItemKind::kSubjectDiptych], 0.50, 0.03);
  EXPECT_NEAR(freq[ItemKind::kGenerationDiptych], 0.15, 0.03);
  EXPECT_NEAR(freq[ItemKind::kStyleDiptych], 0.10, 0.03);
}

TEST(Dataset, EveryClassAppearsAndCaptionsTokenize) {
  const auto items = build_dataset(small_spec(1000), 2);
  std::set<std::string> classes;
  for (const auto& it : items) {
    classes.insert(it.left.subject.id());
    EXPECT_NO_THROW(default_tokenizer().encode(it.caption)) << it.caption;
  }
  EXPECT_EQ(classes.size(), 24u);
}

TEST(Dataset, PanelsAndMasksMatchTheirScenes) {
  const auto items = build_dataset(small_spec(300), 3);
  for (const auto& it : items) {
    const auto left = sprites::render(it.left, 32);
    if (it.kind == ItemKind::kSingle) {
      ASSERT_FALSE(it.right.has_value());
      EXPECT_EQ(it.image, left.image);
      EXPECT_EQ(it.mask.values, left.mask.values);
      EXPECT_EQ(it.caption, sprites::describe(it.left));
      continue;
    }
    ASSERT_TRUE(it.right.has_value());
    const auto right = sprites::render(*it.right, 32);
    EXPECT_EQ(it.image, hconcat(left.image, right.image));
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        ASSERT_EQ(it.mask.at(y, x), left.mask.at(y, x));
        ASSERT_EQ(it.mask.at(y, x + 32), right.mask.at(y, x));
      }
    }
    ASSERT_TRUE(it.right->context.has_value());
    EXPECT_EQ(it.right->subject.color, it.left.subject.color);
    EXPECT_EQ(it.right->subject.texture, it.left.subject.texture);
    if (it.kind == ItemKind::kStyleDiptych) {
      EXPECT_NE(it.right->subject.shape, it.left.subject.shape);
    } else {
      EXPECT_EQ(it.right->subject.shape, it.left.subject.shape);
    }
    if (it.kind == ItemKind::kSubjectDiptych) {
      EXPECT_NE(it.caption.find(sprites::target_text(it.right->subject.shape, *it.right->context)),
                std::string::npos);
    }
  }
}

TEST(Dataset, WriteReadRoundTrip) {
  const auto dir = scratch_dir("roundtrip");
  const DatasetSpec spec = small_spec(20);
  const auto items = build_dataset(spec, 8);
  write_dataset(dir, spec, 8, items);
  const LoadedDataset back = read_dataset(dir);
  EXPECT_EQ(back.seed, 8u);
  EXPECT_EQ(back.spec.to_json(), spec.to_json());
  ASSERT_EQ(back.items.size(), items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(back.items[i].kind, items[i].kind);
    EXPECT_EQ(back.items[i].caption, items[i].caption);
    EXPECT_EQ(back.items[i].mask.values, items[i].mask.values);
    EXPECT_EQ(scene_to_json(back.items[i].left), scene_to_json(items[i].left));
    ASSERT_EQ(back.items[i].image.values().size(), items[i].image.values().size());
    for (std::size_t k = 0; k < items[i].image.values().size(); ++k) {
      ASSERT_NEAR(back.items[i].image.values()[k], items[i].image.values()[k], 0.5 / 255 + 1e-12);
    }
  }
  const json m = json::parse(std::ifstream(dir / "manifest.json"));
  EXPECT_EQ(m.at("subject_classes").size(), 24u);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(read_dataset(dir), IoError);
}

TEST(Dataset, SpecValidation) {
  EXPECT_THROW(DatasetSpec::from_json(json{{"panel", 30}}), ConfigError);
  EXPECT_THROW(DatasetSpec::from_json(json{{"count", 0}}), ConfigError);
  EXPECT_THROW(DatasetSpec::from_json(json{{"single_weight", -1.0}}), ConfigError);
  EXPECT_THROW(DatasetSpec::from_json(json{{"white_left", 1.5}}), ConfigError);
  EXPECT_THROW(DatasetSpec::from_json(json{{"count", "many"}}), ConfigError);
  EXPECT_THROW(
      DatasetSpec::from_json(json{{"single_weight", 0}, {"subject_weight", 0}, {"generation_weight", 0}, {"style_weight", 0}}),
      ConfigError);
  const DatasetSpec s = DatasetSpec::from_json(json{{"count", 7}});
  EXPECT_EQ(s.count, 7u);
  EXPECT_EQ(DatasetSpec::from_json(s.to_json()).to_json(), s.to_json());
}

TEST(Benchmark, Structure) {
  const BenchmarkManifest m = build_benchmark({}, 42);
  ASSERT_EQ(m.subjects.size(), 8u);
  std::set<std::string> ids;
  for (const auto& s : m.subjects) {
    ids.insert(s.id);
    EXPECT_EQ(s.name, s.subject.shape_name());
    ASSERT_EQ(s.prompts.size(), 5u);
    std::set<std::size_t> contexts;
    for (const auto& p : s.prompts) {
      EXPECT_NE(p.context, *s.scene.context);
      contexts.insert(p.context);
      EXPECT_EQ(p.text, sprites::target_text(s.subject.shape, p.context));
    }
    EXPECT_EQ(contexts.size(), 5u);
  }
  EXPECT_EQ(ids.size(), 8u);
  ASSERT_EQ(m.styles.size(), 4u);
  for (const auto& st : m.styles) {
    for (std::size_t shape : st.prompt_shapes) EXPECT_NE(shape, st.scene.subject.shape);
  }
  ASSERT_EQ(m.edits.size(), 8u);
  for (const auto& e : m.edits) {
    EXPECT_EQ(e.rect.top % 4, 0u);
    EXPECT_EQ(e.rect.left % 4, 0u);
    EXPECT_EQ(e.rect.bottom % 4, 0u);
    EXPECT_EQ(e.rect.right % 4, 0u);
    EXPECT_GE(e.rect.left, 32u);
    EXPECT_LE(e.rect.right, 64u);
    EXPECT_LE(e.rect.bottom, 32u);
    const auto target = sprites::render(e.target, 32);
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        if (!target.mask.at(y, x)) continue;
        EXPECT_TRUE(y >= e.rect.top && y < e.rect.bottom && x + 32 >= e.rect.left && x + 32 < e.rect.right);
      }
    }
    EXPECT_FALSE(e.target.subject == m.subjects[e.subject].subject);
  }
}

TEST(Benchmark, DeterministicAndRoundTrips) {
  const BenchmarkManifest a = build_benchmark({}, 42), b = build_benchmark({}, 42), c = build_benchmark({}, 43);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_NE(a.to_json(), c.to_json());
  EXPECT_EQ(BenchmarkManifest::from_json(a.to_json()).to_json(), a.to_json());
  const auto dir = scratch_dir("bench");
  write_benchmark(dir, a);
  const BenchmarkManifest back = read_benchmark(dir / "manifest.json");
  EXPECT_EQ(back.to_json(), a.to_json());
  for (const auto& s : a.subjects) EXPECT_TRUE(std::filesystem::exists(dir / s.reference_path));
  for (const auto& e : a.edits) EXPECT_TRUE(std::filesystem::exists(dir / e.target_path));
  std::filesystem::remove_all(dir);
}

TEST(Benchmark, ManifestErrors) {
  json j = build_benchmark({}, 1).to_json();
  j["schema_version"] = 9;
  EXPECT_THROW(BenchmarkManifest::from_json(j), ConfigError);
  j = build_benchmark({}, 1).to_json();
  j["edits"][0]["subject"] = "nobody";
  EXPECT_THROW(BenchmarkManifest::from_json(j), ConfigError);
  j = build_benchmark({}, 1).to_json();
  j["subjects"][0]["scene"]["shape"] = "hexagon";
  EXPECT_THROW(BenchmarkManifest::from_json(j), ConfigError);
  EXPECT_THROW(BenchmarkSpec::from_json(json{{"prompts", 6}}), ConfigError);
}

}  // namespace
}  // namespace diptych
