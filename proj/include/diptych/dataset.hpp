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

// Synthetic sprite training set and the fixed toy benchmark.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diptych/canvas.hpp"
#include "diptych/denoiser.hpp"
#include "diptych/sprites.hpp"
#include "json.hpp"

namespace diptych {

enum class ItemKind { kSingle, kSubjectDiptych, kGenerationDiptych, kStyleDiptych };
std::string_view to_string(ItemKind kind);

struct DatasetSpec {
  std::size_t panel = 32;
  std::size_t count = 6000;
  // Mixture weights; they are normalised.
  double single_weight = 0.25;
  double subject_weight = 0.50;
  double generation_weight = 0.15;
  double style_weight = 0.10;
  double white_single = 0.2;    // single panels without a context
  double white_left = 0.5;      // diptychs whose left panel is background-free
  double same_context = 0.5;    // colored-left diptychs whose right panel keeps the context

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);  // ConfigError on bad fields
  void validate() const;
};

struct DatasetItem {
  std::string id;
  ItemKind kind = ItemKind::kSingle;
  sprites::Scene left;
  std::optional<sprites::Scene> right;  // diptychs only
  std::string caption;
  ToyImage image;    // panel x panel or panel x 2 panel
  BinaryMask mask;   // sprite support, same size as image
};

// Deterministic per (spec, seed); item i depends only on (seed, i).
std::vector<DatasetItem> build_dataset(const DatasetSpec& spec, std::uint64_t seed);

std::vector<TrainingSample> to_training_samples(const std::vector<DatasetItem>& items,
                                                std::size_t text_length = kDefaultCaptionLength);

// images/<id>.png, masks/<id>.png and manifest.json under `dir`.
void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, std::uint64_t seed,
                   const std::vector<DatasetItem>& items);

struct LoadedDataset {
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::vector<DatasetItem> items;  // pixels as stored (8-bit quantised)
};
LoadedDataset read_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkPrompt {
  std::string id;
  std::size_t context = 0;
  std::string text;  // "a {shape} on a {context} background"
};

struct BenchmarkSubject {
  std::string id;            // subject class id
  sprites::SubjectClass subject;
  std::string name;          // subject name placed in the prompt (the shape)
  sprites::Scene scene;      // reference scene
  std::vector<BenchmarkPrompt> prompts;
  std::string reference_path;  // relative to the manifest
};

struct BenchmarkStyle {
  std::string id;
  sprites::Scene scene;  // style reference
  std::string description;
  std::vector<BenchmarkPrompt> prompts;  // other shapes in new contexts
  std::vector<std::size_t> prompt_shapes;
  std::string reference_path;
};

struct BenchmarkEdit {
  std::string id;
  std::size_t subject = 0;   // index into subjects
  sprites::Scene target;     // scene shown on the right panel
  MaskRect rect;             // canvas coordinates, inside the right panel
  BenchmarkPrompt prompt;
  std::string target_path;
};

struct BenchmarkSpec {
  std::size_t panel = 32;
  std::size_t subjects = 8;
  std::size_t prompts = 5;
  std::size_t images_per_cell = 4;
  std::size_t styles = 4;
  std::size_t edits = 8;
  nlohmann::json to_json() const;
  static BenchmarkSpec from_json(const nlohmann::json& j);
};

struct BenchmarkManifest {
  static constexpr int kSchemaVersion = 1;
  BenchmarkSpec spec;
  std::uint64_t seed = 0;
  std::vector<BenchmarkSubject> subjects;
  std::vector<BenchmarkStyle> styles;
  std::vector<BenchmarkEdit> edits;

  nlohmann::json to_json() const;
  static BenchmarkManifest from_json(const nlohmann::json& j);
};

BenchmarkManifest build_benchmark(const BenchmarkSpec& spec, std::uint64_t seed);
// Writes manifest.json plus reference/target PNGs.
void write_benchmark(const std::filesystem::path& dir, const BenchmarkManifest& manifest);
BenchmarkManifest read_benchmark(const std::filesystem::path& manifest_path);

// Scene <-> JSON helpers shared by the manifests.
nlohmann::json scene_to_json(const sprites::Scene& scene);
sprites::Scene scene_from_json(const nlohmann::json& j);

}  // namespace diptych
