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


// Experiment orchestration: configuration, the benchmark runners and their
// persisted artifacts.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diptych/dataset.hpp"
#include "diptych/denoiser.hpp"
#include "diptych/inpainting.hpp"
#include "diptych/metrics.hpp"
#include "diptych/segmenter.hpp"
#include "json.hpp"

namespace diptych {

// Hash of the library sources this binary was built from.
std::string code_version();

enum class RunMode { kSubject, kStyle, kEdit, kDiptychGen, kAblation };
std::string_view to_string(RunMode mode);
RunMode run_mode_from_string(std::string_view name);  // ConfigError when unknown

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;
  RunMode mode = RunMode::kSubject;
  std::filesystem::path model;
  std::filesystem::path adapter;     // required for the conditioned strategy
  std::filesystem::path benchmark;   // manifest.json
  std::filesystem::path text_map;
  std::filesystem::path out;         // empty: runs/<timestamp>-<tag>
  std::string tag = "run";
  std::uint64_t seed = 0;
  SamplerConfig sampler;             // steps 30, guidance 3.5, scale 0.95, lambda 1.3
  InpaintStrategy strategy = InpaintStrategy::kConditioned;
  bool gseg = true;
  std::size_t workers = 1;
  // Subsetting; 0 keeps the manifest's value.
  std::size_t max_subjects = 0;
  std::size_t max_prompts = 0;
  std::size_t images_per_cell = 0;
  std::size_t diptych_count = 100;   // diptych-gen mode
  std::vector<double> ablation_scales = {0.5, 0.8, 0.95};
  std::vector<double> ablation_lambdas = {1.0, 1.3, 1.5};

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  // Field constraints, then (when check_paths) existence of the paths the mode
  // needs. ConfigError on any violation.
  void validate(bool check_paths = true) const;
};

// Read-only state shared by every item of a run.
struct RunContext {
  DenoiserModel model;
  std::optional<ConditionAdapter> adapter;
  BenchmarkManifest manifest;
  std::filesystem::path manifest_dir;
  TextAlignmentMap text_map;
  std::shared_ptr<const Segmenter> segmenter;
};

// Loads model, adapter, manifest and text map named by the config; the
// segmenter comes from make_default_segmenter().
RunContext load_context(const ExperimentConfig& config);

using LogFn = std::function<void(const std::string&)>;

// runs/<UTC timestamp>-<tag> under `root`, or config.out when set. Creates
// config.json, images/, panels/ and reports/.
std::filesystem::path prepare_run_dir(const ExperimentConfig& config, const std::filesystem::path& root = "runs");

// Seed of one benchmark item; independent of every other item.
std::uint64_t item_seed(std::uint64_t run_seed, std::string_view group, std::string_view prompt, std::size_t sample);

// Subject-driven generation over the benchmark: segment, build the canvas and
// full-right mask, inpaint, keep the right panel and score it. Stage failures
// are recorded per item. Writes panels, per-subject grids and
// reports/<name>.json.
ScoreReport run_subject_generation(const ExperimentConfig& config, const RunContext& context,
                                   const std::filesystem::path& run_dir, const LogFn& log = {},
                                   const std::string& name = "subject");

// Stylized generation from the manifest's style references with the
// style-inpaint template. Lambda is forced to 1 (with a warning) and the
// reference keeps its background.
ScoreReport run_stylized(const ExperimentConfig& config, const RunContext& context,
                         const std::filesystem::path& run_dir, const LogFn& log = {});

// Subject-driven editing: reference on the left, target on the right, only
// the edit rectangle synthesised.
ScoreReport run_editing(const ExperimentConfig& config, const RunContext& context,
                        const std::filesystem::path& run_dir, const LogFn& log = {});

// Samples whole diptychs from generation-template prompts and scores the
// halves against each other.
ScoreReport run_diptych_gen_eval(const ExperimentConfig& config, const RunContext& context,
                                 const std::filesystem::path& run_dir, const LogFn& log = {});

struct AblationRow {
  std::string variant;
  InpaintStrategy strategy = InpaintStrategy::kConditioned;
  double conditioning_scale = 0.0;
  double lambda = 1.0;
  bool gseg = true;
  std::map<std::string, double> scores;
  std::size_t failures = 0;
};

struct AblationResult {
  std::vector<AblationRow> scale_sweep;   // zero-shot, then conditioned per scale
  std::vector<AblationRow> lambda_sweep;  // G_seg on/off x lambda
  nlohmann::json to_json() const;
};

// Strategy x conditioning-scale and G_seg x lambda sweeps with shared seeds.
// Identical variants are run once. Writes reports/ablation.json plus one
// report per variant.
AblationResult run_ablation(const ExperimentConfig& config, const RunContext& context,
                            const std::filesystem::path& run_dir, const LogFn& log = {});

// Runs config.mode into a prepared directory and returns the report path.
std::filesystem::path run_experiment(const ExperimentConfig& config, const std::filesystem::path& run_dir,
                                     const LogFn& log = {});

// Grid of equally sized tiles (row-major, `cols` wide) and its label sidecar.
void write_grid(const std::filesystem::path& png, const std::vector<std::vector<std::optional<ToyImage>>>& cells,
                const nlohmann::json& labels);

// Bounded pool: calls fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

// White-background reference used as the left panel (G_seg).
ToyImage remove_background(const ToyImage& reference, std::string_view subject_name, const Segmenter& segmenter);

}  // namespace diptych
