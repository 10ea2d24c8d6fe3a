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


#include "diptych/pipeline.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include "diptych/error.hpp"

namespace diptych {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.panel = 8;
  c.patch = 4;
  c.dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.mlp = 24;
  c.time_features = 4;
  return c;
}

std::string slurp(const fs::path& p) { return read_file_text(p); }

// Model, adapter and an 8-pixel benchmark written once per test binary.
class PipelineEnv : public ::testing::Environment {
 public:
  void SetUp() override {
    root = fs::temp_directory_path() / ("diptych_pipeline_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const DenoiserModel model(tiny_config(), 5);
    save_model(root / "model.bin", model);
    ConditionAdapter adapter(model, AdapterConfig{}, 9);
    SeededRng rng(10);
    for (auto& [name, m] : adapter.params().tensors()) {
      for (double& v : m->values()) v += 0.2 * rng.normal();
    }
    save_adapter(root / "adapter.bin", adapter);
    BenchmarkSpec spec;
    spec.panel = 8;
    spec.subjects = 2;
    spec.prompts = 2;
    spec.images_per_cell = 2;
    spec.styles = 1;
    spec.edits = 2;
    write_benchmark(root / "bench", build_benchmark(spec, 17));
  }
  void TearDown() override { fs::remove_all(root); }
  static inline fs::path root;
};

const auto* const kEnv = ::testing::AddGlobalTestEnvironment(new PipelineEnv);

ExperimentConfig tiny_experiment(RunMode mode, const std::string& tag) {
  ExperimentConfig c;
  c.mode = mode;
  c.model = PipelineEnv::root / "model.bin";
  c.adapter = PipelineEnv::root / "adapter.bin";
  c.benchmark = PipelineEnv::root / "bench" / "manifest.json";
  c.text_map = DIPTYCH_TEXT_MAP;
  c.out = PipelineEnv::root / "runs" / tag;
  c.seed = 3;
  c.sampler.steps = 3;
  c.diptych_count = 4;
  return c;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
  }
  return files;
}

TEST(Config, JsonRoundTripAndOverrides) {
  ExperimentConfig c = tiny_experiment(RunMode::kAblation, "cfg");
  c.sampler.lambda = 1.5;
  c.gseg = false;
  c.strategy = InpaintStrategy::kZeroShot;
  c.ablation_scales = {0.25, 1.0};
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  const ExperimentConfig partial = ExperimentConfig::from_json(json{{"seed", 11}, {"sampler", {{"steps", 7}}}});
  EXPECT_EQ(partial.seed, 11u);
  EXPECT_EQ(partial.sampler.steps, 7u);
  EXPECT_EQ(partial.sampler.guidance_scale, 3.5);
  EXPECT_EQ(partial.sampler.conditioning_scale, 0.95);
  EXPECT_EQ(partial.sampler.lambda, 1.3);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(ExperimentConfig::from_json(json{{"sed", 1}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(json{{"sampler", {{"lamda", 1.3}}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(json{{"mode", "sculpt"}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(json{{"seed", "three"}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(json::array()), ConfigError);

  ExperimentConfig c = tiny_experiment(RunMode::kSubject, "bad");
  EXPECT_NO_THROW(c.validate());
  c.workers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_experiment(RunMode::kSubject, "bad");
  c.adapter.clear();
  EXPECT_THROW(c.validate(false), ConfigError);
  c.strategy = InpaintStrategy::kZeroShot;
  EXPECT_NO_THROW(c.validate(false));
  c.sampler.lambda = 0.5;
  EXPECT_THROW(c.validate(false), ConfigError);
  c = tiny_experiment(RunMode::kSubject, "bad");
  c.model = PipelineEnv::root / "missing.bin";
  EXPECT_NO_THROW(c.validate(false));
  EXPECT_THROW(c.validate(true), ConfigError);
}

TEST(Config, RunDirectoryHoldsTheConfig) {
  ExperimentConfig c = tiny_experiment(RunMode::kSubject, "dir");
  const fs::path dir = prepare_run_dir(c);
  EXPECT_EQ(dir, c.out);
  for (const char* sub : {"images", "panels", "reports"}) EXPECT_TRUE(fs::is_directory(dir / sub));
  EXPECT_EQ(ExperimentConfig::load(dir / "config.json").to_json(), c.to_json());

  c.out.clear();
  c.tag = "stamped";
  const fs::path stamped = prepare_run_dir(c, PipelineEnv::root / "runs");
  EXPECT_EQ(stamped.parent_path(), PipelineEnv::root / "runs");
  const std::string name = stamped.filename().string();
  EXPECT_EQ(name.size(), std::string("20260101T000000Z-stamped").size());
  EXPECT_TRUE(name.ends_with("-stamped"));
}

TEST(Orchestration, ItemSeedsAreIndependent) {
  std::set<std::uint64_t> seen;
  for (const char* g : {"a", "b"}) {
    for (const char* p : {"p0", "p1"}) {
      for (std::size_t s = 0; s < 3; ++s) seen.insert(item_seed(1, g, p, s));
    }
  }
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_EQ(item_seed(1, "a", "p0", 2), item_seed(1, "a", "p0", 2));
  EXPECT_NE(item_seed(1, "a", "p0", 2), item_seed(2, "a", "p0", 2));
}

TEST(Orchestration, ParallelForVisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(97);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  parallel_for(0, 4, [](std::size_t) { FAIL(); });
  std::atomic<int> ran{0};
  EXPECT_THROW(parallel_for(10, 3,
                            [&](std::size_t i) {
                              ++ran;
                              if (i == 4) throw InputError("boom");
                            }),
               InputError);
  EXPECT_EQ(ran.load(), 10);
}

TEST(Orchestration, GridAndSidecar) {
  const fs::path png = PipelineEnv::root / "grid.png";
  std::vector<std::vector<std::optional<ToyImage>>> cells(2);
  cells[0] = {ToyImage(4, 4, {1.0, 0.0, 0.0}), std::nullopt};
  cells[1] = {ToyImage(4, 4, {0.0, 1.0, 0.0}), ToyImage(4, 4, {0.0, 0.0, 1.0})};
  write_grid(png, cells, json{{"a", "b"}});
  const ToyImage g = read_png(png);
  EXPECT_EQ(g.height(), 8u);
  EXPECT_EQ(g.width(), 8u);
  EXPECT_EQ(g.pixel(5, 6), (Rgb{0.0, 0.0, 1.0}));
  EXPECT_EQ(g.pixel(1, 1), (Rgb{1.0, 0.0, 0.0}));
  const json side = json::parse(slurp(PipelineEnv::root / "grid.json"));
  EXPECT_EQ(side.at("rows"), 2);
  EXPECT_EQ(side.at("cols"), 2);
  EXPECT_EQ(side.at("cells"), (json{{"a", "b"}}));
  EXPECT_THROW(write_grid(png, {}, json::object()), InputError);
}

TEST(Runs, SubjectRunIsCompleteDeterministicAndWorkerInvariant) {
  ExperimentConfig a = tiny_experiment(RunMode::kSubject, "subj_a");
  ExperimentConfig b = tiny_experiment(RunMode::kSubject, "subj_b");
  b.workers = 3;
  const auto run = [](const ExperimentConfig& c) {
    const fs::path dir = prepare_run_dir(c);
    return run_experiment(c, dir);
  };
  const fs::path ra = run(a), rb = run(b);
  const ScoreReport report = ScoreReport::from_json(json::parse(slurp(ra)));
  EXPECT_NO_THROW(report.validate());
  EXPECT_EQ(report.items.size(), 2u * 2u * 2u);
  EXPECT_EQ(report.failures, 0u);
  EXPECT_EQ(report.code_version, code_version());
  for (const char* metric : {"dino", "clip_i", "clip_t", "seam_gradient"}) {
    EXPECT_TRUE(report.aggregates.contains(metric)) << metric;
  }

  // Worker count only changes the config echo.
  auto ta = tree(a.out), tb = tree(b.out);
  ASSERT_EQ(ta.size(), tb.size());
  for (const auto& [path, bytes] : ta) {
    if (path == "config.json" || path.starts_with("reports/")) continue;
    EXPECT_EQ(bytes, tb.at(path)) << path;
  }
  json ja = json::parse(slurp(ra)), jb = json::parse(slurp(rb));
  ja["config"].erase("workers");
  jb["config"].erase("workers");
  EXPECT_EQ(ja, jb);

  // The left half of each diptych is the background-removed reference.
  const RunContext ctx = load_context(a);
  for (const ScoreItem& item : report.items) {
    const auto& subjects = ctx.manifest.subjects;
    const auto it = std::find_if(subjects.begin(), subjects.end(), [&](const auto& s) { return s.id == item.subject; });
    ASSERT_NE(it, subjects.end());
    const ToyImage ref = read_png(ctx.manifest_dir / it->reference_path);
    const ToyImage diptych = read_png(a.out / item.artifacts.at("diptych"));
    EXPECT_EQ(diptych.crop(0, 0, 8, 8), remove_background(ref, it->name, *ctx.segmenter)) << item.key;
    EXPECT_EQ(diptych.crop(0, 8, 8, 8), read_png(a.out / item.artifacts.at("panel")));
  }
  EXPECT_TRUE(fs::exists(a.out / "images" / "subject" / "grids" / (report.items[0].subject + ".png")));
  EXPECT_TRUE(fs::exists(a.out / "images" / "subject" / "grids" / (report.items[0].subject + ".json")));
}

TEST(Runs, StageFailuresStayWithTheirItems) {
  const fs::path bench = PipelineEnv::root / "bench_broken";
  fs::remove_all(bench);
  fs::copy(PipelineEnv::root / "bench", bench, fs::copy_options::recursive);
  const BenchmarkManifest m = read_benchmark(bench / "manifest.json");
  write_text(bench / m.subjects[0].reference_path, "not a png");
  ExperimentConfig c = tiny_experiment(RunMode::kSubject, "broken");
  c.benchmark = bench / "manifest.json";
  const ScoreReport r = ScoreReport::from_json(json::parse(slurp(run_experiment(c, prepare_run_dir(c)))));
  EXPECT_EQ(r.failures, 4u);
  for (const ScoreItem& item : r.items) {
    if (item.subject == m.subjects[0].id) {
      EXPECT_FALSE(item.ok);
      EXPECT_NE(item.error.find("io"), std::string::npos) << item.error;
      EXPECT_TRUE(item.scores.empty());
    } else {
      EXPECT_TRUE(item.ok) << item.error;
    }
  }
}

TEST(Runs, StyleModeForcesLambdaOne) {
  ExperimentConfig c = tiny_experiment(RunMode::kStyle, "style");
  c.sampler.lambda = 1.5;
  std::vector<std::string> lines;
  const fs::path report = run_experiment(c, prepare_run_dir(c), [&](const std::string& s) { lines.push_back(s); });
  ASSERT_FALSE(lines.empty());
  EXPECT_NE(lines.front().find("warning"), std::string::npos);
  const json j = json::parse(slurp(report));
  EXPECT_EQ(j.at("config").at("effective_lambda"), 1.0);
  EXPECT_EQ(j.at("config").at("warnings").size(), 1u);
  EXPECT_EQ(j.at("failures"), 0);

  // Same seeds at lambda 1 give the same pixels.
  ExperimentConfig one = tiny_experiment(RunMode::kStyle, "style_one");
  one.sampler.lambda = 1.0;
  run_experiment(one, prepare_run_dir(one));
  const auto ta = tree(c.out / "panels"), tb = tree(one.out / "panels");
  EXPECT_EQ(ta, tb);
}

TEST(Runs, EditingPreservesEverythingOutsideTheRectangle) {
  ExperimentConfig c = tiny_experiment(RunMode::kEdit, "edit");
  const ScoreReport r = ScoreReport::from_json(json::parse(slurp(run_experiment(c, prepare_run_dir(c)))));
  EXPECT_EQ(r.items.size(), 2u * 2u);
  EXPECT_EQ(r.failures, 0u);
  for (const ScoreItem& item : r.items) {
    EXPECT_EQ(item.scores.at("preserved"), 1.0) << item.key;
    EXPECT_TRUE(item.scores.contains("dino_after"));
    EXPECT_TRUE(item.scores.contains("dino_before"));
  }
}

TEST(Runs, DiptychGenerationScoresBothHalves) {
  ExperimentConfig c = tiny_experiment(RunMode::kDiptychGen, "dgen");
  c.adapter.clear();
  const ScoreReport r = ScoreReport::from_json(json::parse(slurp(run_experiment(c, prepare_run_dir(c)))));
  EXPECT_EQ(r.items.size(), 4u);
  EXPECT_EQ(r.failures, 0u);
  for (const ScoreItem& item : r.items) {
    const ToyImage img = read_png(c.out / item.artifacts.at("diptych"));
    EXPECT_EQ(img.width(), 16u);
    EXPECT_GE(item.scores.at("dino"), -1.0);
    EXPECT_LE(item.scores.at("dino"), 1.0 + 1e-12);
  }
}

TEST(Runs, AblationRunsSharedVariantsOnce) {
  ExperimentConfig c = tiny_experiment(RunMode::kAblation, "ablate");
  c.max_subjects = 1;
  c.images_per_cell = 1;
  std::vector<std::string> lines;
  run_experiment(c, prepare_run_dir(c), [&](const std::string& s) { lines.push_back(s); });
  const json j = json::parse(slurp(c.out / "reports" / "ablation.json"));
  EXPECT_EQ(j.at("scale_sweep").size(), 4u);
  EXPECT_EQ(j.at("lambda_sweep").size(), 6u);
  const std::size_t variants =
      std::count_if(lines.begin(), lines.end(), [](const std::string& s) { return s.starts_with("ablation variant"); });
  EXPECT_EQ(variants, 4u + 6u - 1u);  // conditioned 0.95 at lambda 1.3 with G_seg appears in both sweeps
  EXPECT_EQ(j.at("scale_sweep")[3].at("scores"), j.at("lambda_sweep")[1].at("scores"));
  EXPECT_EQ(j.at("scale_sweep")[0].at("strategy"), "zero-shot");
  EXPECT_FALSE(j.at("wilcoxon").empty());
  ExperimentConfig no_adapter = c;
  no_adapter.adapter.clear();
  EXPECT_THROW(no_adapter.validate(false), ConfigError);
}

}  // namespace
}  // namespace diptych
