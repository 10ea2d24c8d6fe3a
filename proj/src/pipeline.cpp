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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "diptych/code_version.hpp"
#include "diptych/error.hpp"

namespace diptych {

using nlohmann::json;

std::string code_version() { return kCodeVersion; }

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::kSubject:
      return "subject";
    case RunMode::kStyle:
      return "style";
    case RunMode::kEdit:
      return "edit";
    case RunMode::kDiptychGen:
      return "diptych-gen";
    case RunMode::kAblation:
      return "ablation";
  }
  return "unknown";
}

RunMode run_mode_from_string(std::string_view name) {
  for (RunMode m : {RunMode::kSubject, RunMode::kStyle, RunMode::kEdit, RunMode::kDiptychGen, RunMode::kAblation}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown run mode '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Configuration

json ExperimentConfig::to_json() const {
  return {{"schema", "diptych.experiment"},
          {"schema_version", kSchemaVersion},
          {"mode", to_string(mode)},
          {"model", model.generic_string()},
          {"adapter", adapter.generic_string()},
          {"benchmark", benchmark.generic_string()},
          {"text_map", text_map.generic_string()},
          {"out", out.generic_string()},
          {"tag", tag},
          {"seed", seed},
          {"sampler",
           {{"steps", sampler.steps},
            {"guidance_scale", sampler.guidance_scale},
            {"conditioning_scale", sampler.conditioning_scale},
            {"lambda", sampler.lambda}}},
          {"strategy", to_string(strategy)},
          {"gseg", gseg},
          {"workers", workers},
          {"max_subjects", max_subjects},
          {"max_prompts", max_prompts},
          {"images_per_cell", images_per_cell},
          {"diptych_count", diptych_count},
          {"ablation", {{"scales", ablation_scales}, {"lambdas", ablation_lambdas}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  static const std::set<std::string> known = {
      "schema", "schema_version", "mode",         "model",        "adapter",         "benchmark",
      "text_map", "out",          "tag",          "seed",         "sampler",         "strategy",
      "gseg",   "workers",        "max_subjects", "max_prompts",  "images_per_cell", "diptych_count",
      "ablation"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown experiment config key '" + key + "'");
  }
  if (j.contains("schema") && j.at("schema") != "diptych.experiment") throw ConfigError("not an experiment config");
  if (j.contains("schema_version") && j.at("schema_version") != kSchemaVersion) {
    throw ConfigError("unsupported experiment config schema version");
  }
  ExperimentConfig c;
  try {
    if (j.contains("mode")) c.mode = run_mode_from_string(j.at("mode").get<std::string>());
    const auto path = [&](const char* key, std::filesystem::path& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::string>();
    };
    path("model", c.model);
    path("adapter", c.adapter);
    path("benchmark", c.benchmark);
    path("text_map", c.text_map);
    path("out", c.out);
    c.tag = j.value("tag", c.tag);
    c.seed = j.value("seed", c.seed);
    if (j.contains("sampler")) {
      const json& s = j.at("sampler");
      static const std::set<std::string> sampler_keys = {"steps", "guidance_scale", "conditioning_scale", "lambda"};
      for (const auto& [key, value] : s.items()) {
        if (!sampler_keys.contains(key)) throw ConfigError("unknown sampler key '" + key + "'");
      }
      c.sampler.steps = s.value("steps", c.sampler.steps);
      c.sampler.guidance_scale = s.value("guidance_scale", c.sampler.guidance_scale);
      c.sampler.conditioning_scale = s.value("conditioning_scale", c.sampler.conditioning_scale);
      c.sampler.lambda = s.value("lambda", c.sampler.lambda);
    }
    if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    c.gseg = j.value("gseg", c.gseg);
    c.workers = j.value("workers", c.workers);
    c.max_subjects = j.value("max_subjects", c.max_subjects);
    c.max_prompts = j.value("max_prompts", c.max_prompts);
    c.images_per_cell = j.value("images_per_cell", c.images_per_cell);
    c.diptych_count = j.value("diptych_count", c.diptych_count);
    if (j.contains("ablation")) {
      c.ablation_scales = j.at("ablation").value("scales", c.ablation_scales);
      c.ablation_lambdas = j.at("ablation").value("lambdas", c.ablation_lambdas);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void ExperimentConfig::validate(bool check_paths) const {
  sampler.validate();
  if (workers == 0 || workers > 256) throw ConfigError("workers must lie in [1, 256]");
  if (tag.empty() || tag.find('/') != std::string::npos) throw ConfigError("tag must be a nonempty file name");
  if (mode == RunMode::kDiptychGen && diptych_count == 0) throw ConfigError("diptych_count must be positive");
  for (double s : ablation_scales) {
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("ablation scales must lie in [0, 1]");
  }
  for (double l : ablation_lambdas) {
    if (!(l >= 1.0) || !std::isfinite(l)) throw ConfigError("ablation lambdas must be >= 1");
  }
  const bool needs_adapter = mode == RunMode::kAblation ||
                             (strategy == InpaintStrategy::kConditioned && mode != RunMode::kDiptychGen);
  if (model.empty()) throw ConfigError("config needs a model checkpoint");
  if (needs_adapter && adapter.empty()) throw ConfigError("the conditioned strategy needs an adapter checkpoint");
  if (mode != RunMode::kDiptychGen && benchmark.empty()) throw ConfigError("config needs a benchmark manifest");
  if (text_map.empty()) throw ConfigError("config needs a text alignment map");
  if (!check_paths) return;
  const auto must_exist = [](const std::filesystem::path& p, const char* what) {
    if (!std::filesystem::exists(p)) throw ConfigError(std::string(what) + " " + p.string() + " does not exist");
  };
  must_exist(model, "model");
  if (needs_adapter) must_exist(adapter, "adapter");
  if (mode != RunMode::kDiptychGen) must_exist(benchmark, "benchmark manifest");
  must_exist(text_map, "text map");
}

RunContext load_context(const ExperimentConfig& config) {
  config.validate(true);
  RunContext ctx;
  ctx.model = load_model(config.model);
  if (!config.adapter.empty() && std::filesystem::exists(config.adapter)) {
    ctx.adapter = load_adapter(config.adapter);
    ctx.adapter->check_compatible(ctx.model);
  }
  if (!config.benchmark.empty()) {
    ctx.manifest = read_benchmark(config.benchmark);
    ctx.manifest_dir = config.benchmark.parent_path();
    if (ctx.manifest.spec.panel != ctx.model.config().panel) {
      throw CompatibilityError("benchmark panel size does not match the model");
    }
  }
  ctx.text_map = TextAlignmentMap::load(config.text_map);
  ctx.segmenter = make_default_segmenter();
  return ctx;
}

std::filesystem::path prepare_run_dir(const ExperimentConfig& config, const std::filesystem::path& root) {
  std::filesystem::path dir = config.out;
  if (dir.empty()) {
    const std::time_t now = std::time(nullptr);
    std::tm utc{};
    gmtime_r(&now, &utc);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &utc);
    dir = root / (std::string(stamp) + "-" + config.tag);
  }
  std::error_code ec;
  for (const char* sub : {"images", "panels", "reports"}) {
    std::filesystem::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create run directory " + (dir / sub).string() + ": " + ec.message());
  }
  write_text(dir / "config.json", config.to_json().dump(2) + "\n");
  return dir;
}

std::uint64_t item_seed(std::uint64_t run_seed, std::string_view group, std::string_view prompt, std::size_t sample) {
  return mix_seed({run_seed, hash_string(group), hash_string(prompt), sample});
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void write_grid(const std::filesystem::path& png, const std::vector<std::vector<std::optional<ToyImage>>>& cells,
                const json& labels) {
  std::size_t th = 0, tw = 0, cols = 0;
  for (const auto& row : cells) {
    cols = std::max(cols, row.size());
    for (const auto& c : row) {
      if (c) th = std::max(th, c->height()), tw = std::max(tw, c->width());
    }
  }
  if (cells.empty() || cols == 0 || th == 0) throw InputError("grid has no tiles");
  ToyImage grid(cells.size() * th, cols * tw, {0.5, 0.5, 0.5});
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (!cells[r][c]) continue;
      const ToyImage& tile = *cells[r][c];
      for (std::size_t y = 0; y < tile.height(); ++y) {
        for (std::size_t x = 0; x < tile.width(); ++x) {
          for (std::size_t ch = 0; ch < 3; ++ch) grid.at(r * th + y, c * tw + x, ch) = tile.at(y, x, ch);
        }
      }
    }
  }
  write_png(png, grid);
  json sidecar = {{"schema", "diptych.grid"}, {"schema_version", 1}, {"tile_height", th}, {"tile_width", tw},
                  {"rows", cells.size()},      {"cols", cols},          {"cells", labels}};
  std::filesystem::path side = png;
  side.replace_extension(".json");
  write_text(side, sidecar.dump(2) + "\n");
}

ToyImage remove_background(const ToyImage& reference, std::string_view subject_name, const Segmenter& segmenter) {
  return segmenter.segment(reference, subject_name).segmented;
}

// ---------------------------------------------------------------------------
// Runners

namespace {

std::string error_text(const std::exception& e) {
  if (const auto* d = dynamic_cast<const Error*>(&e)) return std::string(d->kind()) + ": " + e.what();
  return std::string("internal: ") + e.what();
}

std::string sample_id(std::size_t sample) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%02zu", sample);
  return buf;
}

EnhancementConfig enhancement(double lambda) {
  EnhancementConfig cfg;
  cfg.lambda = lambda;
  return cfg;
}

Caption encode_prompt(const RunContext& ctx, const std::string& text) {
  return default_tokenizer().encode(text, ctx.model.config().text_length);
}

// One benchmark cell: `work` fills scores and artifacts of `item`.
struct Job {
  ScoreItem item;
  std::size_t row = 0, col = 0;
  std::function<std::optional<ToyImage>(ScoreItem&)> work;
};

ScoreReport execute(const ExperimentConfig& config, const std::string& mode, std::vector<Job>& jobs,
                    const std::filesystem::path& run_dir, const std::string& name, const LogFn& log,
                    std::vector<std::vector<std::optional<ToyImage>>>* tiles, json extra = json::object()) {
  std::mutex log_mutex;
  std::atomic<std::size_t> done{0};
  std::vector<std::optional<ToyImage>> tile(jobs.size());
  parallel_for(jobs.size(), config.workers, [&](std::size_t i) {
    Job& job = jobs[i];
    try {
      tile[i] = job.work(job.item);
    } catch (const std::exception& e) {
      job.item.ok = false;
      job.item.error = error_text(e);
      job.item.scores.clear();
    }
    const std::size_t n = ++done;
    if (log) {
      std::lock_guard<std::mutex> lock(log_mutex);
      log(name + " " + std::to_string(n) + "/" + std::to_string(jobs.size()) + " " + job.item.key +
          (job.item.ok ? "" : " FAILED " + job.item.error));
    }
  });
  if (tiles != nullptr) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      auto& grid = *tiles;
      if (grid.size() <= jobs[i].row) grid.resize(jobs[i].row + 1);
      if (grid[jobs[i].row].size() <= jobs[i].col) grid[jobs[i].row].resize(jobs[i].col + 1);
      grid[jobs[i].row][jobs[i].col] = tile[i];
    }
  }
  ScoreReport report;
  report.mode = mode;
  report.code_version = code_version();
  report.config = config.to_json();
  report.config.erase("out");
  for (auto& [k, v] : extra.items()) report.config[k] = v;
  for (const Job& job : jobs) report.items.push_back(job.item);
  report.finalize();
  report.validate();
  write_text(run_dir / "reports" / (name + ".json"), report.to_json().dump(2) + "\n");
  return report;
}

std::size_t limit(std::size_t available, std::size_t requested) {
  return requested == 0 ? available : std::min(available, requested);
}

// Per-subject grids (rows: prompts, columns: samples) with label sidecars.
void write_subject_grids(const std::filesystem::path& dir, const std::vector<Job>& jobs,
                         const std::vector<std::vector<std::optional<ToyImage>>>& tiles) {
  std::map<std::string, std::vector<const Job*>> by_subject;
  for (const Job& j : jobs) by_subject[j.item.subject].push_back(&j);
  std::filesystem::create_directories(dir);
  for (const auto& [subject, list] : by_subject) {
    std::map<std::size_t, std::size_t> rows;
    for (const Job* j : list) rows.emplace(j->row, rows.size());
    std::vector<std::vector<std::optional<ToyImage>>> cells(rows.size());
    json labels = json::array();
    for (std::size_t r = 0; r < rows.size(); ++r) labels.push_back(json::array());
    for (const Job* j : list) {
      const std::size_t r = rows.at(j->row);
      if (cells[r].size() <= j->col) cells[r].resize(j->col + 1);
      cells[r][j->col] = tiles[j->row][j->col];
      while (labels[r].size() <= j->col) labels[r].push_back(nullptr);
      labels[r][j->col] = {{"key", j->item.key}, {"prompt", j->item.prompt}, {"sample", j->item.sample}};
    }
    bool any = false;
    for (const auto& row : cells) {
      for (const auto& c : row) any = any || c.has_value();
    }
    if (any) write_grid(dir / (subject + ".png"), cells, labels);
  }
}

std::string file_stem(const ScoreItem& item) { return item.subject + "_" + item.prompt + "_" + sample_id(item.sample); }

}  // namespace

ScoreReport run_subject_generation(const ExperimentConfig& config, const RunContext& context,
                                   const std::filesystem::path& run_dir, const LogFn& log, const std::string& name) {
  config.sampler.validate();
  const DenoiserConfig& mc = context.model.config();
  const std::size_t n_subjects = limit(context.manifest.subjects.size(), config.max_subjects);
  const std::size_t per_cell = limit(context.manifest.spec.images_per_cell, config.images_per_cell);
  const ConditionAdapter* adapter = context.adapter ? &*context.adapter : nullptr;
  const std::filesystem::path panels = run_dir / "panels" / name, images = run_dir / "images" / name;
  std::filesystem::create_directories(panels);
  std::filesystem::create_directories(images);

  // Reference loading and background removal happen once per subject; their
  // failures surface on every item of that subject.
  struct Prepared {
    ToyImage reference, left;
    std::string error;
  };
  std::vector<Prepared> prepared(n_subjects);
  for (std::size_t s = 0; s < n_subjects; ++s) {
    const BenchmarkSubject& sub = context.manifest.subjects[s];
    try {
      prepared[s].reference = read_png(context.manifest_dir / sub.reference_path);
      prepared[s].left = config.gseg ? remove_background(prepared[s].reference, sub.name, *context.segmenter)
                                     : prepared[s].reference;
    } catch (const std::exception& e) {
      prepared[s].error = error_text(e);
    }
  }

  std::vector<Job> jobs;
  std::size_t row = 0;
  for (std::size_t s = 0; s < n_subjects; ++s) {
    const BenchmarkSubject& sub = context.manifest.subjects[s];
    const std::size_t n_prompts = limit(sub.prompts.size(), config.max_prompts);
    for (std::size_t p = 0; p < n_prompts; ++p, ++row) {
      for (std::size_t k = 0; k < per_cell; ++k) {
        Job job;
        job.row = row;
        job.col = k;
        job.item.subject = sub.id;
        job.item.prompt = sub.prompts[p].id;
        job.item.sample = k;
        job.item.key = sub.id + "/" + sub.prompts[p].id + "/" + sample_id(k);
        job.work = [&, s, p, k](ScoreItem& item) -> std::optional<ToyImage> {
          const Prepared& prep = prepared[s];
          if (!prep.error.empty()) throw PreconditionError("reference unavailable (" + prep.error + ")");
          const BenchmarkPrompt& prompt = sub.prompts[p];
          InpaintRequest req;
          req.canvas = build_canvas(prep.left);
          req.mask = build_mask(mc.panel, mc.panel, FullRight{}, mc.patch);
          req.caption = encode_prompt(context, render_prompt(PromptKind::kSubjectInpaint, sub.name, "", prompt.text).rendered);
          req.sampler = config.sampler;
          req.strategy = config.strategy;
          SeededRng rng(item_seed(config.seed, sub.id, prompt.id, k));
          const InpaintResult out = inpaint(context.model, adapter, req, enhancement(config.sampler.lambda), rng);
          const ToyImage& panel = out.canvas.right;
          item.scores["dino"] =
              subject_alignment({panel}, {prep.reference}, ImageEmbedder(ImageEmbedder::Kind::kSubject), sub.name);
          item.scores["clip_i"] =
              subject_alignment({panel}, {prep.reference}, ImageEmbedder(ImageEmbedder::Kind::kGlobal), sub.name);
          item.scores["clip_t"] = text_alignment({panel}, prompt.text, context.text_map, {}, sub.name);
          item.scores["seam_gradient"] = out.seam_gradient;
          const std::string stem = file_stem(item);
          write_png(panels / (stem + ".png"), panel);
          write_png(images / (stem + "_diptych.png"), out.canvas.compose());
          item.artifacts["panel"] = "panels/" + name + "/" + stem + ".png";
          item.artifacts["diptych"] = "images/" + name + "/" + stem + "_diptych.png";
          return panel;
        };
        jobs.push_back(std::move(job));
      }
    }
  }
  std::vector<std::vector<std::optional<ToyImage>>> tiles;
  ScoreReport report = execute(config, "subject", jobs, run_dir, name, log, &tiles);
  write_subject_grids(run_dir / "images" / name / "grids", jobs, tiles);
  return report;
}

ScoreReport run_stylized(const ExperimentConfig& config_in, const RunContext& context,
                         const std::filesystem::path& run_dir, const LogFn& log) {
  ExperimentConfig config = config_in;
  json extra = json::object();
  if (config.sampler.lambda != 1.0) {
    const std::string warning = "style mode runs without attention enhancement; lambda " +
                                std::to_string(config.sampler.lambda) + " forced to 1";
    if (log) log("warning: " + warning);
    extra["warnings"] = json::array({warning});
    config.sampler.lambda = 1.0;
  }
  extra["effective_lambda"] = 1.0;
  const DenoiserConfig& mc = context.model.config();
  const ConditionAdapter* adapter = context.adapter ? &*context.adapter : nullptr;
  const std::size_t per_cell = limit(context.manifest.spec.images_per_cell, config.images_per_cell);
  const std::filesystem::path panels = run_dir / "panels" / "style", images = run_dir / "images" / "style";
  std::filesystem::create_directories(panels);
  std::filesystem::create_directories(images);
  std::vector<std::optional<ToyImage>> refs(context.manifest.styles.size());
  std::vector<std::string> ref_errors(refs.size());
  for (std::size_t s = 0; s < refs.size(); ++s) {
    try {
      refs[s] = read_png(context.manifest_dir / context.manifest.styles[s].reference_path);
    } catch (const std::exception& e) {
      ref_errors[s] = error_text(e);
    }
  }
  std::vector<Job> jobs;
  std::size_t row = 0;
  for (std::size_t s = 0; s < context.manifest.styles.size(); ++s) {
    const BenchmarkStyle& st = context.manifest.styles[s];
    const std::size_t n_prompts = limit(st.prompts.size(), config.max_prompts);
    for (std::size_t p = 0; p < n_prompts; ++p, ++row) {
      for (std::size_t k = 0; k < per_cell; ++k) {
        Job job;
        job.row = row;
        job.col = k;
        job.item.subject = st.id;
        job.item.prompt = st.prompts[p].id;
        job.item.sample = k;
        job.item.key = st.id + "/" + st.prompts[p].id + "/" + sample_id(k);
        job.work = [&, s, p, k](ScoreItem& item) -> std::optional<ToyImage> {
          if (!refs[s]) throw PreconditionError("style reference unavailable (" + ref_errors[s] + ")");
          const BenchmarkPrompt& prompt = st.prompts[p];
          const std::string shape = sprites::shapes()[st.prompt_shapes[p]].name;
          InpaintRequest req;
          req.canvas = build_canvas(*refs[s]);
          req.mask = build_mask(mc.panel, mc.panel, FullRight{}, mc.patch);
          req.caption = encode_prompt(
              context, render_prompt(PromptKind::kStyleInpaint, "", st.description, prompt.text).rendered);
          req.sampler = config.sampler;
          req.strategy = config.strategy;
          SeededRng rng(item_seed(config.seed, st.id, prompt.id, k));
          const InpaintResult out = inpaint(context.model, adapter, req, enhancement(1.0), rng);
          const ToyImage& panel = out.canvas.right;
          item.scores["clip_i"] =
              subject_alignment({panel}, {*refs[s]}, ImageEmbedder(ImageEmbedder::Kind::kGlobal), shape);
          item.scores["dino"] =
              subject_alignment({panel}, {*refs[s]}, ImageEmbedder(ImageEmbedder::Kind::kSubject), shape);
          item.scores["clip_t"] = text_alignment({panel}, prompt.text, context.text_map, {}, shape);
          const std::string stem = file_stem(item);
          write_png(panels / (stem + ".png"), panel);
          write_png(images / (stem + "_diptych.png"), out.canvas.compose());
          item.artifacts["panel"] = "panels/style/" + stem + ".png";
          item.artifacts["diptych"] = "images/style/" + stem + "_diptych.png";
          return panel;
        };
        jobs.push_back(std::move(job));
      }
    }
  }
  std::vector<std::vector<std::optional<ToyImage>>> tiles;
  ScoreReport report = execute(config, "style", jobs, run_dir, "style", log, &tiles, extra);
  write_subject_grids(run_dir / "images" / "style" / "grids", jobs, tiles);
  return report;
}

ScoreReport run_editing(const ExperimentConfig& config, const RunContext& context,
                        const std::filesystem::path& run_dir, const LogFn& log) {
  const DenoiserConfig& mc = context.model.config();
  const ConditionAdapter* adapter = context.adapter ? &*context.adapter : nullptr;
  const std::size_t per_cell = limit(context.manifest.spec.images_per_cell, config.images_per_cell);
  const std::filesystem::path panels = run_dir / "panels" / "edit", images = run_dir / "images" / "edit";
  std::filesystem::create_directories(panels);
  std::filesystem::create_directories(images);
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < context.manifest.edits.size(); ++e) {
    const BenchmarkEdit& edit = context.manifest.edits[e];
    for (std::size_t k = 0; k < per_cell; ++k) {
      Job job;
      job.row = e;
      job.col = k;
      job.item.subject = edit.id;
      job.item.prompt = edit.prompt.id;
      job.item.sample = k;
      job.item.key = edit.id + "/" + edit.prompt.id + "/" + sample_id(k);
      job.work = [&, k](ScoreItem& item) -> std::optional<ToyImage> {
        const BenchmarkSubject& sub = context.manifest.subjects.at(edit.subject);
        const ToyImage reference = read_png(context.manifest_dir / sub.reference_path);
        const ToyImage target = read_png(context.manifest_dir / edit.target_path);
        const ToyImage left = config.gseg ? remove_background(reference, sub.name, *context.segmenter) : reference;
        InpaintRequest req;
        req.canvas = build_canvas_editing(left, target);
        req.mask = build_mask(mc.panel, mc.panel, edit.rect, mc.patch);
        req.caption =
            encode_prompt(context, render_prompt(PromptKind::kSubjectInpaint, sub.name, "", edit.prompt.text).rendered);
        req.sampler = config.sampler;
        req.strategy = config.strategy;
        SeededRng rng(item_seed(config.seed, edit.id, edit.prompt.id, k));
        const InpaintResult out = inpaint(context.model, adapter, req, enhancement(config.sampler.lambda), rng);
        const ToyImage& panel = out.canvas.right;
        const std::size_t top = edit.rect.top, left_x = edit.rect.left - mc.panel;
        const std::size_t h = edit.rect.bottom - edit.rect.top, w = edit.rect.right - edit.rect.left;
        const ToyImage after = panel.crop(top, left_x, h, w), before = target.crop(top, left_x, h, w);
        const ImageEmbedder dino(ImageEmbedder::Kind::kSubject);
        item.scores["dino_after"] = subject_alignment({after}, {reference}, dino, sub.name);
        item.scores["dino_before"] = subject_alignment({before}, {reference}, dino, sub.name);
        item.scores["clip_t"] = text_alignment({panel}, edit.prompt.text, context.text_map, {}, sub.name);
        bool preserved = true;
        for (std::size_t y = 0; y < panel.height(); ++y) {
          for (std::size_t x = 0; x < panel.width(); ++x) {
            if (y >= top && y < top + h && x >= left_x && x < left_x + w) continue;
            preserved = preserved && panel.pixel(y, x) == target.pixel(y, x);
          }
        }
        item.scores["preserved"] = preserved ? 1.0 : 0.0;
        const std::string stem = file_stem(item);
        write_png(panels / (stem + ".png"), panel);
        write_png(images / (stem + "_diptych.png"), out.canvas.compose());
        item.artifacts["panel"] = "panels/edit/" + stem + ".png";
        item.artifacts["diptych"] = "images/edit/" + stem + "_diptych.png";
        return panel;
      };
      jobs.push_back(std::move(job));
    }
  }
  std::vector<std::vector<std::optional<ToyImage>>> tiles;
  ScoreReport report = execute(config, "edit", jobs, run_dir, "edit", log, &tiles);
  write_subject_grids(run_dir / "images" / "edit" / "grids", jobs, tiles);
  return report;
}

ScoreReport run_diptych_gen_eval(const ExperimentConfig& config, const RunContext& context,
                                 const std::filesystem::path& run_dir, const LogFn& log) {
  const std::filesystem::path images = run_dir / "images" / "diptych-gen";
  std::filesystem::create_directories(images);
  const std::size_t n_ctx = sprites::contexts().size();
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < config.diptych_count; ++i) {
    Job job;
    char id[32];
    std::snprintf(id, sizeof id, "d%04zu", i);
    job.item.key = id;
    job.item.prompt = id;
    job.row = i;
    job.work = [&, i, idstr = std::string(id)](ScoreItem& item) -> std::optional<ToyImage> {
      SeededRng rng(item_seed(config.seed, "diptych-gen", idstr, 0));
      sprites::Scene left, right;
      left.subject = {rng.below(sprites::shapes().size()), rng.below(sprites::colors().size()),
                      rng.below(sprites::textures().size())};
      right.subject = left.subject;
      left.context = rng.below(n_ctx);
      right.context = (*left.context + 1 + rng.below(n_ctx - 1)) % n_ctx;
      left.layout = sprites::random_layout(rng, context.model.config().panel);
      right.layout = sprites::random_layout(rng, context.model.config().panel);
      const std::string name = left.subject.shape_name();
      const std::string left_desc = sprites::describe(left), right_desc = sprites::describe(right);
      item.subject = left.subject.id();
      const Caption caption =
          encode_prompt(context, render_prompt(PromptKind::kGeneration, name, left_desc, right_desc).rendered);
      const ToyImage diptych = sample(context.model, caption, config.sampler, rng, 2);
      const SplitEvaluation e = diptych_split_eval(diptych, left_desc, right_desc, context.text_map, name);
      item.scores["dino"] = e.cross_subject;
      item.scores["clip_i"] = e.cross_global;
      item.scores["clip_t"] = 0.5 * (e.left_text + e.right_text);
      item.scores["clip_t_left"] = e.left_text;
      item.scores["clip_t_right"] = e.right_text;
      write_png(images / (idstr + ".png"), diptych);
      item.artifacts["diptych"] = "images/diptych-gen/" + idstr + ".png";
      return std::nullopt;
    };
    jobs.push_back(std::move(job));
  }
  return execute(config, "diptych-gen", jobs, run_dir, "diptych-gen", log, nullptr,
                 json{{"enhancement", "none (lambda 1)"}});
}

// ---------------------------------------------------------------------------
// Ablation

json AblationResult::to_json() const {
  const auto rows = [](const std::vector<AblationRow>& list) {
    json out = json::array();
    for (const AblationRow& r : list) {
      out.push_back({{"variant", r.variant},
                     {"strategy", to_string(r.strategy)},
                     {"conditioning_scale", r.conditioning_scale},
                     {"lambda", r.lambda},
                     {"gseg", r.gseg},
                     {"scores", r.scores},
                     {"failures", r.failures}});
    }
    return out;
  };
  return {{"schema", "diptych.ablation"}, {"schema_version", 1}, {"scale_sweep", rows(scale_sweep)},
          {"lambda_sweep", rows(lambda_sweep)}};
}

namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string variant_name(InpaintStrategy strategy, double scale, double lambda, bool gseg) {
  std::string name = strategy == InpaintStrategy::kZeroShot ? "zeroshot" : "cond" + format_number(scale);
  return name + "_l" + format_number(lambda) + (gseg ? "_gseg" : "_nogseg");
}

json paired_test(const ScoreReport& a, const ScoreReport& b, const std::string& metric) {
  std::map<std::string, double> left;
  for (const ScoreItem& it : a.items) {
    if (it.ok && it.scores.contains(metric)) left[it.key] = it.scores.at(metric);
  }
  std::vector<std::pair<double, double>> pairs;
  for (const ScoreItem& it : b.items) {
    if (it.ok && it.scores.contains(metric) && left.contains(it.key)) pairs.emplace_back(left[it.key], it.scores.at(metric));
  }
  try {
    const WilcoxonResult w = wilcoxon_signed_rank(pairs);
    return {{"metric", metric}, {"pairs", pairs.size()}, {"n", w.n},          {"w_plus", w.w_plus},
            {"w_minus", w.w_minus}, {"statistic", w.statistic}, {"p_value", w.p_value}, {"exact", w.exact}};
  } catch (const Error& e) {
    return {{"metric", metric}, {"pairs", pairs.size()}, {"error", error_text(e)}};
  }
}

}  // namespace

AblationResult run_ablation(const ExperimentConfig& config, const RunContext& context,
                            const std::filesystem::path& run_dir, const LogFn& log) {
  if (!context.adapter) throw ConfigError("ablation needs an adapter checkpoint");
  std::map<std::string, ScoreReport> done;
  const auto run_variant = [&](InpaintStrategy strategy, double scale, double lambda, bool gseg) {
    const std::string name = variant_name(strategy, scale, lambda, gseg);
    if (!done.contains(name)) {
      ExperimentConfig c = config;
      c.mode = RunMode::kSubject;
      c.strategy = strategy;
      c.sampler.conditioning_scale = strategy == InpaintStrategy::kZeroShot ? 0.0 : scale;
      c.sampler.lambda = lambda;
      c.gseg = gseg;
      if (log) log("ablation variant " + name);
      done.emplace(name, run_subject_generation(c, context, run_dir, log, name));
    }
    const ScoreReport& r = done.at(name);
    AblationRow row;
    row.variant = name;
    row.strategy = strategy;
    row.conditioning_scale = strategy == InpaintStrategy::kZeroShot ? 0.0 : scale;
    row.lambda = lambda;
    row.gseg = gseg;
    row.scores = r.aggregates;
    row.failures = r.failures;
    return row;
  };
  AblationResult result;
  const double lambda = config.sampler.lambda, scale = config.sampler.conditioning_scale;
  result.scale_sweep.push_back(run_variant(InpaintStrategy::kZeroShot, 0.0, lambda, true));
  for (double s : config.ablation_scales) result.scale_sweep.push_back(run_variant(InpaintStrategy::kConditioned, s, lambda, true));
  for (bool gseg : {true, false}) {
    for (double l : config.ablation_lambdas) {
      result.lambda_sweep.push_back(run_variant(InpaintStrategy::kConditioned, scale, l, gseg));
    }
  }
  json out = result.to_json();
  out["code_version"] = code_version();
  json config_echo = config.to_json();
  config_echo.erase("out");
  out["config"] = config_echo;
  json tests = json::array();
  const auto name = [&](double l, bool g) { return variant_name(InpaintStrategy::kConditioned, scale, l, g); };
  if (done.contains(name(1.0, true)) && done.contains(name(lambda, true)) && lambda != 1.0) {
    tests.push_back({{"comparison", name(lambda, true) + " vs " + name(1.0, true)},
                     {"test", paired_test(done.at(name(lambda, true)), done.at(name(1.0, true)), "dino")}});
  }
  if (done.contains(name(lambda, false))) {
    for (const char* metric : {"dino", "clip_t"}) {
      tests.push_back({{"comparison", name(lambda, false) + " vs " + name(lambda, true)},
                       {"test", paired_test(done.at(name(lambda, false)), done.at(name(lambda, true)), metric)}});
    }
  }
  const std::string zs = variant_name(InpaintStrategy::kZeroShot, 0.0, lambda, true);
  if (done.contains(name(lambda, true))) {
    tests.push_back({{"comparison", name(lambda, true) + " vs " + zs},
                     {"test", paired_test(done.at(name(lambda, true)), done.at(zs), "dino")}});
  }
  out["wilcoxon"] = tests;
  write_text(run_dir / "reports" / "ablation.json", out.dump(2) + "\n");
  return result;
}

std::filesystem::path run_experiment(const ExperimentConfig& config, const std::filesystem::path& run_dir,
                                     const LogFn& log) {
  const RunContext context = load_context(config);
  switch (config.mode) {
    case RunMode::kSubject:
      run_subject_generation(config, context, run_dir, log);
      return run_dir / "reports" / "subject.json";
    case RunMode::kStyle:
      run_stylized(config, context, run_dir, log);
      return run_dir / "reports" / "style.json";
    case RunMode::kEdit:
      run_editing(config, context, run_dir, log);
      return run_dir / "reports" / "edit.json";
    case RunMode::kDiptychGen:
      run_diptych_gen_eval(config, context, run_dir, log);
      return run_dir / "reports" / "diptych-gen.json";
    case RunMode::kAblation:
      run_ablation(config, context, run_dir, log);
      return run_dir / "reports" / "ablation.json";
  }
  throw ConfigError("unknown run mode");
}

}  // namespace diptych
