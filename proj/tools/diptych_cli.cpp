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


// Command-line front end: dataset and benchmark generation, training, the
// benchmark runs and report inspection. Every file a subcommand writes is a
// function of its arguments; timings only go to the terminal.
#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "diptych/dataset.hpp"
#include "diptych/denoiser.hpp"
#include "diptych/error.hpp"
#include "diptych/inpainting.hpp"
#include "diptych/metrics.hpp"
#include "diptych/pipeline.hpp"

namespace {

using namespace diptych;
using nlohmann::json;

void log_line(const std::string& line) { std::cerr << line << std::endl; }

json training_report_json(const TrainingReport& r) {
  json curve = json::array();
  for (const LossPoint& p : r.curve) curve.push_back({{"step", p.step}, {"train", p.train}, {"heldout", p.heldout}});
  return {{"schema", "diptych.training_report"},
          {"schema_version", 1},
          {"initial_heldout", r.initial_heldout},
          {"final_heldout", r.final_heldout()},
          {"train_items", r.train_items},
          {"heldout_items", r.heldout_items},
          {"code_version", code_version()},
          {"curve", curve}};
}

std::vector<TrainingSample> load_samples(const std::string& dataset_dir, std::size_t count, std::uint64_t seed,
                                         std::size_t text_length) {
  if (!dataset_dir.empty()) return to_training_samples(read_dataset(dataset_dir).items, text_length);
  DatasetSpec spec;
  spec.count = count;
  return to_training_samples(build_dataset(spec, seed), text_length);
}

ProgressFn progress_logger() {
  const auto t0 = std::chrono::steady_clock::now();
  return [t0](const LossPoint& p) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[128];
    std::snprintf(buf, sizeof buf, "step %zu train %.6f heldout %.6f (%.0fs)", p.step, p.train, p.heldout, s);
    log_line(buf);
  };
}

// Options shared by every benchmark run subcommand, applied over --config.
struct RunOptions {
  std::string config, model, adapter, benchmark, text_map, out, tag, strategy;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, cond_scale, guidance;
  std::optional<std::size_t> steps, workers, max_subjects, max_prompts, images, count;
  bool no_gseg = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "experiment config JSON");
    app->add_option("--model", model, "denoiser checkpoint");
    app->add_option("--adapter", adapter, "condition adapter checkpoint");
    app->add_option("--benchmark", benchmark, "benchmark manifest.json");
    app->add_option("--text-map", text_map, "text alignment map JSON");
    app->add_option("--out", out, "run directory (default runs/<timestamp>-<tag>)");
    app->add_option("--tag", tag, "run tag");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--lambda", lambda, "attention enhancement factor");
    app->add_option("--cond-scale", cond_scale, "adapter conditioning scale");
    app->add_option("--guidance", guidance, "classifier-free guidance scale");
    app->add_option("--steps", steps, "sampler steps");
    app->add_option("--strategy", strategy, "zero-shot or conditioned");
    app->add_option("--workers", workers, "worker threads");
    app->add_option("--max-subjects", max_subjects, "limit benchmark subjects");
    app->add_option("--max-prompts", max_prompts, "limit prompts per subject");
    app->add_option("--images", images, "samples per subject and prompt");
    app->add_option("--count", count, "diptychs to sample (diptych-eval)");
    app->add_flag("--no-gseg", no_gseg, "keep the reference background");
  }

  ExperimentConfig resolve(RunMode mode) const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : ExperimentConfig::load(config);
    c.mode = mode;
    if (!model.empty()) c.model = model;
    if (!adapter.empty()) c.adapter = adapter;
    if (!benchmark.empty()) c.benchmark = benchmark;
    if (!text_map.empty()) c.text_map = text_map;
    if (!out.empty()) c.out = out;
    if (!tag.empty()) c.tag = tag;
    if (seed) c.seed = *seed;
    if (lambda) c.sampler.lambda = *lambda;
    if (cond_scale) c.sampler.conditioning_scale = *cond_scale;
    if (guidance) c.sampler.guidance_scale = *guidance;
    if (steps) c.sampler.steps = *steps;
    if (!strategy.empty()) c.strategy = strategy_from_string(strategy);
    if (workers) c.workers = *workers;
    if (max_subjects) c.max_subjects = *max_subjects;
    if (max_prompts) c.max_prompts = *max_prompts;
    if (images) c.images_per_cell = *images;
    if (count) c.diptych_count = *count;
    if (no_gseg) c.gseg = false;
    c.validate(true);
    return c;
  }
};

void print_aggregates(const std::string& title, const std::map<std::string, double>& scores, std::size_t failures) {
  std::printf("%s:", title.c_str());
  for (const auto& [k, v] : scores) std::printf(" %s=%.4f", k.c_str(), v);
  std::printf(" failures=%zu\n", failures);
}

int run_mode(RunMode mode, const RunOptions& opts) {
  const ExperimentConfig config = opts.resolve(mode);
  const auto dir = prepare_run_dir(config);
  log_line("run directory " + dir.string());
  const auto report = run_experiment(config, dir, log_line);
  const json j = json::parse(read_file_text(report));
  if (mode == RunMode::kAblation) {
    for (const char* sweep : {"scale_sweep", "lambda_sweep"}) {
      for (const json& row : j.at(sweep)) {
        print_aggregates(row.at("variant").get<std::string>(), row.at("scores").get<std::map<std::string, double>>(),
                         row.at("failures").get<std::size_t>());
      }
    }
  } else {
    const ScoreReport r = ScoreReport::from_json(j);
    print_aggregates(r.mode, r.aggregates, r.failures);
  }
  std::printf("report %s\n", report.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diptych prompting on a synthetic sprite world"};
  app.require_subcommand(1);

  // dataset
  std::string ds_out;
  std::size_t ds_count = 6000;
  std::uint64_t ds_seed = 1;
  auto* dataset = app.add_subcommand("dataset", "render the training dataset");
  dataset->add_option("--out", ds_out, "output directory")->required();
  dataset->add_option("--count", ds_count, "items");
  dataset->add_option("--seed", ds_seed, "dataset seed");

  // benchmark
  std::string bm_out;
  std::uint64_t bm_seed = 2024;
  auto* benchmark = app.add_subcommand("benchmark", "render the evaluation benchmark");
  benchmark->add_option("--out", bm_out, "output directory")->required();
  benchmark->add_option("--seed", bm_seed, "benchmark seed");

  // train
  std::string tr_dataset, tr_out, tr_report;
  std::size_t tr_count = 6000;
  std::uint64_t tr_data_seed = 1, tr_seed = 7;
  TrainingConfig tc;
  AdapterTrainingConfig ac;
  auto* train = app.add_subcommand("train", "train the base denoiser");
  train->add_option("--dataset", tr_dataset, "dataset directory (default: render in memory)");
  train->add_option("--count", tr_count, "in-memory dataset size");
  train->add_option("--data-seed", tr_data_seed, "in-memory dataset seed");
  train->add_option("--seed", tr_seed, "training seed");
  train->add_option("--out", tr_out, "checkpoint path")->required();
  train->add_option("--report", tr_report, "training report JSON (default <out>.json)");
  train->add_option("--steps", tc.steps, "optimizer steps");
  train->add_option("--lr", tc.learning_rate, "peak learning rate");
  train->add_option("--batch", tc.batch, "batch size");
  train->add_option("--warmup", tc.warmup, "warmup steps");
  train->add_option("--eval-every", tc.eval_every, "held-out evaluation interval");

  // train-adapter
  std::string ad_model;
  auto* train_adapter = app.add_subcommand("train-adapter", "train the inpainting condition adapter");
  train_adapter->add_option("--model", ad_model, "frozen base checkpoint")->required();
  train_adapter->add_option("--dataset", tr_dataset, "dataset directory (default: render in memory)");
  train_adapter->add_option("--count", tr_count, "in-memory dataset size");
  train_adapter->add_option("--data-seed", tr_data_seed, "in-memory dataset seed");
  train_adapter->add_option("--seed", tr_seed, "training seed");
  train_adapter->add_option("--out", tr_out, "adapter checkpoint path")->required();
  train_adapter->add_option("--report", tr_report, "training report JSON (default <out>.json)");
  train_adapter->add_option("--steps", ac.steps, "optimizer steps");
  train_adapter->add_option("--lr", ac.learning_rate, "peak learning rate");
  train_adapter->add_option("--batch", ac.batch, "batch size");
  train_adapter->add_option("--hidden", ac.adapter.hidden, "adapter hidden width");
  train_adapter->add_option("--radius", ac.adapter.radius, "condition window radius in tokens");
  train_adapter->add_option("--full-right", ac.full_right_probability, "probability of a full right-panel mask");
  train_adapter->add_option("--eval-every", ac.eval_every, "held-out evaluation interval");

  RunOptions gen_opts, style_opts, edit_opts, dg_opts, abl_opts;
  auto* generate = app.add_subcommand("generate", "subject-driven generation over the benchmark");
  gen_opts.attach(generate);
  auto* stylize = app.add_subcommand("stylize", "stylized generation over the benchmark");
  style_opts.attach(stylize);
  auto* edit = app.add_subcommand("edit", "subject-driven editing over the benchmark");
  edit_opts.attach(edit);
  auto* diptych_eval = app.add_subcommand("diptych-eval", "sample whole diptychs and score their halves");
  dg_opts.attach(diptych_eval);
  auto* ablate = app.add_subcommand("ablate", "conditioning-scale and G_seg x lambda sweeps");
  abl_opts.attach(ablate);

  // score
  std::string sc_report, sc_compare, sc_metric = "dino";
  auto* score = app.add_subcommand("score", "validate a report and print its aggregates");
  score->add_option("report", sc_report, "report JSON")->required();
  score->add_option("--compare", sc_compare, "second report for a paired signed-rank test");
  score->add_option("--metric", sc_metric, "metric compared by --compare");

  // fit-text-map
  std::string tm_out;
  std::uint64_t tm_seed = 20241125;
  std::size_t tm_count = 1200;
  auto* fit_map = app.add_subcommand("fit-text-map", "fit the frozen image-to-text alignment map");
  fit_map->add_option("--out", tm_out, "output JSON")->required();
  fit_map->add_option("--seed", tm_seed, "sprite set seed");
  fit_map->add_option("--count", tm_count, "sprite set size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*dataset) {
      DatasetSpec spec;
      spec.count = ds_count;
      write_dataset(ds_out, spec, ds_seed, build_dataset(spec, ds_seed));
      std::printf("wrote %zu items to %s\n", ds_count, ds_out.c_str());
    } else if (*benchmark) {
      write_benchmark(bm_out, build_benchmark(BenchmarkSpec{}, bm_seed));
      std::printf("wrote benchmark to %s\n", bm_out.c_str());
    } else if (*train) {
      const DenoiserConfig mc;
      const auto samples = load_samples(tr_dataset, tr_count, tr_data_seed, mc.text_length);
      SeededRng rng(tr_seed);
      TrainingReport rep;
      const DenoiserModel model = train_denoiser(samples, mc, tc, rng, &rep, progress_logger());
      save_model(tr_out, model);
      write_text(tr_report.empty() ? tr_out + ".json" : tr_report, training_report_json(rep).dump(2) + "\n");
      std::fprintf(stderr, "held-out loss %.6f -> %.6f in %.0fs\n", rep.initial_heldout, rep.final_heldout(), rep.seconds);
    } else if (*train_adapter) {
      const DenoiserModel model = load_model(ad_model);
      const auto samples = load_samples(tr_dataset, tr_count, tr_data_seed, model.config().text_length);
      SeededRng rng(tr_seed);
      TrainingReport rep;
      const ConditionAdapter adapter = train_condition_adapter(model, samples, ac, rng, &rep, progress_logger());
      save_adapter(tr_out, adapter);
      write_text(tr_report.empty() ? tr_out + ".json" : tr_report, training_report_json(rep).dump(2) + "\n");
      std::fprintf(stderr, "masked held-out loss %.6f -> %.6f in %.0fs\n", rep.initial_heldout, rep.final_heldout(),
                  rep.seconds);
    } else if (*generate) {
      return run_mode(RunMode::kSubject, gen_opts);
    } else if (*stylize) {
      return run_mode(RunMode::kStyle, style_opts);
    } else if (*edit) {
      return run_mode(RunMode::kEdit, edit_opts);
    } else if (*diptych_eval) {
      return run_mode(RunMode::kDiptychGen, dg_opts);
    } else if (*ablate) {
      return run_mode(RunMode::kAblation, abl_opts);
    } else if (*score) {
      const ScoreReport a = ScoreReport::from_json(json::parse(read_file_text(sc_report)));
      a.validate();
      print_aggregates(a.mode, a.aggregates, a.failures);
      if (!sc_compare.empty()) {
        const ScoreReport b = ScoreReport::from_json(json::parse(read_file_text(sc_compare)));
        b.validate();
        print_aggregates(b.mode, b.aggregates, b.failures);
        std::map<std::string, double> left;
        for (const ScoreItem& it : a.items) {
          if (it.ok && it.scores.contains(sc_metric)) left[it.key] = it.scores.at(sc_metric);
        }
        std::vector<std::pair<double, double>> pairs;
        for (const ScoreItem& it : b.items) {
          if (it.ok && it.scores.contains(sc_metric) && left.contains(it.key)) {
            pairs.emplace_back(left[it.key], it.scores.at(sc_metric));
          }
        }
        const WilcoxonResult w = wilcoxon_signed_rank(pairs);
        std::printf("wilcoxon %s: pairs=%zu n=%zu W+=%.1f W-=%.1f p=%.4g (%s)\n", sc_metric.c_str(), pairs.size(),
                    w.n, w.w_plus, w.w_minus, w.p_value, w.exact ? "exact" : "normal approximation");
      }
    } else if (*fit_map) {
      fit_default_text_map(tm_seed, tm_count).save(tm_out);
      std::printf("wrote text map to %s\n", tm_out.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", e.kind(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
