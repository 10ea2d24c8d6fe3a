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


// Text-conditioned diptych inpainting: training-free known-region blending
// and a trained conditioning adapter with a conditioning scale.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "diptych/attention.hpp"
#include "diptych/canvas.hpp"
#include "diptych/denoiser.hpp"

namespace diptych {

enum class InpaintStrategy { kZeroShot, kConditioned };
std::string_view to_string(InpaintStrategy strategy);
InpaintStrategy strategy_from_string(std::string_view name);  // ConfigError when unknown

struct InpaintRequest {
  DiptychCanvas canvas;
  DiptychMask mask;
  Caption caption;  // tokenized prompt
  SamplerConfig sampler;
  InpaintStrategy strategy = InpaintStrategy::kZeroShot;
  // ShapeError unless canvas and mask sizes agree with the model panel.
  void validate(const DenoiserConfig& config) const;
};

struct InpaintResult {
  DiptychCanvas canvas;
  // Mean absolute pixel step across mask boundaries (diagnostic only).
  double seam_gradient = 0.0;
};

// Per-token conditioning features: the masked canvas in data space (zero
// where the mask is set) followed by the per-value mask.
Matrix adapter_condition(const Matrix& canvas_tokens, const Matrix& mask_tokens);

struct AdapterConfig {
  std::size_t hidden = 64;
  // Each token sees the conditions of the (2 radius + 1)^2 token window around
  // it, zero padded at the canvas border.
  std::size_t radius = 1;
  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

struct AdapterParams {
  Matrix in_w, in_b;        // condition x hidden, 1 x hidden
  Matrix time_w;            // time_features x hidden
  std::vector<Matrix> out_w, out_b;  // per block: hidden x dim, 1 x dim
  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  AdapterParams zeros_like() const;
};

// h = GELU(c A_in + f(t) A_t + a_in) per image token; block b receives
// scale * (h W_b + b_b) on its image rows. The output projections start at
// zero, so an untrained adapter leaves the base model unchanged.
class ConditionAdapter {
 public:
  ConditionAdapter() = default;
  ConditionAdapter(const DenoiserModel& base, const AdapterConfig& config, std::uint64_t seed);

  const AdapterConfig& config() const { return config_; }
  AdapterParams& params() { return params_; }
  const AdapterParams& params() const { return params_; }
  std::uint64_t base_fingerprint() const { return base_fingerprint_; }
  // Width of one token's row in adapter_condition() output.
  std::size_t condition_dim() const { return token_dim_; }
  std::size_t window_dim() const { return params_.in_w.rows(); }
  std::size_t cells() const { return cells_; }
  std::size_t parameter_count() const;
  // CompatibilityError unless the adapter was built for exactly this model.
  void check_compatible(const DenoiserModel& base) const;

  struct Cache {
    Matrix window, features, pre, hidden;  // window: gathered condition
  };
  // Per-block injections at conditioning scale `scale`. Every token reads the
  // window of [x_t, condition] rows around it.
  std::vector<Matrix> injections(const Matrix& condition, const Matrix& x_t, double t, double scale,
                                 Cache* cache = nullptr) const;
  // Accumulates parameter gradients given d(loss)/d(injections).
  void backward(const Cache& cache, const std::vector<Matrix>& d_injections, double scale, AdapterParams& grads) const;

  // Zero-filled adapter of the given shape, used by the checkpoint loader.
  static ConditionAdapter restore(const AdapterConfig& config, std::uint64_t base_fingerprint,
                                  std::size_t condition_dim, std::size_t cells, std::size_t time_features,
                                  std::size_t depth, std::size_t dim);

 private:
  AdapterConfig config_;
  AdapterParams params_;
  std::uint64_t base_fingerprint_ = 0;
  std::size_t depth_ = 0;
  std::size_t token_dim_ = 0;
  std::size_t cells_ = 0;  // token rows per panel

  Matrix gather_window(const Matrix& condition, const Matrix& x_t) const;
};

// Zero-shot: every sampler step replaces the known region (mask = 0) by the
// ground truth noised to the current t with the run's initial noise. The
// final known-region pixels are copied from the input canvas.
InpaintResult zeroshot_inpaint(const DenoiserModel& model, const InpaintRequest& request,
                               const EnhancementConfig& cfg, SeededRng& rng);

// Same schedule as zeroshot_inpaint plus adapter injections at
// request.sampler.conditioning_scale in both guidance branches. Scale 0
// reproduces zeroshot_inpaint bit for bit. CompatibilityError when the adapter
// belongs to another model.
InpaintResult conditioned_inpaint(const DenoiserModel& model, const ConditionAdapter& adapter,
                                  const InpaintRequest& request, const EnhancementConfig& cfg, SeededRng& rng);

// Dispatches on request.strategy; the adapter may be null for zero-shot.
InpaintResult inpaint(const DenoiserModel& model, const ConditionAdapter* adapter, const InpaintRequest& request,
                      const EnhancementConfig& cfg, SeededRng& rng);

struct AdapterTrainingConfig {
  AdapterConfig adapter;
  std::size_t steps = 800;
  std::size_t batch = 16;
  double learning_rate = 1.0;
  double momentum = 0.9;
  std::size_t warmup = 50;
  double final_lr_fraction = 0.05;
  double clip_norm = 1.0;
  double caption_dropout = 0.1;
  double full_right_probability = 0.5;  // two-panel items; the rest get rectangles
  double heldout_fraction = 0.05;
  std::size_t max_heldout = 128;
  std::size_t eval_every = 0;  // 0: once per epoch
};

// Trains an adapter on randomly masked images against the frozen base model
// with a loss restricted to the masked values. The report's initial loss is
// that of the zero-initialised adapter, i.e. of the base model alone.
ConditionAdapter train_condition_adapter(const DenoiserModel& model, const std::vector<TrainingSample>& dataset,
                                         const AdapterTrainingConfig& config, SeededRng& rng,
                                         TrainingReport* report = nullptr, const ProgressFn& progress = {});

// Random patch-aligned mask for a training canvas: the full right panel or a
// rectangle covering a quarter to three quarters of a panel side.
BinaryMask random_training_mask(std::size_t height, std::size_t width, std::size_t panel, std::size_t patch,
                                double full_right_probability, SeededRng& rng);

void save_adapter(const std::filesystem::path& path, const ConditionAdapter& adapter);
ConditionAdapter load_adapter(const std::filesystem::path& path);

}  // namespace diptych
