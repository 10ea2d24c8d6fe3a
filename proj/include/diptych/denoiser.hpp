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

// Toy joint-attention transformer denoiser over text and image patch tokens,
// trained with a rectified-flow objective.
//
// Data space: pixel p in [0, 1] maps to x = 2p - 1. Noising follows
// x_t = (1 - t) x0 + t eps and the network predicts v = eps - x0.
//
// Image tokens are patches of `patch` x `patch` pixels, flattened as
// (row, column, channel). A canvas of k panels is tokenized panel by panel,
// row-major inside each panel, so a diptych sequence is
// [text; left panel; right panel].
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diptych/attention.hpp"
#include "diptych/caption.hpp"
#include "diptych/image.hpp"
#include "diptych/numerics.hpp"

namespace diptych {

struct DenoiserConfig {
  std::size_t panel = 32;
  std::size_t patch = 4;
  std::size_t dim = 64;
  std::size_t depth = 3;
  std::size_t heads = 2;
  std::size_t mlp = 128;
  std::size_t text_length = kDefaultCaptionLength;
  std::size_t vocab_size = 0;  // 0: size of the default tokenizer
  std::size_t time_features = 16;

  std::size_t tokens_per_panel() const { return (panel / patch) * (panel / patch); }
  std::size_t patch_values() const { return patch * patch * 3; }
  std::size_t head_dim() const { return dim / heads; }
  // Throws ConfigError on inconsistent sizes.
  void validate() const;
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct BlockParams {
  Matrix time_w;          // dim x dim, time embedding shift
  Matrix wq, wk, wv, wo;  // dim x dim
  Matrix bo;              // 1 x dim
  Matrix w1, b1;          // dim x mlp, 1 x mlp
  Matrix w2, b2;          // mlp x dim, 1 x dim
};

struct DenoiserParams {
  Matrix patch_w, patch_b;   // patch_values x dim, 1 x dim
  Matrix pos_img;            // tokens_per_panel x dim
  Matrix panel_emb;          // 2 x dim
  Matrix tok_emb;            // vocab x dim
  Matrix pos_txt;            // text_length x dim
  Matrix time_w1, time_b1;   // time_features x dim, 1 x dim
  Matrix time_w2, time_b2;   // dim x dim, 1 x dim
  std::vector<BlockParams> blocks;
  Matrix out_w, out_b;       // dim x patch_values, 1 x patch_values

  // Tensors in declaration order (the checkpoint order).
  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  // Same shapes, all zeros.
  DenoiserParams zeros_like() const;
};

class DenoiserModel {
 public:
  DenoiserModel() = default;
  DenoiserModel(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }
  DenoiserParams& params() { return params_; }
  const DenoiserParams& params() const { return params_; }
  std::size_t parameter_count() const;
  bool all_finite() const;
  // Stable hash of config and parameter bytes.
  std::uint64_t fingerprint() const;

 private:
  DenoiserConfig config_;
  DenoiserParams params_;
};

// Pixel image (height x k*panel) to data-space patch tokens and back.
Matrix to_tokens(const ToyImage& image, std::size_t panel, std::size_t patch);
// Inverse of to_tokens; pixel values are clamped to [0, 1].
ToyImage from_tokens(const Matrix& tokens, std::size_t height, std::size_t width, std::size_t panel,
                     std::size_t patch);
// Per-value mask in token layout (1 where the mask is set).
Matrix mask_tokens(const BinaryMask& mask, std::size_t panel, std::size_t patch);

// Tanh-form GELU and its derivative.
double gelu(double x);
double gelu_grad(double x);
// Time features (sin, cos)(pi 2^k t) for k < count / 2, as a 1 x count row.
Matrix fourier_features(double t, std::size_t count);

// Partition of a two-panel joint sequence.
AttentionPartition diptych_partition(const DenoiserConfig& config);

struct VelocityQuery {
  const Matrix* x_t = nullptr;  // image tokens
  double t = 0.0;
  const Caption* caption = nullptr;
  const EnhancementConfig* enhancement = nullptr;       // nullptr: no enhancement
  std::optional<AttentionPartition> partition;           // required when enhancement is not a no-op
  const std::vector<Matrix>* injections = nullptr;       // per block, image tokens x dim
};

// Velocity prediction, same shape as x_t.
Matrix predict_velocity(const DenoiserModel& model, const VelocityQuery& query);

// Convenience overload without adapter injections.
Matrix predict_velocity(const DenoiserModel& model, const Matrix& x_t, double t, const Caption& caption,
                        const EnhancementConfig& cfg = {},
                        const std::optional<AttentionPartition>& partition = std::nullopt);

struct LossQuery {
  const Matrix* x0 = nullptr;     // clean data-space tokens
  const Matrix* noise = nullptr;  // same shape
  double t = 0.5;
  const Caption* caption = nullptr;
  const Matrix* loss_mask = nullptr;               // per-value weights; nullptr: all ones
  const std::vector<Matrix>* injections = nullptr;
};

struct LossGradients {
  DenoiserParams* params = nullptr;              // accumulated into when set
  std::vector<Matrix>* injections = nullptr;     // accumulated into when set
  double weight = 1.0;                           // multiplies every accumulated gradient
};

// Mean squared velocity error over the (masked) values. Accumulates
// weight * d(loss)/d(.) into the requested gradient buffers.
double velocity_loss(const DenoiserModel& model, const LossQuery& query, const LossGradients& grads = {});

struct TrainingSample {
  ToyImage image;  // height = panel, width a multiple of panel
  Caption caption;
};

struct TrainingConfig {
  std::size_t steps = 2000;
  std::size_t batch = 16;
  double learning_rate = 0.5;
  double momentum = 0.9;
  std::size_t warmup = 200;
  double final_lr_fraction = 0.05;
  double clip_norm = 1.0;
  double caption_dropout = 0.1;
  double heldout_fraction = 0.05;
  std::size_t max_heldout = 128;
  std::size_t eval_every = 0;  // 0: once per epoch
};

struct LossPoint {
  std::size_t step = 0;
  double train = 0.0;    // mean training loss since the previous point
  double heldout = 0.0;
};

struct TrainingReport {
  double initial_heldout = 0.0;
  std::vector<LossPoint> curve;
  std::size_t train_items = 0;
  std::size_t heldout_items = 0;
  double seconds = 0.0;
  double final_heldout() const { return curve.empty() ? initial_heldout : curve.back().heldout; }
};

using ProgressFn = std::function<void(const LossPoint&)>;

// SGD with momentum under a warmup + cosine schedule. Throws TrainingError
// when the loss or a gradient becomes non-finite, and InputError on an empty
// dataset or panel-incompatible images.
DenoiserModel train_denoiser(const std::vector<TrainingSample>& dataset, const DenoiserConfig& model_config,
                             const TrainingConfig& config, SeededRng& rng, TrainingReport* report = nullptr,
                             const ProgressFn& progress = {});

// Applies one SGD-with-momentum update to `params` (shared with the adapter).
void sgd_step(std::vector<std::pair<std::string, Matrix*>> params,
              std::vector<std::pair<std::string, Matrix*>> grads, std::vector<Matrix>& velocity, double lr,
              double momentum, double clip_norm);

double schedule_lr(const TrainingConfig& config, std::size_t step);

struct SamplerConfig {
  std::size_t steps = 30;
  double guidance_scale = 3.5;
  std::uint64_t seed = 0;
  double conditioning_scale = 0.95;
  double lambda = 1.3;
  // Throws ConfigError on steps == 0, negative guidance, scale outside [0, 1]
  // or lambda < 1.
  void validate() const;
};

// Guided velocity: v_u + s (v_c - v_u), with s = 0 and s = 1 taken exactly.
Matrix guided_velocity(const DenoiserModel& model, VelocityQuery query, const Caption& unconditional,
                       double guidance_scale);

// Euler integration from t = 1 (noise drawn from rng) to t = 0 of a
// `panels`-wide canvas, with classifier-free guidance.
ToyImage sample(const DenoiserModel& model, const Caption& caption, const SamplerConfig& sampler, SeededRng& rng,
                std::size_t panels = 1, const EnhancementConfig& cfg = {});

void save_model(const std::filesystem::path& path, const DenoiserModel& model);
DenoiserModel load_model(const std::filesystem::path& path);

// Little-endian tensor block helpers shared with the adapter checkpoint.
void write_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void write_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void write_tensor(std::vector<std::uint8_t>& out, const Matrix& m);
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint32_t u32();
  std::uint64_t u64();
  void tensor_into(Matrix& m);  // shape must match m
  void expect_magic(std::string_view magic);
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace diptych
