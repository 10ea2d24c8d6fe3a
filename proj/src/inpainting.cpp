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


#include "diptych/inpainting.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "diptych/error.hpp"

namespace diptych {

std::string_view to_string(InpaintStrategy strategy) {
  return strategy == InpaintStrategy::kZeroShot ? "zero-shot" : "conditioned";
}

InpaintStrategy strategy_from_string(std::string_view name) {
  if (name == "zero-shot" || name == "zeroshot") return InpaintStrategy::kZeroShot;
  if (name == "conditioned") return InpaintStrategy::kConditioned;
  throw ConfigError("unknown inpainting strategy '" + std::string(name) + "'");
}

void InpaintRequest::validate(const DenoiserConfig& config) const {
  const std::size_t p = config.panel;
  if (canvas.left.height() != p || canvas.left.width() != p || canvas.right.height() != p ||
      canvas.right.width() != p) {
    throw ShapeError("canvas panels must be " + std::to_string(p) + " x " + std::to_string(p));
  }
  if (mask.values.height != p || mask.values.width != 2 * p) throw ShapeError("mask must cover the whole diptych");
  if (caption.ids.size() != config.text_length) throw ShapeError("caption length does not match the model");
  sampler.validate();
}

Matrix adapter_condition(const Matrix& canvas_tokens, const Matrix& mask_tokens) {
  if (canvas_tokens.rows() != mask_tokens.rows() || canvas_tokens.cols() != mask_tokens.cols()) {
    throw ShapeError("condition canvas and mask tokens differ in shape");
  }
  const std::size_t v = canvas_tokens.cols();
  Matrix c(canvas_tokens.rows(), 2 * v);
  for (std::size_t r = 0; r < c.rows(); ++r) {
    for (std::size_t j = 0; j < v; ++j) {
      const double m = mask_tokens(r, j);
      c(r, j) = m != 0.0 ? 0.0 : canvas_tokens(r, j);
      c(r, v + j) = m;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Adapter

std::vector<std::pair<std::string, Matrix*>> AdapterParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out = {{"in_w", &in_w}, {"in_b", &in_b}, {"time_w", &time_w}};
  for (std::size_t b = 0; b < out_w.size(); ++b) {
    out.emplace_back("block" + std::to_string(b) + ".out_w", &out_w[b]);
    out.emplace_back("block" + std::to_string(b) + ".out_b", &out_b[b]);
  }
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> AdapterParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (const auto& [name, m] : const_cast<AdapterParams*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

AdapterParams AdapterParams::zeros_like() const {
  AdapterParams z = *this;
  for (auto& [name, m] : z.tensors()) m->fill(0.0);
  return z;
}

ConditionAdapter::ConditionAdapter(const DenoiserModel& base, const AdapterConfig& config, std::uint64_t seed)
    : config_(config), base_fingerprint_(base.fingerprint()), depth_(base.config().depth) {
  if (config.hidden == 0) throw ConfigError("adapter hidden width must be positive");
  const DenoiserConfig& c = base.config();
  cells_ = c.panel / c.patch;
  if (config.radius >= cells_) throw ConfigError("adapter window radius must be smaller than the panel grid");
  token_dim_ = 2 * c.patch_values();
  const std::size_t side = 2 * config.radius + 1;
  const std::size_t window = side * side * (token_dim_ + c.patch_values());
  SeededRng rng(seed);
  const auto gaussian_fill = [&](Matrix& m, double stddev) {
    for (double& v : m.values()) v = stddev * rng.normal();
  };
  params_.in_w = Matrix(window, config.hidden);
  gaussian_fill(params_.in_w, 1.0 / std::sqrt(static_cast<double>(window)));
  params_.in_b = Matrix(1, config.hidden);
  params_.time_w = Matrix(c.time_features, config.hidden);
  gaussian_fill(params_.time_w, 1.0 / std::sqrt(static_cast<double>(c.time_features)));
  for (std::size_t b = 0; b < c.depth; ++b) {
    params_.out_w.emplace_back(config.hidden, c.dim);
    params_.out_b.emplace_back(1, c.dim);
  }
}

Matrix ConditionAdapter::gather_window(const Matrix& condition, const Matrix& x_t) const {
  if (condition.cols() != token_dim_) throw ShapeError("adapter condition has the wrong width");
  if (x_t.rows() != condition.rows() || 2 * x_t.cols() != token_dim_) {
    throw ShapeError("adapter x_t does not match the condition");
  }
  const std::size_t width = x_t.cols() + token_dim_;
  if (condition.rows() == 0 || condition.rows() % (cells_ * cells_) != 0) {
    throw ShapeError("adapter condition is not a whole number of panels");
  }
  const std::size_t rows = cells_, cols = condition.rows() / cells_;
  const auto r = static_cast<std::ptrdiff_t>(config_.radius);
  Matrix out(condition.rows(), window_dim());
  for (std::size_t gy = 0; gy < rows; ++gy) {
    for (std::size_t gx = 0; gx < cols; ++gx) {
      const std::size_t token = gy * cols + gx;
      double* dst = out.row(token).data();
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx, dst += width) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(gy) + dy, x = static_cast<std::ptrdiff_t>(gx) + dx;
          if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(rows) || x >= static_cast<std::ptrdiff_t>(cols)) continue;
          const std::size_t src = static_cast<std::size_t>(y) * cols + static_cast<std::size_t>(x);
          const auto noisy = x_t.row(src);
          const auto cond = condition.row(src);
          std::copy(noisy.begin(), noisy.end(), dst);
          std::copy(cond.begin(), cond.end(), dst + noisy.size());
        }
      }
    }
  }
  return out;
}

std::size_t ConditionAdapter::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : params_.tensors()) n += m->size();
  return n;
}

void ConditionAdapter::check_compatible(const DenoiserModel& base) const {
  if (params_.in_w.empty()) throw CompatibilityError("adapter is empty");
  if (base.config().depth != depth_ || base.fingerprint() != base_fingerprint_) {
    throw CompatibilityError("adapter was trained for a different base model");
  }
}

std::vector<Matrix> ConditionAdapter::injections(const Matrix& condition, const Matrix& x_t, double t, double scale,
                                                 Cache* cache) const {
  Matrix window = gather_window(condition, x_t);
  const std::size_t time_features = params_.time_w.rows();
  const Matrix features = fourier_features(t, time_features);
  Matrix pre = matmul(window, params_.in_w);
  const Matrix shift = matmul(features, params_.time_w);
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    auto row = pre.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += shift(0, j) + params_.in_b(0, j);
  }
  Matrix hidden = pre;
  for (double& v : hidden.values()) v = gelu(v);
  std::vector<Matrix> out;
  out.reserve(depth_);
  for (std::size_t b = 0; b < depth_; ++b) {
    Matrix inj = matmul(hidden, params_.out_w[b]);
    for (std::size_t r = 0; r < inj.rows(); ++r) {
      auto row = inj.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = scale * (row[j] + params_.out_b[b](0, j));
    }
    out.push_back(std::move(inj));
  }
  if (cache != nullptr) *cache = {std::move(window), features, std::move(pre), std::move(hidden)};
  return out;
}

void ConditionAdapter::backward(const Cache& cache, const std::vector<Matrix>& d_injections, double scale,
                                AdapterParams& grads) const {
  if (d_injections.size() != depth_) throw ShapeError("one injection gradient per block is required");
  Matrix dhidden(cache.hidden.rows(), cache.hidden.cols());
  for (std::size_t b = 0; b < depth_; ++b) {
    Matrix d = d_injections[b];
    for (double& v : d.values()) v *= scale;
    matmul_tn_acc(cache.hidden, d, grads.out_w[b]);
    for (std::size_t r = 0; r < d.rows(); ++r) {
      for (std::size_t j = 0; j < d.cols(); ++j) grads.out_b[b](0, j) += d(r, j);
    }
    matmul_acc(d, transpose(params_.out_w[b]), dhidden);
  }
  for (std::size_t i = 0; i < dhidden.size(); ++i) dhidden.values()[i] *= gelu_grad(cache.pre.values()[i]);
  matmul_tn_acc(cache.window, dhidden, grads.in_w);
  Matrix colsum(1, dhidden.cols());
  for (std::size_t r = 0; r < dhidden.rows(); ++r) {
    for (std::size_t j = 0; j < dhidden.cols(); ++j) colsum(0, j) += dhidden(r, j);
  }
  for (std::size_t j = 0; j < colsum.cols(); ++j) grads.in_b(0, j) += colsum(0, j);
  matmul_tn_acc(cache.features, colsum, grads.time_w);
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

double seam_gradient(const ToyImage& image, const BinaryMask& mask) {
  double total = 0.0;
  std::size_t count = 0;
  const auto edge = [&](std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1) {
    if (mask.at(y0, x0) == mask.at(y1, x1)) return;
    for (std::size_t c = 0; c < 3; ++c) total += std::abs(image.at(y0, x0, c) - image.at(y1, x1, c)) / 3.0;
    ++count;
  };
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      if (x + 1 < image.width()) edge(y, x, y, x + 1);
      if (y + 1 < image.height()) edge(y, x, y + 1, x);
    }
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

InpaintResult run_inpaint(const DenoiserModel& model, const ConditionAdapter* adapter, const InpaintRequest& req,
                          const EnhancementConfig& cfg, SeededRng& rng) {
  const DenoiserConfig& c = model.config();
  req.validate(c);
  cfg.validate();
  const ToyImage input = req.canvas.compose();
  const Matrix known = to_tokens(input, c.panel, c.patch);
  const Matrix m = mask_tokens(req.mask.values, c.panel, c.patch);
  Matrix eps(known.rows(), known.cols());
  for (double& v : eps.values()) v = rng.normal();

  const bool anything = std::any_of(req.mask.values.values.begin(), req.mask.values.values.end(),
                                    [](std::uint8_t v) { return v != 0; });
  InpaintResult result;
  if (!anything) {
    result.canvas = req.canvas;
    return result;
  }

  const double scale = req.sampler.conditioning_scale;
  const bool use_adapter = adapter != nullptr && scale != 0.0;
  Matrix condition;
  if (use_adapter) condition = adapter_condition(known, m);
  const Caption uncond{std::vector<std::int32_t>(c.text_length, Tokenizer::kPad)};
  Matrix x = eps;
  VelocityQuery q;
  q.caption = &req.caption;
  q.enhancement = &cfg;
  q.partition = diptych_partition(c);
  std::vector<Matrix> inj;
  const std::size_t n = req.sampler.steps;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(n - i) / static_cast<double>(n);
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (m.values()[j] == 0.0) x.values()[j] = (1.0 - t) * known.values()[j] + t * eps.values()[j];
    }
    q.x_t = &x;
    q.t = t;
    if (use_adapter) {
      inj = adapter->injections(condition, x, t, scale);
      q.injections = &inj;
    }
    const Matrix v = guided_velocity(model, q, uncond, req.sampler.guidance_scale);
    for (std::size_t j = 0; j < x.size(); ++j) x.values()[j] -= v.values()[j] / static_cast<double>(n);
  }
  ToyImage out = from_tokens(x, c.panel, 2 * c.panel, c.panel, c.patch);
  for (std::size_t y = 0; y < out.height(); ++y) {
    for (std::size_t xx = 0; xx < out.width(); ++xx) {
      if (req.mask.values.at(y, xx)) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(y, xx, ch) = input.at(y, xx, ch);
    }
  }
  result.seam_gradient = seam_gradient(out, req.mask.values);
  result.canvas = DiptychCanvas::split(out);
  return result;
}

}  // namespace

InpaintResult zeroshot_inpaint(const DenoiserModel& model, const InpaintRequest& request,
                               const EnhancementConfig& cfg, SeededRng& rng) {
  if (request.strategy != InpaintStrategy::kZeroShot) throw ConfigError("zero-shot inpainting needs that strategy");
  return run_inpaint(model, nullptr, request, cfg, rng);
}

InpaintResult conditioned_inpaint(const DenoiserModel& model, const ConditionAdapter& adapter,
                                  const InpaintRequest& request, const EnhancementConfig& cfg, SeededRng& rng) {
  if (request.strategy != InpaintStrategy::kConditioned) {
    throw ConfigError("conditioned inpainting needs the conditioned strategy");
  }
  adapter.check_compatible(model);
  return run_inpaint(model, &adapter, request, cfg, rng);
}

InpaintResult inpaint(const DenoiserModel& model, const ConditionAdapter* adapter, const InpaintRequest& request,
                      const EnhancementConfig& cfg, SeededRng& rng) {
  if (request.strategy == InpaintStrategy::kZeroShot) return zeroshot_inpaint(model, request, cfg, rng);
  if (adapter == nullptr) throw ConfigError("conditioned inpainting needs an adapter");
  return conditioned_inpaint(model, *adapter, request, cfg, rng);
}

// ---------------------------------------------------------------------------
// Adapter training

BinaryMask random_training_mask(std::size_t height, std::size_t width, std::size_t panel, std::size_t patch,
                                double full_right_probability, SeededRng& rng) {
  BinaryMask mask(height, width);
  if (width == 2 * panel && rng.uniform() < full_right_probability) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = panel; x < width; ++x) mask.at(y, x) = 1;
    }
    return mask;
  }
  const std::size_t cells = panel / patch;
  const std::size_t lo = std::max<std::size_t>(1, cells / 4), hi = std::max(lo, cells * 3 / 4);
  const std::size_t h = lo + rng.below(hi - lo + 1), w = lo + rng.below(hi - lo + 1);
  const std::size_t top = rng.below(height / patch - h + 1), left = rng.below(width / patch - w + 1);
  for (std::size_t y = top * patch; y < (top + h) * patch; ++y) {
    for (std::size_t x = left * patch; x < (left + w) * patch; ++x) mask.at(y, x) = 1;
  }
  return mask;
}

namespace {

struct MaskedItem {
  std::size_t index;
  double t;
  Matrix noise;
  Matrix mask;       // token layout
  Matrix condition;
};

double masked_loss(const DenoiserModel& model, const ConditionAdapter& adapter, const Matrix& x0,
                   const MaskedItem& item, const Caption& caption, AdapterParams* grads, double weight) {
  ConditionAdapter::Cache cache;
  Matrix x_t(x0.rows(), x0.cols());
  for (std::size_t j = 0; j < x_t.size(); ++j) {
    x_t.values()[j] = (1.0 - item.t) * x0.values()[j] + item.t * item.noise.values()[j];
  }
  const std::vector<Matrix> inj = adapter.injections(item.condition, x_t, item.t, 1.0, grads != nullptr ? &cache : nullptr);
  LossQuery q;
  q.x0 = &x0;
  q.noise = &item.noise;
  q.t = item.t;
  q.caption = &caption;
  q.loss_mask = &item.mask;
  q.injections = &inj;
  std::vector<Matrix> dinj;
  LossGradients lg;
  lg.weight = weight;
  if (grads != nullptr) lg.injections = &dinj;
  const double loss = velocity_loss(model, q, lg);
  if (grads != nullptr) adapter.backward(cache, dinj, 1.0, *grads);
  return loss;
}

}  // namespace

ConditionAdapter train_condition_adapter(const DenoiserModel& model, const std::vector<TrainingSample>& dataset,
                                         const AdapterTrainingConfig& config, SeededRng& rng, TrainingReport* report,
                                         const ProgressFn& progress) {
  if (dataset.empty()) throw InputError("adapter dataset is empty");
  if (config.batch == 0 || config.steps == 0) throw ConfigError("adapter training needs positive steps and batch");
  if (!(config.full_right_probability >= 0.0 && config.full_right_probability <= 1.0)) {
    throw ConfigError("full_right_probability must lie in [0, 1]");
  }
  const auto start = std::chrono::steady_clock::now();
  const DenoiserConfig& c = model.config();
  ConditionAdapter adapter(model, config.adapter, rng.next_u64());
  std::vector<Matrix> tokens;
  for (const TrainingSample& s : dataset) {
    try {
      tokens.push_back(to_tokens(s.image, c.panel, c.patch));
    } catch (const ShapeError& e) {
      throw InputError(std::string("adapter training image rejected: ") + e.what());
    }
    if (s.caption.ids.size() != c.text_length) throw InputError("adapter training caption has the wrong length");
  }
  const auto make_item = [&](std::size_t idx, double t, SeededRng& r) {
    MaskedItem it;
    it.index = idx;
    it.t = t;
    it.noise = Matrix(tokens[idx].rows(), tokens[idx].cols());
    for (double& v : it.noise.values()) v = r.normal();
    const ToyImage& img = dataset[idx].image;
    it.mask = mask_tokens(random_training_mask(img.height(), img.width(), c.panel, c.patch,
                                               config.full_right_probability, r),
                          c.panel, c.patch);
    it.condition = adapter_condition(tokens[idx], it.mask);
    return it;
  };

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::size_t> train_idx, held_idx;
  if (dataset.size() == 1) {
    train_idx = held_idx = order;
  } else {
    const auto want =
        static_cast<std::size_t>(std::llround(config.heldout_fraction * static_cast<double>(dataset.size())));
    const std::size_t held = std::clamp<std::size_t>(want, 1, std::min(config.max_heldout, dataset.size() - 1));
    held_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
    train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  }
  std::vector<MaskedItem> held;
  SeededRng held_rng = rng.child(2);
  for (std::size_t j = 0; j < held_idx.size(); ++j) {
    held.push_back(make_item(held_idx[j], (static_cast<double>(j) + 0.5) / static_cast<double>(held_idx.size()),
                             held_rng));
  }
  const auto heldout = [&] {
    double total = 0.0;
    for (const MaskedItem& it : held) {
      total += masked_loss(model, adapter, tokens[it.index], it, dataset[it.index].caption, nullptr, 1.0);
    }
    return total / static_cast<double>(held.size());
  };

  TrainingReport local;
  TrainingReport& rep = report != nullptr ? *report : local;
  rep = {};
  rep.train_items = train_idx.size();
  rep.heldout_items = held_idx.size();
  rep.initial_heldout = heldout();

  TrainingConfig schedule;
  schedule.steps = config.steps;
  schedule.learning_rate = config.learning_rate;
  schedule.warmup = config.warmup;
  schedule.final_lr_fraction = config.final_lr_fraction;
  const std::size_t per_epoch = (train_idx.size() + config.batch - 1) / config.batch;
  const std::size_t eval_every = config.eval_every > 0 ? config.eval_every : per_epoch;
  const Caption uncond{std::vector<std::int32_t>(c.text_length, Tokenizer::kPad)};
  AdapterParams grads = adapter.params().zeros_like();
  std::vector<Matrix> momentum;
  std::vector<std::size_t> epoch_order;
  std::size_t cursor = 0;
  double running = 0.0;
  std::size_t running_n = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    try {
      for (auto& [name, g] : grads.tensors()) g->fill(0.0);
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < config.batch; ++b) {
        if (cursor == epoch_order.size()) {
          epoch_order = train_idx;
          for (std::size_t i = epoch_order.size(); i > 1; --i) std::swap(epoch_order[i - 1], epoch_order[rng.below(i)]);
          cursor = 0;
        }
        const std::size_t idx = epoch_order[cursor++];
        const MaskedItem it = make_item(idx, rng.uniform(), rng);
        const Caption& caption = rng.uniform() < config.caption_dropout ? uncond : dataset[idx].caption;
        const double loss =
            masked_loss(model, adapter, tokens[idx], it, caption, &grads, 1.0 / static_cast<double>(config.batch));
        if (!std::isfinite(loss)) throw TrainingError("adapter loss became non-finite at step " + std::to_string(step));
        batch_loss += loss;
      }
      sgd_step(adapter.params().tensors(), grads.tensors(), momentum, schedule_lr(schedule, step), config.momentum,
               config.clip_norm);
      for (const auto& [name, m] : adapter.params().tensors()) {
        if (!m->all_finite()) throw TrainingError("adapter parameters became non-finite at step " + std::to_string(step));
      }
      running += batch_loss / static_cast<double>(config.batch);
      ++running_n;
      if ((step + 1) % eval_every == 0 || step + 1 == config.steps) {
        LossPoint pt{step + 1, running / static_cast<double>(running_n), heldout()};
        if (!std::isfinite(pt.heldout)) throw TrainingError("adapter held-out loss became non-finite");
        rep.curve.push_back(pt);
        if (progress) progress(pt);
        running = 0.0;
        running_n = 0;
      }
    } catch (const NumericError& e) {
      throw TrainingError("adapter training diverged at step " + std::to_string(step) + ": " + e.what());
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return adapter;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr std::uint32_t kAdapterVersion = 2;
}  // namespace

void save_adapter(const std::filesystem::path& path, const ConditionAdapter& adapter) {
  std::vector<std::uint8_t> out = {'D', 'P', 'A', 'D'};
  write_u32(out, kAdapterVersion);
  write_u64(out, adapter.base_fingerprint());
  write_u64(out, adapter.config().hidden);
  write_u64(out, adapter.config().radius);
  write_u64(out, adapter.condition_dim());
  write_u64(out, adapter.cells());
  write_u64(out, adapter.params().time_w.rows());
  write_u64(out, adapter.params().out_w.size());
  write_u64(out, adapter.params().out_w.empty() ? 0 : adapter.params().out_w[0].cols());
  const auto tensors = adapter.params().tensors();
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) write_tensor(out, *m);
  write_file(path, out);
}

ConditionAdapter load_adapter(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader in(bytes);
  in.expect_magic("DPAD");
  if (const std::uint32_t v = in.u32(); v != kAdapterVersion) {
    throw IoError("unsupported adapter checkpoint version " + std::to_string(v));
  }
  const std::uint64_t fingerprint = in.u64();
  AdapterConfig config;
  config.hidden = in.u64();
  config.radius = in.u64();
  const std::size_t cond = in.u64(), cells = in.u64(), time_features = in.u64(), depth = in.u64(), dim = in.u64();
  if (config.hidden == 0 || cond == 0 || cells == 0 || time_features == 0 || depth == 0 || dim == 0 ||
      config.hidden > 4096 || cond > 4096 || cells > 1024 || config.radius >= cells || time_features > 4096 ||
      depth > 256 || dim > 4096) {
    throw IoError("adapter checkpoint has implausible sizes");
  }
  ConditionAdapter adapter = ConditionAdapter::restore(config, fingerprint, cond, cells, time_features, depth, dim);
  auto tensors = adapter.params().tensors();
  if (in.u32() != tensors.size()) throw IoError("adapter tensor count does not match its configuration");
  for (auto& [name, m] : tensors) in.tensor_into(*m);
  if (!in.at_end()) throw IoError("trailing bytes after adapter checkpoint");
  return adapter;
}

ConditionAdapter ConditionAdapter::restore(const AdapterConfig& config, std::uint64_t base_fingerprint,
                                           std::size_t condition_dim, std::size_t cells, std::size_t time_features,
                                           std::size_t depth, std::size_t dim) {
  ConditionAdapter a;
  a.config_ = config;
  a.base_fingerprint_ = base_fingerprint;
  a.depth_ = depth;
  a.token_dim_ = condition_dim;
  a.cells_ = cells;
  const std::size_t side = 2 * config.radius + 1;
  a.params_.in_w = Matrix(side * side * (condition_dim + condition_dim / 2), config.hidden);
  a.params_.in_b = Matrix(1, config.hidden);
  a.params_.time_w = Matrix(time_features, config.hidden);
  for (std::size_t b = 0; b < depth; ++b) {
    a.params_.out_w.emplace_back(config.hidden, dim);
    a.params_.out_b.emplace_back(1, dim);
  }
  return a;
}

}  // namespace diptych
