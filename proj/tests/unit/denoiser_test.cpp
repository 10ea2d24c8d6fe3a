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


#include "diptych/denoiser.hpp"

#include <gtest/gtest.h>

#include <cstring>

#include "diptych/error.hpp"

namespace diptych {
namespace {

DenoiserConfig tiny_config(std::size_t depth = 2) {
  DenoiserConfig c;
  c.panel = 8;
  c.patch = 4;
  c.dim = 8;
  c.depth = depth;
  c.heads = 2;
  c.mlp = 12;
  c.text_length = 5;
  c.vocab_size = 7;
  c.time_features = 4;
  return c;
}

Matrix random_matrix(SeededRng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

Caption caption_of(std::initializer_list<std::int32_t> ids) { return Caption{std::vector<std::int32_t>(ids)}; }

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Finite-difference check of every tensor of a tiny two-block model on a
// diptych input with a partial loss mask and adapter injections.
TEST(DenoiserGradients, EveryTensorMatchesFiniteDifferences) {
  SeededRng rng(31);
  DenoiserModel model(tiny_config(), 5);
  // Give the zero-initialised biases some signal.
  for (auto& [name, m] : model.params().tensors()) {
    for (double& v : m->values()) v += 0.05 * rng.normal();
  }
  const std::size_t n = 2 * model.config().tokens_per_panel();
  const Matrix x0 = random_matrix(rng, n, model.config().patch_values(), 0.5);
  const Matrix noise = random_matrix(rng, n, model.config().patch_values());
  Matrix mask(n, model.config().patch_values());
  for (double& v : mask.values()) v = rng.uniform() < 0.6 ? 1.0 : 0.0;
  std::vector<Matrix> inj;
  for (std::size_t b = 0; b < model.config().depth; ++b) inj.push_back(random_matrix(rng, n, model.config().dim, 0.1));
  const Caption cap = caption_of({1, 3, 6, 0, 0});

  LossQuery q;
  q.x0 = &x0;
  q.noise = &noise;
  q.t = 0.37;
  q.caption = &cap;
  q.loss_mask = &mask;
  q.injections = &inj;

  DenoiserParams grads = model.params().zeros_like();
  std::vector<Matrix> ginj;
  velocity_loss(model, q, {&grads, &ginj, 1.0});

  auto params = model.params().tensors();
  const auto gparams = grads.tensors();
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    Matrix* target = params[ti].second;
    const std::vector<double> base(target->values().begin(), target->values().end());
    const std::vector<double> analytic(gparams[ti].second->values().begin(), gparams[ti].second->values().end());
    const ScalarFn f = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), target->values().begin());
      const double l = velocity_loss(model, q);
      std::copy(base.begin(), base.end(), target->values().begin());
      return l;
    };
    const GradientFn g = [&](std::span<const double>) { return analytic; };
    EXPECT_LT(finite_difference_check(f, g, base, 1e-5), 1e-3) << params[ti].first;
  }
  for (std::size_t b = 0; b < inj.size(); ++b) {
    const std::vector<double> base(inj[b].values().begin(), inj[b].values().end());
    const std::vector<double> analytic(ginj[b].values().begin(), ginj[b].values().end());
    const ScalarFn f = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), inj[b].values().begin());
      const double l = velocity_loss(model, q);
      std::copy(base.begin(), base.end(), inj[b].values().begin());
      return l;
    };
    const GradientFn g = [&](std::span<const double>) { return analytic; };
    EXPECT_LT(finite_difference_check(f, g, base, 1e-5), 1e-3) << "injection " << b;
  }
}

TEST(DenoiserGradients, WeightScalesAccumulatedGradients) {
  SeededRng rng(32);
  DenoiserModel model(tiny_config(1), 6);
  const std::size_t n = model.config().tokens_per_panel();
  const Matrix x0 = random_matrix(rng, n, 48, 0.5), noise = random_matrix(rng, n, 48);
  const Caption cap = caption_of({1, 2, 0, 0, 0});
  LossQuery q{&x0, &noise, 0.6, &cap, nullptr, nullptr};
  DenoiserParams g1 = model.params().zeros_like(), g2 = model.params().zeros_like();
  velocity_loss(model, q, {&g1, nullptr, 1.0});
  velocity_loss(model, q, {&g2, nullptr, 0.5});
  velocity_loss(model, q, {&g2, nullptr, 0.5});
  const auto a = g1.tensors(), b = g2.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].second->size(); ++j) {
      EXPECT_NEAR(a[i].second->values()[j], b[i].second->values()[j], 1e-12);
    }
  }
}

TEST(Denoiser, TokenRoundTripAndPanelOrder) {
  SeededRng rng(33);
  ToyImage img(8, 16);
  for (double& v : img.values()) v = rng.uniform();
  const Matrix tok = to_tokens(img, 8, 4);
  ASSERT_EQ(tok.rows(), 8u);
  ASSERT_EQ(tok.cols(), 48u);
  const ToyImage back = from_tokens(tok, 8, 16, 8, 4);
  for (std::size_t i = 0; i < img.values().size(); ++i) EXPECT_NEAR(back.values()[i], img.values()[i], 1e-15);
  // Token 4 is the first patch of the right panel: pixel (0, 8).
  EXPECT_DOUBLE_EQ(tok(4, 0), 2.0 * img.at(0, 8, 0) - 1.0);
  // Token 1 is the second patch of the left panel's first row: pixel (0, 4).
  EXPECT_DOUBLE_EQ(tok(1, 3 * 0 + 1), 2.0 * img.at(0, 4, 1) - 1.0);
  EXPECT_THROW(to_tokens(ToyImage(8, 12), 8, 4), ShapeError);
  BinaryMask m(8, 16);
  m.at(0, 8) = 1;
  const Matrix mt = mask_tokens(m, 8, 4);
  EXPECT_EQ(mt(4, 0), 1.0);
  EXPECT_EQ(mt(4, 1), 1.0);
  EXPECT_EQ(mt(4, 2), 1.0);
  EXPECT_EQ(mt(4, 3), 0.0);
}

TEST(Denoiser, PredictVelocityContract) {
  SeededRng rng(34);
  for (int trial = 0; trial < 8; ++trial) {
    DenoiserConfig c = tiny_config(1 + rng.below(3));
    c.heads = 1 + rng.below(2);
    DenoiserModel model(c, rng.next_u64());
    const std::size_t panels = 1 + rng.below(2);
    const Matrix x = random_matrix(rng, panels * c.tokens_per_panel(), c.patch_values());
    const Caption cap = caption_of({1, 4, 2, 0, 0});
    const double t = rng.uniform();
    const Matrix v1 = predict_velocity(model, x, t, cap);
    const Matrix v2 = predict_velocity(model, x, t, cap);
    EXPECT_EQ(v1.rows(), x.rows());
    EXPECT_EQ(v1.cols(), x.cols());
    EXPECT_TRUE(bitwise_equal(v1, v2));
    if (panels == 2) {
      const EnhancementConfig unit;
      EXPECT_TRUE(bitwise_equal(predict_velocity(model, x, t, cap, unit, diptych_partition(c)), v1));
      EnhancementConfig strong;
      strong.lambda = 1.5;
      const Matrix ve = predict_velocity(model, x, t, cap, strong, diptych_partition(c));
      EXPECT_FALSE(bitwise_equal(ve, v1));
      EXPECT_TRUE(ve.all_finite());
    }
  }
}

TEST(Denoiser, PartitionErrors) {
  DenoiserModel model(tiny_config(), 7);
  const Matrix x(8, 48);
  const Caption cap = caption_of({1, 0, 0, 0, 0});
  EnhancementConfig strong;
  strong.lambda = 1.3;
  EXPECT_THROW(predict_velocity(model, x, 0.5, cap, strong), ShapeError);
  EXPECT_THROW(predict_velocity(model, x, 0.5, cap, {}, AttentionPartition{5, 4, 3}), ShapeError);
  EXPECT_THROW(predict_velocity(model, x, 0.5, cap, {}, AttentionPartition{4, 4, 5}), ShapeError);
  EXPECT_THROW(predict_velocity(model, Matrix(12, 48), 0.5, cap), ShapeError);
  EXPECT_THROW(predict_velocity(model, x, 0.5, caption_of({1, 0, 0})), ShapeError);
  EXPECT_THROW(predict_velocity(model, x, 1.5, cap), InputError);
}

TEST(Sampler, GuidanceDegenerateCases) {
  SeededRng rng(35);
  DenoiserModel model(tiny_config(), 8);
  const Matrix x = random_matrix(rng, 4, 48);
  const Caption cap = caption_of({2, 3, 0, 0, 0});
  const Caption uncond = caption_of({0, 0, 0, 0, 0});
  VelocityQuery q;
  q.x_t = &x;
  q.t = 0.4;
  q.caption = &cap;
  EXPECT_TRUE(bitwise_equal(guided_velocity(model, q, uncond, 0.0), predict_velocity(model, x, 0.4, uncond)));
  EXPECT_TRUE(bitwise_equal(guided_velocity(model, q, uncond, 1.0), predict_velocity(model, x, 0.4, cap)));
  const Matrix vu = predict_velocity(model, x, 0.4, uncond), vc = predict_velocity(model, x, 0.4, cap);
  const Matrix g = guided_velocity(model, q, uncond, 3.5);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(g.values()[i], vu.values()[i] + 3.5 * (vc.values()[i] - vu.values()[i]), 1e-12);
  }
}

TEST(Sampler, DeterministicAndClamped) {
  DenoiserModel model(tiny_config(), 9);
  const Caption cap = caption_of({2, 3, 0, 0, 0});
  SamplerConfig s;
  s.steps = 5;
  SeededRng r1(77), r2(77);
  const ToyImage a = sample(model, cap, s, r1, 2);
  const ToyImage b = sample(model, cap, s, r2, 2);
  EXPECT_EQ(encode_png(a), encode_png(b));
  EXPECT_EQ(a.width(), 16u);
  for (double v : a.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  SamplerConfig bad = s;
  bad.steps = 0;
  EXPECT_THROW(sample(model, cap, bad, r1), ConfigError);
  bad = s;
  bad.guidance_scale = -1.0;
  EXPECT_THROW(sample(model, cap, bad, r1), ConfigError);
  bad = s;
  bad.lambda = 0.9;
  EXPECT_THROW(sample(model, cap, bad, r1), ConfigError);
}

TEST(Training, MemorizesASingleSample) {
  SeededRng rng(36);
  ToyImage img(8, 8);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) img.set_pixel(y, x, x < 4 ? Rgb{0.9, 0.1, 0.1} : Rgb{0.1, 0.2, 0.8});
  }
  const std::vector<TrainingSample> data = {{img, caption_of({1, 2, 0, 0, 0})}};
  TrainingConfig tc;
  tc.steps = 1500;
  tc.batch = 4;
  tc.learning_rate = 0.1;
  tc.warmup = 20;
  tc.caption_dropout = 0.0;
  TrainingReport rep;
  DenoiserConfig wide = tiny_config();
  wide.dim = 64;
  wide.mlp = 64;
  const DenoiserModel model = train_denoiser(data, wide, tc, rng, &rep);
  EXPECT_TRUE(model.all_finite());
  EXPECT_LT(rep.final_heldout(), 0.1 * rep.initial_heldout)
      << rep.initial_heldout << " -> " << rep.final_heldout();
}

TEST(Training, DeterministicPerSeed) {
  ToyImage img(8, 16, {0.3, 0.6, 0.9});
  const std::vector<TrainingSample> data = {{img, caption_of({1, 2, 0, 0, 0})},
                                            {ToyImage(8, 8, {0.1, 0.1, 0.1}), caption_of({3, 0, 0, 0, 0})},
                                            {ToyImage(8, 8, {0.9, 0.9, 0.1}), caption_of({4, 0, 0, 0, 0})}};
  TrainingConfig tc;
  tc.steps = 20;
  tc.batch = 2;
  tc.warmup = 5;
  SeededRng r1(5), r2(5);
  const DenoiserModel a = train_denoiser(data, tiny_config(), tc, r1);
  const DenoiserModel b = train_denoiser(data, tiny_config(), tc, r2);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
}

TEST(Training, RejectsBadInputsAndDivergence) {
  SeededRng rng(37);
  TrainingConfig tc;
  tc.steps = 10;
  EXPECT_THROW(train_denoiser({}, tiny_config(), tc, rng), InputError);
  EXPECT_THROW(train_denoiser({{ToyImage(8, 12), caption_of({1, 0, 0, 0, 0})}}, tiny_config(), tc, rng),
               InputError);
  tc.learning_rate = 1e200;
  tc.clip_norm = 0.0;
  tc.warmup = 0;
  EXPECT_THROW(train_denoiser({{ToyImage(8, 8, {0.2, 0.4, 0.6}), caption_of({1, 0, 0, 0, 0})}}, tiny_config(), tc,
                              rng),
               TrainingError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const DenoiserModel model(tiny_config(), 10);
  const auto dir = std::filesystem::temp_directory_path() / "diptych_ckpt_test";
  save_model(dir / "m.bin", model);
  const DenoiserModel back = load_model(dir / "m.bin");
  EXPECT_EQ(back.config(), model.config());
  EXPECT_EQ(back.fingerprint(), model.fingerprint());
  auto bytes = read_file(dir / "m.bin");
  bytes[0] = 'X';
  write_file(dir / "bad.bin", bytes);
  EXPECT_THROW(load_model(dir / "bad.bin"), IoError);
  bytes = read_file(dir / "m.bin");
  bytes.resize(bytes.size() - 3);
  write_file(dir / "short.bin", bytes);
  EXPECT_THROW(load_model(dir / "short.bin"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Model, ParameterCountAndFingerprint) {
  const DenoiserModel a(tiny_config(), 1), b(tiny_config(), 2);
  EXPECT_GT(a.parameter_count(), 0u);
  EXPECT_TRUE(a.all_finite());
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  DenoiserConfig bad = tiny_config();
  bad.heads = 3;
  EXPECT_THROW(DenoiserModel(bad, 1), ConfigError);
}

}  // namespace
}  // namespace diptych
