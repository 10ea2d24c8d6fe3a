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


#include "diptych/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "diptych/canvas.hpp"
#include "diptych/dataset.hpp"
#include "diptych/error.hpp"
#include "diptych/sprites.hpp"

namespace diptych {
namespace {

using nlohmann::json;
using Pairs = std::vector<std::pair<double, double>>;

const std::filesystem::path kFixtures = DIPTYCH_FIXTURE_DIR;
const std::filesystem::path kTextMap = DIPTYCH_TEXT_MAP;

json load_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

ToyImage render_json(const json& j) { return sprites::render(scene_from_json(j), 32).image; }

const TextAlignmentMap& shipped_map() {
  static const TextAlignmentMap m = TextAlignmentMap::load(kTextMap);
  return m;
}

// Two-sided p by enumerating every sign assignment of the ranked magnitudes.
double brute_force_p(const Pairs& pairs) {
  std::vector<double> d;
  for (const auto& [a, b] : pairs) {
    if (a != b) d.push_back(a - b);
  }
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++less;
      if (std::abs(d[j]) == std::abs(d[i])) ++equal;
    }
    rank[i] = less + (equal + 1) / 2;
  }
  double wp = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += rank[i];
    if (d[i] > 0) wp += rank[i];
  }
  const double stat = std::min(wp, total - wp);
  std::size_t hits = 0;
  for (std::size_t signs = 0; signs < (std::size_t{1} << n); ++signs) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (signs >> i & 1) w += rank[i];
    }
    if (w <= stat + 1e-9) ++hits;
  }
  return std::min(1.0, 2.0 * static_cast<double>(hits) / std::ldexp(1.0, static_cast<int>(n)));
}

Pairs random_pairs(SeededRng& rng, std::size_t n, bool ties) {
  Pairs p;
  for (std::size_t i = 0; i < n; ++i) {
    double a = rng.uniform(), b = rng.uniform() + 0.1 * rng.normal();
    if (ties) {
      a = std::round(a * 4) / 4;
      b = std::round(b * 4) / 4;
    }
    p.emplace_back(a, b);
  }
  return p;
}

TEST(Wilcoxon, MatchesSignEnumerationForSmallSuites) {
  SeededRng rng(71);
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int rep = 0; rep < 20; ++rep) {
      const Pairs p = random_pairs(rng, n, rep % 2 == 1);
      bool all_zero = true;
      for (const auto& [a, b] : p) all_zero = all_zero && a == b;
      if (all_zero) continue;
      const WilcoxonResult r = wilcoxon_signed_rank(p);
      EXPECT_TRUE(r.exact);
      EXPECT_NEAR(r.p_value, brute_force_p(p), 1e-12) << "n=" << n << " rep=" << rep;
      EXPECT_DOUBLE_EQ(r.statistic, std::min(r.w_plus, r.w_minus));
      EXPECT_DOUBLE_EQ(r.w_plus + r.w_minus, r.n * (r.n + 1) / 2.0);
    }
  }
}

TEST(Wilcoxon, AllPositiveSixPairs) {
  const Pairs p(6, {1.0, 0.5});
  const WilcoxonResult r = wilcoxon_signed_rank(p);
  EXPECT_EQ(r.n, 6u);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.w_plus, 21.0);
  EXPECT_DOUBLE_EQ(r.p_value, 0.03125);
}

TEST(Wilcoxon, ZerosAreDroppedAndAllZeroIsDegenerate) {
  Pairs p(6, {1.0, 0.5});
  p.emplace_back(0.3, 0.3);
  p.emplace_back(0.9, 0.9);
  EXPECT_EQ(wilcoxon_signed_rank(p).n, 6u);
  EXPECT_DOUBLE_EQ(wilcoxon_signed_rank(p).p_value, 0.03125);
  const Pairs same = {{0.1, 0.1}, {0.4, 0.4}, {0.2, 0.2}};
  EXPECT_THROW(wilcoxon_signed_rank(same), DegenerateInputError);
  EXPECT_THROW(wilcoxon_signed_rank(Pairs{}), DegenerateInputError);
  EXPECT_THROW(wilcoxon_signed_rank(Pairs{{NAN, 0.0}}), InputError);
}

TEST(Wilcoxon, SymmetricUnderSwap) {
  SeededRng rng(5);
  const Pairs p = random_pairs(rng, 15, false);
  Pairs q;
  for (const auto& [a, b] : p) q.emplace_back(b, a);
  const auto r = wilcoxon_signed_rank(p), s = wilcoxon_signed_rank(q);
  EXPECT_EQ(r.p_value, s.p_value);
  EXPECT_EQ(r.w_plus, s.w_minus);
}

TEST(Wilcoxon, ExactAndNormalAgreeAtTwenty) {
  SeededRng rng(123);
  for (int rep = 0; rep < 200; ++rep) {
    const Pairs p = random_pairs(rng, 20, rep % 3 == 0);
    bool all_zero = true;
    for (const auto& [a, b] : p) all_zero = all_zero && a == b;
    if (all_zero) continue;
    const auto exact = wilcoxon_signed_rank(p);
    const auto approx = wilcoxon_signed_rank_normal(p);
    EXPECT_DOUBLE_EQ(exact.statistic, approx.statistic);
    if (exact.n == 20) {
      EXPECT_NEAR(exact.p_value, approx.p_value, 0.02) << "rep " << rep;
    }
  }
}

TEST(Wilcoxon, LargeSamplesUseTheApproximation) {
  SeededRng rng(9);
  const Pairs p = random_pairs(rng, 60, false);
  const auto r = wilcoxon_signed_rank(p);
  EXPECT_FALSE(r.exact);
  EXPECT_EQ(r.p_value, wilcoxon_signed_rank_normal(p).p_value);
  Pairs shifted;
  for (const auto& [a, b] : p) shifted.emplace_back(a + 1.0, b);
  EXPECT_LT(wilcoxon_signed_rank(shifted).p_value, 1e-9);
}

TEST(ImageEmbedder, DeterministicNormalizedBlocks) {
  SeededRng rng(3);
  for (const auto kind : {ImageEmbedder::Kind::kSubject, ImageEmbedder::Kind::kGlobal}) {
    const ImageEmbedder e(kind);
    for (int i = 0; i < 10; ++i) {
      sprites::Scene s{{rng.below(3), rng.below(4), rng.below(2)}, rng.below(6), sprites::random_layout(rng, 32)};
      const ToyImage img = sprites::render(s, 32).image;
      const Embedding a = e.embed(img, sprites::shapes()[s.subject.shape].name);
      const Embedding b = e.embed(img, sprites::shapes()[s.subject.shape].name);
      ASSERT_EQ(a.size(), e.dimension());
      EXPECT_EQ(a, b);
      double norm2 = 0;
      for (double v : a) norm2 += v * v;
      const double blocks = kind == ImageEmbedder::Kind::kSubject ? 3.0 : 2.0;
      EXPECT_NEAR(norm2, blocks, 1e-9);
    }
  }
  EXPECT_THROW(ImageEmbedder().embed(ToyImage()), InputError);
}

TEST(SubjectAlignment, IdenticalSetsScoreOne) {
  SeededRng rng(4);
  std::vector<ToyImage> set;
  sprites::Scene s{{1, 2, 0}, 3, {16, 16, 8}};
  for (int i = 0; i < 3; ++i) set.push_back(sprites::render(s, 32).image);
  EXPECT_NEAR(subject_alignment(set, set, ImageEmbedder()), 1.0, 1e-12);
  EXPECT_THROW(subject_alignment({}, set, ImageEmbedder()), InputError);
  EXPECT_THROW(subject_alignment(set, {}, ImageEmbedder()), InputError);
}

TEST(SubjectAlignment, SinglePairIsPlainCosine) {
  const ToyImage a = sprites::render({{0, 0, 0}, 1, {16, 16, 8}}, 32).image;
  const ToyImage b = sprites::render({{2, 1, 1}, 4, {15, 17, 7}}, 32).image;
  for (const auto kind : {ImageEmbedder::Kind::kSubject, ImageEmbedder::Kind::kGlobal}) {
    const ImageEmbedder e(kind);
    EXPECT_DOUBLE_EQ(subject_alignment({a}, {b}, e), cosine_similarity(e.embed(a), e.embed(b)));
  }
}

TEST(SubjectAlignment, PermutingIdenticalImagesChangesNothing) {
  const ToyImage a = sprites::render({{0, 0, 0}, 1, {16, 16, 8}}, 32).image;
  const ToyImage b = sprites::render({{1, 3, 1}, 2, {14, 17, 8}}, 32).image;
  const ImageEmbedder e;
  EXPECT_EQ(subject_alignment({a, b}, {b}, e), subject_alignment({b, a}, {b}, e));
}

TEST(SubjectAlignment, FixtureOrderings) {
  const json fx = load_json(kFixtures / "metrics" / "orderings.json");
  for (const auto& [family, kind] : {std::pair{"subject", ImageEmbedder::Kind::kSubject},
                                     std::pair{"global", ImageEmbedder::Kind::kGlobal}}) {
    const ImageEmbedder e(kind);
    for (const auto& c : fx.at(family)) {
      const std::string name = c.at("anchor").at("shape");
      const ToyImage anchor = render_json(c.at("anchor"));
      const double closer = subject_alignment({render_json(c.at("closer"))}, {anchor}, e, name);
      const double farther = subject_alignment({render_json(c.at("farther"))}, {anchor}, e, name);
      EXPECT_GT(closer, farther) << c.at("note");
      EXPECT_LE(closer, 1.0 + 1e-12);
      EXPECT_GE(farther, -1.0 - 1e-12);
    }
  }
}

TEST(SubjectAlignment, SameSubjectBeatsDifferentSubjectOnAverage) {
  // Random scenes: same class in another context versus another class in the
  // same context.
  SeededRng rng(77);
  const ImageEmbedder e;
  int wins = 0;
  const int trials = 200;
  for (int i = 0; i < trials; ++i) {
    sprites::SubjectClass a{rng.below(3), rng.below(4), rng.below(2)}, b = a;
    while (b == a) b = {rng.below(3), rng.below(4), rng.below(2)};
    const std::size_t c1 = rng.below(6);
    std::size_t c2 = rng.below(6);
    while (c2 == c1) c2 = rng.below(6);
    const ToyImage ref = sprites::render({a, c1, sprites::random_layout(rng, 32)}, 32).image;
    const ToyImage same = sprites::render({a, c2, sprites::random_layout(rng, 32)}, 32).image;
    const ToyImage other = sprites::render({b, c1, sprites::random_layout(rng, 32)}, 32).image;
    wins += subject_alignment({same}, {ref}, e) > subject_alignment({other}, {ref}, e);
  }
  EXPECT_GE(wins, trials * 9 / 10);
}

TEST(TextEmbedder, IndicatorOverAttributes) {
  const TextEmbedder t;
  EXPECT_EQ(t.dimension(), 15u);
  const Embedding e = t.embed("a photo of a striped red circle on an olive background");
  const auto names = TextEmbedder::attribute_names();
  double sum = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const bool on = names[i] == "striped" || names[i] == "red" || names[i] == "circle" || names[i] == "olive";
    EXPECT_EQ(e[i], on ? 1.0 : 0.0) << names[i];
    sum += e[i];
  }
  EXPECT_EQ(sum, 4.0);
  EXPECT_EQ(t.embed("a photo of a striped red circle"), t.embed(default_tokenizer().encode("a photo of a striped red circle")));
}

TEST(TextAlignmentMap, ShippedMapMatchesARefit) {
  const TextAlignmentMap& shipped = shipped_map();
  const TextAlignmentMap refit = fit_default_text_map();
  const auto a = shipped.to_json().at("weights").get<std::vector<double>>();
  const auto b = refit.to_json().at("weights").get<std::vector<double>>();
  ASSERT_EQ(a.size(), b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  EXPECT_LE(worst, 1e-9) << "regenerate data/text_map.json with `diptych fit-text-map`";
}

TEST(TextAlignmentMap, SchemaAndErrors) {
  EXPECT_THROW(TextAlignmentMap().map(ToyImage(32, 32)), ConfigError);
  EXPECT_THROW(text_alignment({ToyImage(32, 32)}, "a circle", TextAlignmentMap()), ConfigError);
  EXPECT_THROW(text_alignment({}, "a circle", shipped_map()), InputError);
  json j = shipped_map().to_json();
  j["schema_version"] = 2;
  EXPECT_THROW(TextAlignmentMap::from_json(j), ConfigError);
  j = shipped_map().to_json();
  j["weights"].erase(0);
  EXPECT_THROW(TextAlignmentMap::from_json(j), ConfigError);
  j = shipped_map().to_json();
  const TextAlignmentMap back = TextAlignmentMap::from_json(json::parse(j.dump()));
  const ToyImage img = sprites::render({{1, 1, 0}, 0, {16, 16, 8}}, 32).image;
  EXPECT_EQ(back.map(img), shipped_map().map(img));
}

TEST(TextAlignment, FixtureOrderings) {
  const json fx = load_json(kFixtures / "metrics" / "orderings.json");
  for (const auto& c : fx.at("text")) {
    const ToyImage img = render_json(c.at("scene"));
    const std::string name = c.at("scene").at("shape");
    const double match = text_alignment({img}, c.at("matching").get<std::string>(), shipped_map(), {}, name);
    const double miss = text_alignment({img}, c.at("mismatched").get<std::string>(), shipped_map(), {}, name);
    EXPECT_GT(match, miss) << c.at("matching");
    EXPECT_EQ(text_alignment({img, img}, c.at("matching").get<std::string>(), shipped_map(), {}, name), match);
  }
}

TEST(TextAlignment, HeldOutScenesPreferTheirOwnCaption) {
  // Fresh scenes the map never saw, scored against their caption and a caption
  // sharing no attribute.
  const auto items = build_dataset([] {
    DatasetSpec s;
    s.count = 200;
    s.single_weight = 1.0;
    s.subject_weight = s.generation_weight = s.style_weight = 0.0;
    return s;
  }(), 999);
  int wins = 0;
  for (const auto& it : items) {
    sprites::Scene other = it.left;
    other.subject.shape = (other.subject.shape + 1) % 3;
    other.subject.color = (other.subject.color + 1) % 4;
    other.subject.texture = 1 - other.subject.texture;
    other.context = other.context ? std::optional<std::size_t>((*other.context + 1) % 6) : std::optional<std::size_t>(0);
    const double own = text_alignment({it.image}, it.caption, shipped_map());
    const double alt = text_alignment({it.image}, sprites::describe(other), shipped_map());
    wins += own > alt;
  }
  EXPECT_GE(wins, 190);
}

TEST(SplitEval, IdenticalHalvesScoreOne) {
  const ToyImage panel = sprites::render({{0, 2, 1}, 2, {16, 16, 8}}, 32).image;
  const ToyImage d = DiptychCanvas{panel, panel}.compose();
  const std::string desc = sprites::describe({{0, 2, 1}, 2, {16, 16, 8}});
  const SplitEvaluation e = diptych_split_eval(d, desc, desc, shipped_map(), "circle");
  EXPECT_NEAR(e.cross_subject, 1.0, 1e-12);
  EXPECT_NEAR(e.cross_global, 1.0, 1e-12);
  EXPECT_EQ(e.left_text, e.right_text);
  EXPECT_THROW(diptych_split_eval(ToyImage(32, 63), desc, desc, shipped_map()), ShapeError);
}

TEST(SplitEval, DifferentSpritesScoreLower) {
  const sprites::Scene a{{0, 2, 1}, 2, {16, 16, 8}}, b{{1, 0, 0}, 2, {16, 16, 8}};
  const ToyImage pa = sprites::render(a, 32).image, pb = sprites::render(b, 32).image;
  const auto same = diptych_split_eval(DiptychCanvas{pa, pa}.compose(), sprites::describe(a), sprites::describe(a),
                                       shipped_map());
  const auto diff = diptych_split_eval(DiptychCanvas{pa, pb}.compose(), sprites::describe(a), sprites::describe(b),
                                       shipped_map());
  EXPECT_LT(diff.cross_subject, same.cross_subject);
  EXPECT_LT(diff.cross_global, same.cross_global);
  EXPECT_GT(diff.right_text,
            text_alignment({pb}, sprites::describe(a), shipped_map()));
}

ScoreReport sample_report() {
  ScoreReport r;
  r.mode = "subject";
  r.code_version = "test";
  r.config = {{"lambda", 1.3}};
  for (int i = 3; i >= 0; --i) {
    ScoreItem it;
    it.key = "s" + std::to_string(i);
    it.subject = "red_circle";
    it.prompt = "p";
    it.sample = static_cast<std::size_t>(i);
    it.scores = {{"dino", 0.1 * i}, {"clip_t", 0.3 + 0.01 * i}};
    it.artifacts = {{"image", "img/" + it.key + ".png"}};
    if (i == 2) {
      it.ok = false;
      it.error = "segmenter: nothing found";
      it.scores.clear();
    }
    r.items.push_back(it);
  }
  r.finalize();
  return r;
}

TEST(ScoreReport, AggregatesAreMeansOfOkItems) {
  const ScoreReport r = sample_report();
  EXPECT_EQ(r.items.front().key, "s0");
  EXPECT_EQ(r.failures, 1u);
  EXPECT_NEAR(r.aggregates.at("dino"), (0.0 + 0.1 + 0.3) / 3, 1e-15);
  EXPECT_NO_THROW(r.validate());
  const ScoreReport back = ScoreReport::from_json(json::parse(r.to_json().dump()));
  EXPECT_NO_THROW(back.validate());
  EXPECT_EQ(back.to_json(), r.to_json());
}

TEST(ScoreReport, TamperedReportsFailValidation) {
  ScoreReport r = sample_report();
  r.aggregates["dino"] += 1e-9;
  EXPECT_THROW(r.validate(), ConfigError);
  r = sample_report();
  r.failures = 0;
  EXPECT_THROW(r.validate(), ConfigError);
  r = sample_report();
  std::swap(r.items[0], r.items[1]);
  EXPECT_THROW(r.validate(), ConfigError);
  json j = sample_report().to_json();
  j["schema_version"] = 7;
  EXPECT_THROW(ScoreReport::from_json(j), ConfigError);
}

}  // namespace
}  // namespace diptych
