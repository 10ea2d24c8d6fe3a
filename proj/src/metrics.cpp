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

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>

#include "diptych/canvas.hpp"
#include "diptych/dataset.hpp"
#include "diptych/error.hpp"
#include "diptych/sprites.hpp"

namespace diptych {

using nlohmann::json;

namespace {

void l2_normalize(std::span<double> block) {
  double s = 0.0;
  for (double v : block) s += v * v;
  if (s <= 0.0) return;
  const double inv = 1.0 / std::sqrt(s);
  for (double& v : block) v *= inv;
}

void append_histogram(const ToyImage& image, const BinaryMask* mask, Embedding& out) {
  std::array<double, 3 * ImageEmbedder::kBins> h{};
  double n = 0.0;
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      if (mask != nullptr && !mask->at(y, x)) continue;
      n += 1.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const auto bin = std::min<std::size_t>(ImageEmbedder::kBins - 1,
                                               static_cast<std::size_t>(image.at(y, x, c) * ImageEmbedder::kBins));
        h[c * ImageEmbedder::kBins + bin] += 1.0;
      }
    }
  }
  if (n > 0.0) {
    for (double& v : h) v /= n;
  }
  const std::size_t start = out.size();
  out.insert(out.end(), h.begin(), h.end());
  l2_normalize(std::span<double>(out).subspan(start));
}

// Mean color per cell of a 4x4 grid laid over the mask's bounding box (the
// whole image when mask is null). Cells without masked pixels contribute 0.
void append_grid(const ToyImage& image, const BinaryMask* mask, Embedding& out) {
  const std::size_t g = ImageEmbedder::kGrid;
  std::size_t top = 0, left = 0, bottom = image.height(), right = image.width();
  if (mask != nullptr) {
    top = image.height(), left = image.width(), bottom = 0, right = 0;
    for (std::size_t y = 0; y < image.height(); ++y) {
      for (std::size_t x = 0; x < image.width(); ++x) {
        if (!mask->at(y, x)) continue;
        top = std::min(top, y), left = std::min(left, x);
        bottom = std::max(bottom, y + 1), right = std::max(right, x + 1);
      }
    }
    if (bottom <= top) top = left = 0, bottom = image.height(), right = image.width();
  }
  const double bh = static_cast<double>(bottom - top), bw = static_cast<double>(right - left);
  std::array<double, 3 * ImageEmbedder::kGrid * ImageEmbedder::kGrid> sum{};
  std::array<double, ImageEmbedder::kGrid * ImageEmbedder::kGrid> count{};
  for (std::size_t y = top; y < bottom; ++y) {
    const auto gy = std::min(g - 1, static_cast<std::size_t>(static_cast<double>(y - top) * g / bh));
    for (std::size_t x = left; x < right; ++x) {
      if (mask != nullptr && !mask->at(y, x)) continue;
      const auto gx = std::min(g - 1, static_cast<std::size_t>(static_cast<double>(x - left) * g / bw));
      const std::size_t cell = gy * g + gx;
      count[cell] += 1.0;
      for (std::size_t c = 0; c < 3; ++c) sum[cell * 3 + c] += image.at(y, x, c);
    }
  }
  const std::size_t start = out.size();
  for (std::size_t cell = 0; cell < g * g; ++cell) {
    for (std::size_t c = 0; c < 3; ++c) {
      out.push_back(count[cell] > 0.0 ? sum[cell * 3 + c] / count[cell] - 0.5 : 0.0);
    }
  }
  l2_normalize(std::span<double>(out).subspan(start));
}

constexpr std::array<std::pair<int, int>, ImageEmbedder::kMoments> kMomentOrders = {
    {{2, 0}, {1, 1}, {0, 2}, {3, 0}, {2, 1}, {1, 2}, {0, 3}, {4, 0}, {3, 1}, {2, 2}, {1, 3}, {0, 4}}};

std::array<double, ImageEmbedder::kMoments> raw_moments(const BinaryMask& mask) {
  double m00 = 0.0, sy = 0.0, sx = 0.0;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      m00 += 1.0;
      sy += static_cast<double>(y) + 0.5;
      sx += static_cast<double>(x) + 0.5;
    }
  }
  std::array<double, ImageEmbedder::kMoments> eta{};
  if (m00 == 0.0) return eta;
  const double cy = sy / m00, cx = sx / m00;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      for (std::size_t i = 0; i < kMomentOrders.size(); ++i) {
        eta[i] += std::pow(dx, kMomentOrders[i].first) * std::pow(dy, kMomentOrders[i].second);
      }
    }
  }
  for (std::size_t i = 0; i < kMomentOrders.size(); ++i) {
    const int order = kMomentOrders[i].first + kMomentOrders[i].second;
    eta[i] /= std::pow(m00, 1.0 + order / 2.0);
  }
  return eta;
}

// Per-moment center and spread over the three canonical shapes, so that the
// standardised block separates shapes instead of being dominated by the
// always-positive second-order terms.
struct MomentStandard {
  std::array<double, ImageEmbedder::kMoments> center{}, scale{};
};

const MomentStandard& moment_standard() {
  static const MomentStandard s = [] {
    MomentStandard st;
    const std::size_t n = sprites::shapes().size();
    std::vector<std::array<double, ImageEmbedder::kMoments>> m;
    for (std::size_t shape = 0; shape < n; ++shape) {
      sprites::Scene sc{{shape, 0, 0}, std::nullopt, {16.0, 16.0, 8.0}};
      m.push_back(raw_moments(sprites::render(sc, 32).mask));
    }
    std::map<int, double> order_mag;
    for (std::size_t i = 0; i < kMomentOrders.size(); ++i) {
      double mean = 0.0;
      for (const auto& v : m) mean += v[i];
      mean /= static_cast<double>(n);
      double var = 0.0, mag = 0.0;
      for (const auto& v : m) {
        var += (v[i] - mean) * (v[i] - mean);
        mag += std::abs(v[i]);
      }
      st.center[i] = mean;
      st.scale[i] = std::sqrt(var / static_cast<double>(n));
      order_mag[kMomentOrders[i].first + kMomentOrders[i].second] += mag / static_cast<double>(n);
    }
    for (std::size_t i = 0; i < kMomentOrders.size(); ++i) {
      const int order = kMomentOrders[i].first + kMomentOrders[i].second;
      const double floor = 0.25 * order_mag[order] / (order + 1);
      st.scale[i] = std::max(st.scale[i], floor);
    }
    return st;
  }();
  return s;
}

BinaryMask subject_mask(const ToyImage& image, std::string_view subject_name) {
  try {
    return segment_subject(image, subject_name).mask;
  } catch (const EmptyDetectionError&) {
    return BinaryMask(image.height(), image.width(), 1);
  }
}

}  // namespace

std::size_t ImageEmbedder::dimension() const {
  return kind_ == Kind::kSubject ? 3 * kBins + kMoments + 3 * kGrid * kGrid : 3 * kBins + 3 * kGrid * kGrid;
}

Embedding ImageEmbedder::embed(const ToyImage& image, std::string_view subject_name) const {
  if (image.empty()) throw InputError("cannot embed an empty image");
  Embedding out;
  out.reserve(dimension());
  if (kind_ == Kind::kSubject) {
    const BinaryMask mask = subject_mask(image, subject_name);
    append_histogram(image, &mask, out);
    const auto eta = raw_moments(mask);
    const MomentStandard& st = moment_standard();
    const std::size_t start = out.size();
    for (std::size_t i = 0; i < kMoments; ++i) out.push_back((eta[i] - st.center[i]) / st.scale[i]);
    l2_normalize(std::span<double>(out).subspan(start));
    append_grid(image, &mask, out);
  } else {
    append_histogram(image, nullptr, out);
    append_grid(image, nullptr, out);
  }
  return out;
}

std::vector<std::string> TextEmbedder::attribute_names() {
  std::vector<std::string> names;
  for (const auto table : {sprites::shapes(), sprites::colors(), sprites::textures(), sprites::contexts()}) {
    for (const auto& a : table) names.push_back(a.name);
  }
  return names;
}

std::size_t TextEmbedder::dimension() const { return attribute_names().size(); }

Embedding TextEmbedder::embed(std::string_view text) const {
  static const std::vector<std::string> names = attribute_names();
  Embedding e(names.size(), 0.0);
  for (const std::string& w : Tokenizer::split_words(text)) {
    const auto it = std::find(names.begin(), names.end(), w);
    if (it != names.end()) e[static_cast<std::size_t>(it - names.begin())] = 1.0;
  }
  return e;
}

Embedding TextEmbedder::embed(const Caption& caption, const Tokenizer& tokenizer) const {
  std::string text;
  for (const std::string& w : tokenizer.decode(caption)) text += w + " ";
  return embed(text);
}

namespace {

Embedding map_features(const ToyImage& image, std::string_view subject_name) {
  Embedding f = ImageEmbedder(ImageEmbedder::Kind::kSubject).embed(image, subject_name);
  const Embedding g = ImageEmbedder(ImageEmbedder::Kind::kGlobal).embed(image, subject_name);
  f.insert(f.end(), g.begin(), g.end());
  f.push_back(1.0);
  return f;
}

}  // namespace

Embedding TextAlignmentMap::map(const ToyImage& image, std::string_view subject_name) const {
  if (!fitted()) throw ConfigError("text alignment map is not fitted");
  const Embedding f = map_features(image, subject_name);
  if (f.size() != input_dim_) throw ConfigError("text alignment map input dimension mismatch");
  Embedding out(output_dim_, 0.0);
  for (std::size_t i = 0; i < input_dim_; ++i) {
    for (std::size_t j = 0; j < output_dim_; ++j) out[j] += f[i] * weights_[i * output_dim_ + j];
  }
  return out;
}

TextAlignmentMap TextAlignmentMap::fit(const std::vector<ToyImage>& images, const std::vector<std::string>& captions,
                                       double ridge) {
  if (images.empty() || images.size() != captions.size()) {
    throw InputError("text map fit needs equally many images and captions");
  }
  const TextEmbedder text;
  const std::size_t n = images.size();
  std::vector<Embedding> feats;
  for (const ToyImage& im : images) feats.push_back(map_features(im, ""));
  const std::size_t d = feats[0].size(), k = text.dimension();
  Eigen::MatrixXd x(n, d), y(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = feats[i][j];
    const Embedding t = text.embed(captions[i]);
    for (std::size_t j = 0; j < k; ++j) y(i, j) = t[j];
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += ridge * static_cast<double>(n);
  const Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);
  TextAlignmentMap m;
  m.input_dim_ = d;
  m.output_dim_ = k;
  m.weights_.resize(d * k);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < k; ++j) m.weights_[i * k + j] = w(i, j);
  }
  m.fit_note_ = "ridge " + std::to_string(ridge) + " on " + std::to_string(n) + " images";
  return m;
}

json TextAlignmentMap::to_json() const {
  return {{"schema", "diptych.text_map"}, {"schema_version", kSchemaVersion}, {"input_dim", input_dim_},
          {"output_dim", output_dim_},   {"attributes", TextEmbedder::attribute_names()},
          {"fit", fit_note_},            {"weights", weights_}};
}

TextAlignmentMap TextAlignmentMap::from_json(const json& j) {
  try {
    if (j.at("schema") != "diptych.text_map" || j.at("schema_version") != kSchemaVersion) {
      throw ConfigError("unsupported text map schema");
    }
    TextAlignmentMap m;
    m.input_dim_ = j.at("input_dim");
    m.output_dim_ = j.at("output_dim");
    m.fit_note_ = j.value("fit", "");
    m.weights_ = j.at("weights").get<std::vector<double>>();
    if (j.at("attributes").get<std::vector<std::string>>() != TextEmbedder::attribute_names()) {
      throw ConfigError("text map attributes do not match the caption grammar");
    }
    if (m.weights_.size() != m.input_dim_ * m.output_dim_ ||
        m.input_dim_ != ImageEmbedder(ImageEmbedder::Kind::kSubject).dimension() +
                            ImageEmbedder(ImageEmbedder::Kind::kGlobal).dimension() + 1) {
      throw ConfigError("text map dimensions are inconsistent");
    }
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed text map: ") + e.what());
  }
}

TextAlignmentMap TextAlignmentMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open text map " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("text map is not JSON: ") + e.what());
  }
}

void TextAlignmentMap::save(const std::filesystem::path& path) const { write_text(path, to_json().dump() + "\n"); }

TextAlignmentMap fit_default_text_map(std::uint64_t seed, std::size_t count) {
  DatasetSpec spec;
  spec.count = count;
  spec.single_weight = 1.0;
  spec.subject_weight = spec.generation_weight = spec.style_weight = 0.0;
  const auto items = build_dataset(spec, seed);
  std::vector<ToyImage> images;
  std::vector<std::string> captions;
  for (const auto& it : items) {
    images.push_back(it.image);
    captions.push_back(it.caption);
  }
  return TextAlignmentMap::fit(images, captions);
}

double subject_alignment(const std::vector<ToyImage>& generated, const std::vector<ToyImage>& references,
                         const ImageEmbedder& embedder, std::string_view subject_name) {
  if (generated.empty() || references.empty()) throw InputError("subject alignment needs nonempty image sets");
  std::vector<Embedding> ref;
  for (const ToyImage& r : references) ref.push_back(embedder.embed(r, subject_name));
  double total = 0.0;
  for (const ToyImage& g : generated) {
    const Embedding e = embedder.embed(g, subject_name);
    for (const Embedding& r : ref) total += cosine_similarity(e, r);
  }
  return total / static_cast<double>(generated.size() * references.size());
}

double text_alignment(const std::vector<ToyImage>& generated, std::string_view target_text,
                      const TextAlignmentMap& map, const TextEmbedder& text, std::string_view subject_name) {
  if (generated.empty()) throw InputError("text alignment needs a nonempty image set");
  if (!map.fitted()) throw ConfigError("text alignment map is not fitted");
  const Embedding t = text.embed(target_text);
  double total = 0.0;
  for (const ToyImage& g : generated) total += cosine_similarity(map.map(g, subject_name), t);
  return total / static_cast<double>(generated.size());
}

SplitEvaluation diptych_split_eval(const ToyImage& diptych, std::string_view left_desc, std::string_view right_desc,
                                   const TextAlignmentMap& map, std::string_view subject_name) {
  const DiptychCanvas halves = DiptychCanvas::split(diptych);
  SplitEvaluation e;
  e.cross_subject =
      subject_alignment({halves.right}, {halves.left}, ImageEmbedder(ImageEmbedder::Kind::kSubject), subject_name);
  e.cross_global =
      subject_alignment({halves.right}, {halves.left}, ImageEmbedder(ImageEmbedder::Kind::kGlobal), subject_name);
  e.left_text = text_alignment({halves.left}, left_desc, map, {}, subject_name);
  e.right_text = text_alignment({halves.right}, right_desc, map, {}, subject_name);
  return e;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test

namespace {

struct SignedRanks {
  std::vector<long> doubled;  // 2 x average rank, per non-zero difference
  std::vector<bool> positive;
  std::vector<std::size_t> tie_sizes;
};

SignedRanks rank_differences(std::span<const std::pair<double, double>> pairs) {
  std::vector<double> d;
  for (const auto& [a, b] : pairs) {
    if (!std::isfinite(a) || !std::isfinite(b)) throw InputError("wilcoxon: non-finite score");
    if (a != b) d.push_back(a - b);
  }
  if (d.empty()) throw DegenerateInputError("wilcoxon: every difference is zero");
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  SignedRanks r;
  r.doubled.assign(d.size(), 0);
  r.positive.assign(d.size(), false);
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    // Ranks i+1 .. j+1 share their average; doubled it is (i + j + 2).
    for (std::size_t k = i; k <= j; ++k) r.doubled[order[k]] = static_cast<long>(i + j + 2);
    r.tie_sizes.push_back(j - i + 1);
    i = j + 1;
  }
  for (std::size_t i = 0; i < d.size(); ++i) r.positive[i] = d[i] > 0.0;
  return r;
}

void fill_statistic(const SignedRanks& r, WilcoxonResult& out) {
  long plus = 0, total = 0;
  for (std::size_t i = 0; i < r.doubled.size(); ++i) {
    total += r.doubled[i];
    if (r.positive[i]) plus += r.doubled[i];
  }
  out.n = r.doubled.size();
  out.w_plus = static_cast<double>(plus) / 2.0;
  out.w_minus = static_cast<double>(total - plus) / 2.0;
  out.statistic = std::min(out.w_plus, out.w_minus);
}

double normal_p(const SignedRanks& r, double statistic) {
  const double n = static_cast<double>(r.doubled.size());
  const double mean = n * (n + 1.0) / 4.0;
  double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
  for (std::size_t t : r.tie_sizes) {
    const double tt = static_cast<double>(t);
    var -= (tt * tt * tt - tt) / 48.0;
  }
  if (var <= 0.0) return 1.0;
  const double z = std::min(0.0, statistic - mean + 0.5) / std::sqrt(var);
  return std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs) {
  const SignedRanks r = rank_differences(pairs);
  WilcoxonResult out;
  fill_statistic(r, out);
  if (out.n > kWilcoxonExactLimit) {
    out.exact = false;
    out.p_value = normal_p(r, out.statistic);
    return out;
  }
  // Null distribution of the doubled W+ by dynamic programming over signs.
  long total = 0;
  for (long v : r.doubled) total += v;
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long reach = 0;
  for (long v : r.doubled) {
    for (long s = reach; s >= 0; --s) {
      if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + v)] += count[static_cast<std::size_t>(s)];
    }
    reach += v;
  }
  const long stat2 = static_cast<long>(std::llround(2.0 * out.statistic));
  double tail = 0.0;
  for (long s = 0; s <= stat2; ++s) tail += count[static_cast<std::size_t>(s)];
  out.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(out.n)));
  out.exact = true;
  return out;
}

WilcoxonResult wilcoxon_signed_rank_normal(std::span<const std::pair<double, double>> pairs) {
  const SignedRanks r = rank_differences(pairs);
  WilcoxonResult out;
  fill_statistic(r, out);
  out.exact = false;
  out.p_value = normal_p(r, out.statistic);
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::map<std::string, double> recompute(const std::vector<ScoreItem>& items, std::size_t* failures) {
  std::map<std::string, double> sum;
  std::map<std::string, std::size_t> count;
  std::size_t failed = 0;
  for (const ScoreItem& it : items) {
    if (!it.ok) {
      ++failed;
      continue;
    }
    for (const auto& [k, v] : it.scores) {
      sum[k] += v;
      ++count[k];
    }
  }
  for (auto& [k, v] : sum) v /= static_cast<double>(count[k]);
  if (failures != nullptr) *failures = failed;
  return sum;
}

}  // namespace

void ScoreReport::finalize() {
  std::sort(items.begin(), items.end(), [](const ScoreItem& a, const ScoreItem& b) { return a.key < b.key; });
  aggregates = recompute(items, &failures);
}

void ScoreReport::validate() const {
  std::size_t failed = 0;
  const auto expect = recompute(items, &failed);
  if (failed != failures) throw ConfigError("report failure count disagrees with its items");
  if (expect.size() != aggregates.size()) throw ConfigError("report aggregates do not match the item scores");
  for (const auto& [k, v] : expect) {
    const auto it = aggregates.find(k);
    if (it == aggregates.end() || !(std::abs(it->second - v) <= 1e-12)) {
      throw ConfigError("report aggregate '" + k + "' disagrees with the mean of its items");
    }
  }
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (!(items[i - 1].key < items[i].key)) throw ConfigError("report items are not sorted by unique key");
  }
}

json ScoreReport::to_json() const {
  json list = json::array();
  for (const ScoreItem& it : items) {
    json e = {{"key", it.key}, {"subject", it.subject}, {"prompt", it.prompt}, {"sample", it.sample},
              {"ok", it.ok},   {"scores", it.scores},   {"artifacts", it.artifacts}};
    if (!it.ok) e["error"] = it.error;
    list.push_back(std::move(e));
  }
  return {{"schema", "diptych.report"}, {"schema_version", kSchemaVersion}, {"mode", mode},
          {"code_version", code_version}, {"config", config}, {"aggregates", aggregates},
          {"failures", failures},         {"items", list}};
}

ScoreReport ScoreReport::from_json(const json& j) {
  try {
    if (j.at("schema") != "diptych.report") throw ConfigError("not a score report");
    if (j.at("schema_version") != kSchemaVersion) throw ConfigError("unsupported report schema version");
    ScoreReport r;
    r.mode = j.at("mode");
    r.code_version = j.at("code_version");
    r.config = j.at("config");
    r.aggregates = j.at("aggregates").get<std::map<std::string, double>>();
    r.failures = j.at("failures");
    for (const auto& e : j.at("items")) {
      ScoreItem it;
      it.key = e.at("key");
      it.subject = e.at("subject");
      it.prompt = e.at("prompt");
      it.sample = e.at("sample");
      it.ok = e.at("ok");
      it.error = e.value("error", "");
      it.scores = e.at("scores").get<std::map<std::string, double>>();
      it.artifacts = e.at("artifacts").get<std::map<std::string, std::string>>();
      r.items.push_back(std::move(it));
    }
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed score report: ") + e.what());
  }
}

}  // namespace diptych
