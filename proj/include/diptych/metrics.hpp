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

// Alignment scores over handcrafted embeddings and the signed-rank test.
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "diptych/caption.hpp"
#include "diptych/image.hpp"
#include "diptych/segmenter.hpp"
#include "json.hpp"

namespace diptych {

using Embedding = std::vector<double>;

// Two descriptor families, each a concatenation of separately L2-normalised
// blocks (so a cosine between embeddings is the mean of block cosines):
//   kSubject  16-bin per-channel histograms of the subject pixels,
//             standardised normalised central moments (orders 2 to 4) of the
//             subject mask, and a 4x4 grid of mean subject colors laid over
//             the subject's bounding box (centered at 0.5).
//   kGlobal   whole-image histograms and a 4x4 grid over the whole image.
// The subject mask comes from the toy segmenter; when it finds nothing the
// whole image is used.
class ImageEmbedder {
 public:
  enum class Kind { kSubject, kGlobal };
  static constexpr std::size_t kBins = 16;
  static constexpr std::size_t kGrid = 4;
  static constexpr std::size_t kMoments = 12;

  explicit ImageEmbedder(Kind kind = Kind::kSubject) : kind_(kind) {}
  Kind kind() const { return kind_; }
  std::size_t dimension() const;
  Embedding embed(const ToyImage& image, std::string_view subject_name = "") const;

 private:
  Kind kind_;
};

// Indicator vector over the caption attributes: shapes, colors, textures and
// contexts, in the sprite attribute table order. Unknown words are ignored.
class TextEmbedder {
 public:
  std::size_t dimension() const;
  Embedding embed(std::string_view text) const;
  Embedding embed(const Caption& caption, const Tokenizer& tokenizer = default_tokenizer()) const;
  static std::vector<std::string> attribute_names();
};

// Frozen least-squares map from concatenated [subject, global, 1] image
// descriptors onto the text attribute space.
class TextAlignmentMap {
 public:
  static constexpr int kSchemaVersion = 1;
  TextAlignmentMap() = default;
  bool fitted() const { return !weights_.empty(); }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  // Mapped attribute-space vector for an image. ConfigError when unfitted.
  Embedding map(const ToyImage& image, std::string_view subject_name = "") const;

  // Ridge fit on (image, caption) pairs.
  static TextAlignmentMap fit(const std::vector<ToyImage>& images, const std::vector<std::string>& captions,
                              double ridge = 1e-3);
  nlohmann::json to_json() const;
  static TextAlignmentMap from_json(const nlohmann::json& j);
  static TextAlignmentMap load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::size_t input_dim_ = 0, output_dim_ = 0;
  std::vector<double> weights_;  // input_dim x output_dim, row-major
  std::string fit_note_;
};

// Fits the map on the canonical single-panel sprite set (seeded, fixed size).
TextAlignmentMap fit_default_text_map(std::uint64_t seed = 20241125, std::size_t count = 1200);

// Mean pairwise cosine between generated and reference embeddings.
double subject_alignment(const std::vector<ToyImage>& generated, const std::vector<ToyImage>& references,
                         const ImageEmbedder& embedder, std::string_view subject_name = "");

// Mean cosine between mapped generated images and the text embedding.
double text_alignment(const std::vector<ToyImage>& generated, std::string_view target_text,
                      const TextAlignmentMap& map, const TextEmbedder& text = {},
                      std::string_view subject_name = "");

struct SplitEvaluation {
  double cross_subject = 0.0;  // subject-descriptor cosine between halves
  double cross_global = 0.0;   // global-descriptor cosine between halves
  double left_text = 0.0;
  double right_text = 0.0;
};

SplitEvaluation diptych_split_eval(const ToyImage& diptych, std::string_view left_desc, std::string_view right_desc,
                                   const TextAlignmentMap& map, std::string_view subject_name = "");

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;    // two-sided
  std::size_t n = 0;       // non-zero differences
  bool exact = true;
};

inline constexpr std::size_t kWilcoxonExactLimit = 20;

// Zero differences are dropped and tied magnitudes get average ranks. Exact
// null distribution for n <= kWilcoxonExactLimit, otherwise the normal
// approximation with tie variance correction and a 0.5 continuity
// correction. DegenerateInputError when every difference is zero.
WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs);
WilcoxonResult wilcoxon_signed_rank_normal(std::span<const std::pair<double, double>> pairs);

// ---------------------------------------------------------------------------
// Score reports

struct ScoreItem {
  std::string key;  // sort key, unique within a report
  std::string subject;
  std::string prompt;
  std::size_t sample = 0;
  bool ok = true;
  std::string error;
  std::map<std::string, double> scores;
  std::map<std::string, std::string> artifacts;  // name -> relative path
};

struct ScoreReport {
  static constexpr int kSchemaVersion = 1;
  std::string mode;
  nlohmann::json config;
  std::string code_version;
  std::vector<ScoreItem> items;
  std::map<std::string, double> aggregates;  // mean of each score over ok items
  std::size_t failures = 0;

  // Sorts items by key and recomputes aggregates and failures.
  void finalize();
  // ConfigError unless aggregates equal the recomputed means (1e-12).
  void validate() const;
  nlohmann::json to_json() const;
  static ScoreReport from_json(const nlohmann::json& j);
};

}  // namespace diptych
