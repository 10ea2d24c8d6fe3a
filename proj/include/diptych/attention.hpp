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

// Joint text/image attention and reference-attention enhancement.
//
// The joint sequence is laid out as [text; left panel; right panel]. The
// reference block of the attention weights is the rectangle where right-panel
// queries meet left-panel keys; enhancement multiplies that block by lambda
// after the softmax.
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "diptych/numerics.hpp"

namespace diptych {

struct AttentionPartition {
  std::size_t text = 0;   // l_t
  std::size_t left = 0;   // l_li
  std::size_t right = 0;  // l_ri

  std::size_t total() const { return text + left + right; }
  // Throws ShapeError unless all counts are >= 1 and total() == sequence_length.
  void validate(std::size_t sequence_length) const;

  friend bool operator==(const AttentionPartition&, const AttentionPartition&) = default;
};

struct EnhancementConfig {
  double lambda = 1.0;
  bool renormalize = false;
  // Per-layer enable flags; empty means every layer is enhanced.
  std::vector<bool> layer_mask;

  bool is_noop() const { return lambda == 1.0; }
  bool applies_to_layer(std::size_t layer) const {
    return layer_mask.empty() || (layer < layer_mask.size() && layer_mask[layer]);
  }
  // Throws ConfigError when lambda < 1 or is not finite.
  void validate() const;
};

// Half-open index rectangle [row_begin, row_end) x [col_begin, col_end).
struct BlockRect {
  std::size_t row_begin = 0;
  std::size_t row_end = 0;
  std::size_t col_begin = 0;
  std::size_t col_end = 0;

  std::size_t area() const { return (row_end - row_begin) * (col_end - col_begin); }
  bool contains(std::size_t r, std::size_t c) const {
    return r >= row_begin && r < row_end && c >= col_begin && c < col_end;
  }
  friend bool operator==(const BlockRect&, const BlockRect&) = default;
};

struct AttentionResult {
  Matrix output;   // weights * v
  Matrix weights;  // softmax(q k^T / sqrt(d))
};

// softmax(q k^T / sqrt(d)) v. Requires q.cols() == k.cols() == d and
// k.rows() == v.rows().
AttentionResult joint_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t d);

// The W(Q_ri, K_li) rectangle of a square weight matrix with side p.total().
BlockRect slice_reference_block(const Matrix& w, const AttentionPartition& p);

// Multiplies the reference block of a row-stochastic w by cfg.lambda; with
// cfg.renormalize the affected rows are rescaled back to unit sum. lambda == 1
// returns w unchanged, bit for bit.
Matrix enhance_reference_attention(const Matrix& w, const AttentionPartition& p,
                                   const EnhancementConfig& cfg);

struct JointSequence {
  Matrix tokens;  // sequence length x model dim
  AttentionPartition partition;
  std::size_t head_dim = 0;
};

struct AttentionProjections {
  Matrix wq, wk, wv;  // model dim x model dim
  Matrix wo;          // model dim x model dim
  Matrix bo;          // 1 x model dim
};

// Intermediates retained for backpropagation through the attention layer.
struct AttentionTrace {
  Matrix q, k, v;             // projected, all heads side by side
  std::vector<Matrix> probs;  // per head, softmax output before enhancement
  std::vector<Matrix> used;   // per head, weights multiplied into v
  Matrix heads;               // concatenated per-head outputs, before wo
};

// Multi-head attention over seq.tokens where every head's weights pass through
// enhance_reference_attention before the value product. The head count is
// model dim / seq.head_dim. With cfg.lambda == 1 the result equals plain
// joint attention exactly. `apply_enhancement` lets callers switch layers off.
Matrix attend_enhanced(const JointSequence& seq, const AttentionProjections& proj,
                       const EnhancementConfig& cfg, bool apply_enhancement = true,
                       AttentionTrace* trace = nullptr);

// Same computation without a partition (no enhancement possible).
Matrix attend(const Matrix& tokens, std::size_t head_dim, const AttentionProjections& proj,
              AttentionTrace* trace = nullptr);

}  // namespace diptych
