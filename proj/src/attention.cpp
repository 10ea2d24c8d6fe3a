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

#include "diptych/attention.hpp"

#include <cmath>
#include <string>

#include "diptych/error.hpp"

namespace diptych {

void AttentionPartition::validate(std::size_t sequence_length) const {
  if (text < 1 || left < 1 || right < 1) {
    throw ShapeError("attention partition counts must all be >= 1");
  }
  if (total() != sequence_length) {
    throw ShapeError("attention partition covers " + std::to_string(total()) +
                     " tokens but the sequence has " + std::to_string(sequence_length));
  }
}

void EnhancementConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 1.0) {
    throw ConfigError("enhancement lambda must be finite and >= 1, got " + std::to_string(lambda));
  }
}

AttentionResult joint_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t d) {
  if (d == 0 || q.cols() != d || k.cols() != d) throw ShapeError("joint_attention: q/k width must equal d");
  if (k.rows() != v.rows()) throw ShapeError("joint_attention: k and v row counts differ");
  AttentionResult r;
  r.weights = softmax_rows(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
  r.output = matmul(r.weights, v);
  return r;
}

BlockRect slice_reference_block(const Matrix& w, const AttentionPartition& p) {
  if (w.rows() != w.cols()) throw ShapeError("slice_reference_block: weights must be square");
  p.validate(w.rows());
  return BlockRect{p.text + p.left, p.total(), p.text, p.text + p.left};
}

Matrix enhance_reference_attention(const Matrix& w, const AttentionPartition& p,
                                   const EnhancementConfig& cfg) {
  cfg.validate();
  const BlockRect block = slice_reference_block(w, p);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double sum = 0.0;
    for (double x : w.row(r)) {
      if (!(x >= 0.0)) throw PreconditionError("enhance_reference_attention: negative or NaN weight");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-8) {
      throw PreconditionError("enhance_reference_attention: row " + std::to_string(r) +
                              " is not stochastic (sum " + std::to_string(sum) + ")");
    }
  }
  Matrix out = w;
  if (cfg.is_noop()) return out;
  for (std::size_t r = block.row_begin; r < block.row_end; ++r) {
    auto row = out.row(r);
    for (std::size_t c = block.col_begin; c < block.col_end; ++c) row[c] *= cfg.lambda;
    if (cfg.renormalize) {
      double sum = 0.0;
      for (double x : row) sum += x;
      for (double& x : row) x /= sum;
    }
  }
  return out;
}

namespace {

Matrix column_slice(const Matrix& m, std::size_t begin, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r).subspan(begin, width);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

void write_columns(Matrix& dst, const Matrix& src, std::size_t begin) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::copy(src.row(r).begin(), src.row(r).end(), dst.row(r).begin() + begin);
  }
}

Matrix attend_impl(const Matrix& tokens, std::size_t head_dim, const AttentionProjections& proj,
                   const AttentionPartition* partition, const EnhancementConfig* cfg,
                   AttentionTrace* trace) {
  const std::size_t dim = tokens.cols();
  if (head_dim == 0 || dim % head_dim != 0) throw ShapeError("attention: head_dim must divide model dim");
  for (const Matrix* w : {&proj.wq, &proj.wk, &proj.wv, &proj.wo}) {
    if (w->rows() != dim || w->cols() != dim) throw ShapeError("attention: projection must be dim x dim");
  }
  if (proj.bo.rows() != 1 || proj.bo.cols() != dim) throw ShapeError("attention: bias must be 1 x dim");

  Matrix q = matmul(tokens, proj.wq);
  Matrix k = matmul(tokens, proj.wk);
  Matrix v = matmul(tokens, proj.wv);
  const std::size_t heads = dim / head_dim;
  Matrix combined(tokens.rows(), dim);
  if (trace != nullptr) {
    trace->probs.clear();
    trace->used.clear();
  }
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix qh = column_slice(q, h * head_dim, head_dim);
    const Matrix kh = column_slice(k, h * head_dim, head_dim);
    const Matrix vh = column_slice(v, h * head_dim, head_dim);
    AttentionResult plain = joint_attention(qh, kh, vh, head_dim);
    Matrix out_h;
    if (partition != nullptr && cfg != nullptr && !cfg->is_noop()) {
      Matrix used = enhance_reference_attention(plain.weights, *partition, *cfg);
      out_h = matmul(used, vh);
      if (trace != nullptr) {
        trace->probs.push_back(std::move(plain.weights));
        trace->used.push_back(std::move(used));
      }
    } else {
      out_h = std::move(plain.output);
      if (trace != nullptr) {
        trace->used.push_back(plain.weights);
        trace->probs.push_back(std::move(plain.weights));
      }
    }
    write_columns(combined, out_h, h * head_dim);
  }
  Matrix out = matmul(combined, proj.wo);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < dim; ++c) row[c] += proj.bo(0, c);
  }
  if (trace != nullptr) {
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->heads = std::move(combined);
  }
  return out;
}

}  // namespace

Matrix attend_enhanced(const JointSequence& seq, const AttentionProjections& proj,
                       const EnhancementConfig& cfg, bool apply_enhancement, AttentionTrace* trace) {
  cfg.validate();
  seq.partition.validate(seq.tokens.rows());
  return attend_impl(seq.tokens, seq.head_dim, proj, &seq.partition,
                     apply_enhancement ? &cfg : nullptr, trace);
}

Matrix attend(const Matrix& tokens, std::size_t head_dim, const AttentionProjections& proj,
              AttentionTrace* trace) {
  return attend_impl(tokens, head_dim, proj, nullptr, nullptr, trace);
}

}  // namespace diptych
