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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "diptych/error.hpp"

namespace diptych {

void DenoiserConfig::validate() const {
  if (panel == 0 || patch == 0 || panel % patch != 0) throw ConfigError("panel size must be a multiple of the patch");
  if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("model dim must be divisible by the head count");
  if (depth == 0 || mlp == 0 || text_length == 0 || time_features == 0 || time_features % 2 != 0) {
    throw ConfigError("depth, mlp width, text length and (even) time features must be positive");
  }
}

std::vector<std::pair<std::string, Matrix*>> DenoiserParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out = {
      {"patch_w", &patch_w}, {"patch_b", &patch_b}, {"pos_img", &pos_img}, {"panel_emb", &panel_emb},
      {"tok_emb", &tok_emb}, {"pos_txt", &pos_txt}, {"time_w1", &time_w1}, {"time_b1", &time_b1},
      {"time_w2", &time_w2}, {"time_b2", &time_b2}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    BlockParams& p = blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    for (auto [name, m] : std::initializer_list<std::pair<const char*, Matrix*>>{
             {"time_w", &p.time_w}, {"wq", &p.wq}, {"wk", &p.wk}, {"wv", &p.wv}, {"wo", &p.wo},
             {"bo", &p.bo}, {"w1", &p.w1}, {"b1", &p.b1}, {"w2", &p.w2}, {"b2", &p.b2}}) {
      out.emplace_back(pre + name, m);
    }
  }
  out.emplace_back("out_w", &out_w);
  out.emplace_back("out_b", &out_b);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> DenoiserParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<DenoiserParams*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

DenoiserParams DenoiserParams::zeros_like() const {
  DenoiserParams z = *this;
  for (auto& [name, m] : z.tensors()) m->fill(0.0);
  return z;
}

namespace {

Matrix gaussian_matrix(SeededRng& rng, std::size_t r, std::size_t c, double stddev) {
  Matrix m(r, c);
  for (double& v : m.values()) v = stddev * rng.normal();
  return m;
}

}  // namespace

DenoiserModel::DenoiserModel(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  if (config_.vocab_size == 0) config_.vocab_size = default_tokenizer().vocab_size();
  config_.validate();
  SeededRng rng(seed);
  const std::size_t d = config_.dim, pv = config_.patch_values();
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double res = sd / std::sqrt(2.0 * static_cast<double>(config_.depth));
  DenoiserParams& p = params_;
  p.patch_w = gaussian_matrix(rng, pv, d, 1.0 / std::sqrt(static_cast<double>(pv)));
  p.patch_b = Matrix(1, d);
  p.pos_img = gaussian_matrix(rng, config_.tokens_per_panel(), d, 0.3);
  p.panel_emb = gaussian_matrix(rng, 2, d, 0.3);
  p.tok_emb = gaussian_matrix(rng, config_.vocab_size, d, 0.5);
  p.pos_txt = gaussian_matrix(rng, config_.text_length, d, 0.3);
  p.time_w1 = gaussian_matrix(rng, config_.time_features, d, 1.0 / std::sqrt(static_cast<double>(config_.time_features)));
  p.time_b1 = Matrix(1, d);
  p.time_w2 = gaussian_matrix(rng, d, d, sd);
  p.time_b2 = Matrix(1, d);
  p.blocks.resize(config_.depth);
  for (BlockParams& b : p.blocks) {
    b.time_w = gaussian_matrix(rng, d, d, res);
    b.wq = gaussian_matrix(rng, d, d, sd);
    b.wk = gaussian_matrix(rng, d, d, sd);
    b.wv = gaussian_matrix(rng, d, d, sd);
    b.wo = gaussian_matrix(rng, d, d, res);
    b.bo = Matrix(1, d);
    b.w1 = gaussian_matrix(rng, d, config_.mlp, sd);
    b.b1 = Matrix(1, config_.mlp);
    b.w2 = gaussian_matrix(rng, config_.mlp, d, 1.0 / std::sqrt(static_cast<double>(config_.mlp)) /
                                                    std::sqrt(2.0 * static_cast<double>(config_.depth)));
    b.b2 = Matrix(1, d);
  }
  p.out_w = gaussian_matrix(rng, d, pv, 0.1 * sd);
  p.out_b = Matrix(1, pv);
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : params_.tensors()) n += m->size();
  return n;
}

bool DenoiserModel::all_finite() const {
  for (const auto& [name, m] : params_.tensors()) {
    if (!m->all_finite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tokenization

namespace {

void check_canvas(std::size_t height, std::size_t width, std::size_t panel, std::size_t patch) {
  if (panel == 0 || patch == 0 || panel % patch != 0) throw ShapeError("panel must be a multiple of the patch");
  if (height != panel || width == 0 || width % panel != 0) {
    throw ShapeError("canvas must be " + std::to_string(panel) + " pixels high and a whole number of panels wide");
  }
}

// Calls f(token, value_index, y, x, channel) for every canvas value.
template <typename F>
void for_each_token_value(std::size_t height, std::size_t width, std::size_t panel, std::size_t patch, F&& f) {
  const std::size_t per_side = panel / patch;
  const std::size_t panels = width / panel;
  std::size_t token = 0;
  for (std::size_t k = 0; k < panels; ++k) {
    for (std::size_t py = 0; py < per_side; ++py) {
      for (std::size_t px = 0; px < per_side; ++px, ++token) {
        std::size_t idx = 0;
        for (std::size_t dy = 0; dy < patch; ++dy) {
          for (std::size_t dx = 0; dx < patch; ++dx) {
            for (std::size_t c = 0; c < 3; ++c, ++idx) {
              f(token, idx, py * patch + dy, k * panel + px * patch + dx, c);
            }
          }
        }
      }
    }
  }
  (void)height;
}

}  // namespace

Matrix to_tokens(const ToyImage& image, std::size_t panel, std::size_t patch) {
  check_canvas(image.height(), image.width(), panel, patch);
  Matrix out(image.width() / panel * (panel / patch) * (panel / patch), patch * patch * 3);
  for_each_token_value(image.height(), image.width(), panel, patch,
                       [&](std::size_t t, std::size_t i, std::size_t y, std::size_t x, std::size_t c) {
                         out(t, i) = 2.0 * image.at(y, x, c) - 1.0;
                       });
  return out;
}

ToyImage from_tokens(const Matrix& tokens, std::size_t height, std::size_t width, std::size_t panel,
                     std::size_t patch) {
  check_canvas(height, width, panel, patch);
  if (tokens.rows() != width / panel * (panel / patch) * (panel / patch) || tokens.cols() != patch * patch * 3) {
    throw ShapeError("token matrix does not match the canvas size");
  }
  ToyImage out(height, width);
  for_each_token_value(height, width, panel, patch,
                       [&](std::size_t t, std::size_t i, std::size_t y, std::size_t x, std::size_t c) {
                         out.at(y, x, c) = std::clamp(0.5 * (tokens(t, i) + 1.0), 0.0, 1.0);
                       });
  return out;
}

Matrix mask_tokens(const BinaryMask& mask, std::size_t panel, std::size_t patch) {
  check_canvas(mask.height, mask.width, panel, patch);
  Matrix out(mask.width / panel * (panel / patch) * (panel / patch), patch * patch * 3);
  for_each_token_value(mask.height, mask.width, panel, patch,
                       [&](std::size_t t, std::size_t i, std::size_t y, std::size_t x, std::size_t) {
                         out(t, i) = mask.at(y, x) ? 1.0 : 0.0;
                       });
  return out;
}

AttentionPartition diptych_partition(const DenoiserConfig& config) {
  return {config.text_length, config.tokens_per_panel(), config.tokens_per_panel()};
}

// ---------------------------------------------------------------------------
// Forward and backward passes

namespace {
const double kGeluA = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluA * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
  const double th = std::tanh(kGeluA * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluA * (1.0 + 3.0 * 0.044715 * x * x);
}

Matrix fourier_features(double t, std::size_t count) {
  Matrix f(1, count);
  for (std::size_t k = 0; k < count / 2; ++k) {
    const double w = std::numbers::pi * std::ldexp(1.0, static_cast<int>(k)) * t;
    f(0, 2 * k) = std::sin(w);
    f(0, 2 * k + 1) = std::cos(w);
  }
  return f;
}

namespace {

constexpr double kLnEps = 1e-5;

Matrix layer_norm(const Matrix& x, std::vector<double>& inv) {
  Matrix y(x.rows(), x.cols());
  inv.resize(x.rows());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    if (!std::isfinite(var)) throw NumericError("layer norm input overflowed");
    inv[r] = 1.0 / std::sqrt(var + kLnEps);
    auto out = y.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] = (in[c] - mean) * inv[r];
  }
  return y;
}

// Adds the layer-norm input gradient for output gradient dy into dx.
void layer_norm_backward(const Matrix& y, const std::vector<double>& inv, const Matrix& dy, Matrix& dx) {
  const double n = static_cast<double>(y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const auto yr = y.row(r);
    const auto g = dy.row(r);
    double mg = 0.0, mgy = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) {
      mg += g[c];
      mgy += g[c] * yr[c];
    }
    mg /= n;
    mgy /= n;
    auto out = dx.row(r);
    for (std::size_t c = 0; c < y.cols(); ++c) out[c] += inv[r] * (g[c] - mg - yr[c] * mgy);
  }
}

void add_row_broadcast(Matrix& m, const Matrix& row) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto out = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row(0, c);
  }
}

void add_column_sums(const Matrix& m, Matrix& out_row) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out_row(0, c) += in[c];
  }
}

Matrix column_slice(const Matrix& m, std::size_t begin, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::memcpy(out.row(r).data(), m.row(r).data() + begin, width * sizeof(double));
  }
  return out;
}

void add_columns(Matrix& dst, const Matrix& src, std::size_t begin) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    auto out = dst.row(r);
    const auto in = src.row(r);
    for (std::size_t c = 0; c < src.cols(); ++c) out[begin + c] += in[c];
  }
}

struct BlockCache {
  Matrix h1;
  std::vector<double> inv1;
  AttentionTrace attention;
  bool enhanced = false;
  Matrix h2;
  std::vector<double> inv2;
  Matrix u, g;
};

struct ForwardCache {
  Matrix fourier, time_pre, time_hidden, temb;
  std::vector<BlockCache> blocks;
  Matrix final_norm;
  std::vector<double> final_inv;
};

struct Layout {
  std::size_t text = 0;
  std::size_t image = 0;
  std::size_t panels = 0;
};

Layout check_query(const DenoiserModel& model, const Matrix& x_t, const Caption& caption,
                   const std::vector<Matrix>* injections) {
  const DenoiserConfig& c = model.config();
  if (caption.ids.size() != c.text_length) {
    throw ShapeError("caption length " + std::to_string(caption.ids.size()) + " does not match the model's " +
                     std::to_string(c.text_length));
  }
  for (std::int32_t id : caption.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) throw InputError("caption token id out of range");
  }
  const std::size_t n = x_t.rows();
  if (x_t.cols() != c.patch_values() || n == 0 || n % c.tokens_per_panel() != 0 || n / c.tokens_per_panel() > 2) {
    throw ShapeError("image tokens must cover one or two panels of " + std::to_string(c.patch_values()) +
                     "-value patches");
  }
  if (injections != nullptr) {
    if (injections->size() != c.depth) throw ShapeError("one injection per block is required");
    for (const Matrix& m : *injections) {
      if (m.rows() != n || m.cols() != c.dim) throw ShapeError("injection must be image tokens x model dim");
    }
  }
  return {c.text_length, n, n / c.tokens_per_panel()};
}

Matrix forward(const DenoiserModel& model, const VelocityQuery& q, ForwardCache* cache) {
  if (q.x_t == nullptr || q.caption == nullptr) throw InputError("velocity query needs tokens and a caption");
  if (!(q.t >= 0.0 && q.t <= 1.0)) throw InputError("t must lie in [0, 1]");
  const Layout layout = check_query(model, *q.x_t, *q.caption, q.injections);
  const DenoiserConfig& c = model.config();
  const DenoiserParams& p = model.params();
  const bool enhance = q.enhancement != nullptr && !q.enhancement->is_noop();
  if (q.enhancement != nullptr) q.enhancement->validate();
  if (q.partition) {
    q.partition->validate(layout.text + layout.image);
    if (q.partition->text != layout.text) throw ShapeError("partition text length does not match the caption");
  } else if (enhance) {
    throw ShapeError("reference attention enhancement requires an attention partition");
  }

  ForwardCache local;
  ForwardCache& fc = cache != nullptr ? *cache : local;
  fc.fourier = fourier_features(q.t, c.time_features);
  fc.time_pre = matmul(fc.fourier, p.time_w1);
  add_row_broadcast(fc.time_pre, p.time_b1);
  fc.time_hidden = fc.time_pre;
  for (double& v : fc.time_hidden.values()) v = gelu(v);
  fc.temb = matmul(fc.time_hidden, p.time_w2);
  add_row_broadcast(fc.temb, p.time_b2);

  const std::size_t seq = layout.text + layout.image;
  Matrix x(seq, c.dim);
  for (std::size_t i = 0; i < layout.text; ++i) {
    const auto id = static_cast<std::size_t>((*q.caption).ids[i]);
    auto row = x.row(i);
    for (std::size_t d = 0; d < c.dim; ++d) row[d] = p.tok_emb(id, d) + p.pos_txt(i, d);
  }
  const Matrix img = matmul(*q.x_t, p.patch_w);
  for (std::size_t i = 0; i < layout.image; ++i) {
    const std::size_t pos = i % c.tokens_per_panel(), panel = i / c.tokens_per_panel();
    auto row = x.row(layout.text + i);
    for (std::size_t d = 0; d < c.dim; ++d) {
      row[d] = img(i, d) + p.patch_b(0, d) + p.pos_img(pos, d) + p.panel_emb(panel, d);
    }
  }
  add_row_broadcast(x, fc.temb);

  fc.blocks.assign(c.depth, {});
  for (std::size_t b = 0; b < c.depth; ++b) {
    const BlockParams& bp = p.blocks[b];
    BlockCache& bc = fc.blocks[b];
    add_row_broadcast(x, matmul(fc.temb, bp.time_w));
    if (q.injections != nullptr) {
      const Matrix& inj = (*q.injections)[b];
      for (std::size_t i = 0; i < layout.image; ++i) {
        auto row = x.row(layout.text + i);
        const auto in = inj.row(i);
        for (std::size_t d = 0; d < c.dim; ++d) row[d] += in[d];
      }
    }
    bc.h1 = layer_norm(x, bc.inv1);
    const AttentionProjections proj{bp.wq, bp.wk, bp.wv, bp.wo, bp.bo};
    Matrix a;
    bc.enhanced = enhance && q.enhancement->applies_to_layer(b);
    if (q.partition) {
      const EnhancementConfig noop;
      a = attend_enhanced(JointSequence{bc.h1, *q.partition, c.head_dim()}, proj,
                          enhance ? *q.enhancement : noop, bc.enhanced, &bc.attention);
    } else {
      a = attend(bc.h1, c.head_dim(), proj, &bc.attention);
    }
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += a.values()[i];
    bc.h2 = layer_norm(x, bc.inv2);
    bc.u = matmul(bc.h2, bp.w1);
    add_row_broadcast(bc.u, bp.b1);
    bc.g = bc.u;
    for (double& v : bc.g.values()) v = gelu(v);
    Matrix m = matmul(bc.g, bp.w2);
    add_row_broadcast(m, bp.b2);
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += m.values()[i];
  }

  Matrix x_img(layout.image, c.dim);
  std::memcpy(x_img.data(), x.row(layout.text).data(), layout.image * c.dim * sizeof(double));
  fc.final_norm = layer_norm(x_img, fc.final_inv);
  Matrix v = matmul(fc.final_norm, p.out_w);
  add_row_broadcast(v, p.out_b);
  return v;
}

// Accumulates parameter gradients and returns d(loss)/d(h) for the attention
// input h, given d(loss)/d(out).
Matrix attention_backward(const BlockParams& bp, BlockParams* gp, const Matrix& h, const BlockCache& bc,
                          const Matrix& dout, std::size_t head_dim, const VelocityQuery& q) {
  const AttentionTrace& tr = bc.attention;
  const std::size_t dim = h.cols();
  const std::size_t heads = dim / head_dim;
  if (gp != nullptr) {
    matmul_tn_acc(tr.heads, dout, gp->wo);
    add_column_sums(dout, gp->bo);
  }
  const Matrix dheads = matmul_nt(dout, bp.wo);
  Matrix dq(h.rows(), dim), dk(h.rows(), dim), dv(h.rows(), dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  BlockRect block;
  double lambda = 1.0;
  if (bc.enhanced) {
    if (q.enhancement->renormalize) throw ConfigError("gradients through renormalized enhancement are not supported");
    lambda = q.enhancement->lambda;
    block = slice_reference_block(tr.probs[0], *q.partition);
  }
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const Matrix qh = column_slice(tr.q, hd * head_dim, head_dim);
    const Matrix kh = column_slice(tr.k, hd * head_dim, head_dim);
    const Matrix vh = column_slice(tr.v, hd * head_dim, head_dim);
    const Matrix dout_h = column_slice(dheads, hd * head_dim, head_dim);
    const Matrix& probs = tr.probs[hd];
    Matrix dprobs = matmul_nt(dout_h, vh);
    add_columns(dv, matmul_tn(tr.used[hd], dout_h), hd * head_dim);
    if (bc.enhanced) {
      for (std::size_t r = block.row_begin; r < block.row_end; ++r) {
        for (std::size_t col = block.col_begin; col < block.col_end; ++col) dprobs(r, col) *= lambda;
      }
    }
    Matrix dscores(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      const auto pr = probs.row(r);
      const auto gr = dprobs.row(r);
      double s = 0.0;
      for (std::size_t col = 0; col < probs.cols(); ++col) s += pr[col] * gr[col];
      auto out = dscores.row(r);
      for (std::size_t col = 0; col < probs.cols(); ++col) out[col] = pr[col] * (gr[col] - s) * scale;
    }
    add_columns(dq, matmul(dscores, kh), hd * head_dim);
    add_columns(dk, matmul_tn(dscores, qh), hd * head_dim);
  }
  if (gp != nullptr) {
    matmul_tn_acc(h, dq, gp->wq);
    matmul_tn_acc(h, dk, gp->wk);
    matmul_tn_acc(h, dv, gp->wv);
  }
  Matrix dh = matmul_nt(dq, bp.wq);
  matmul_acc(dk, transpose(bp.wk), dh);
  matmul_acc(dv, transpose(bp.wv), dh);
  return dh;
}

void backward(const DenoiserModel& model, const VelocityQuery& q, const ForwardCache& fc, const Matrix& dvel,
              DenoiserParams* gp, std::vector<Matrix>* ginj) {
  const DenoiserConfig& c = model.config();
  const DenoiserParams& p = model.params();
  const std::size_t text = c.text_length, n_img = q.x_t->rows(), seq = text + n_img;

  if (gp != nullptr) {
    matmul_tn_acc(fc.final_norm, dvel, gp->out_w);
    add_column_sums(dvel, gp->out_b);
  }
  const Matrix dnorm = matmul_nt(dvel, p.out_w);
  Matrix dimg(n_img, c.dim);
  layer_norm_backward(fc.final_norm, fc.final_inv, dnorm, dimg);
  Matrix dx(seq, c.dim);
  std::memcpy(dx.row(text).data(), dimg.data(), n_img * c.dim * sizeof(double));

  Matrix dtemb(1, c.dim);
  for (std::size_t bi = c.depth; bi-- > 0;) {
    const BlockParams& bp = p.blocks[bi];
    BlockParams* gb = gp != nullptr ? &gp->blocks[bi] : nullptr;
    const BlockCache& bc = fc.blocks[bi];
    // MLP branch
    if (gb != nullptr) {
      matmul_tn_acc(bc.g, dx, gb->w2);
      add_column_sums(dx, gb->b2);
    }
    Matrix du = matmul_nt(dx, bp.w2);
    for (std::size_t i = 0; i < du.size(); ++i) du.values()[i] *= gelu_grad(bc.u.values()[i]);
    if (gb != nullptr) {
      matmul_tn_acc(bc.h2, du, gb->w1);
      add_column_sums(du, gb->b1);
    }
    const Matrix dh2 = matmul_nt(du, bp.w1);
    layer_norm_backward(bc.h2, bc.inv2, dh2, dx);
    // Attention branch
    const Matrix dh1 = attention_backward(bp, gb, bc.h1, bc, dx, c.head_dim(), q);
    layer_norm_backward(bc.h1, bc.inv1, dh1, dx);
    // Block input shifts
    Matrix colsum(1, c.dim);
    add_column_sums(dx, colsum);
    if (gb != nullptr) matmul_tn_acc(fc.temb, colsum, gb->time_w);
    matmul_acc(colsum, transpose(bp.time_w), dtemb);
    if (ginj != nullptr) {
      Matrix& gi = (*ginj)[bi];
      for (std::size_t i = 0; i < n_img; ++i) {
        auto out = gi.row(i);
        const auto in = dx.row(text + i);
        for (std::size_t d = 0; d < c.dim; ++d) out[d] += in[d];
      }
    }
  }
  if (gp == nullptr) return;

  add_column_sums(dx, dtemb);
  for (std::size_t i = 0; i < text; ++i) {
    const auto id = static_cast<std::size_t>(q.caption->ids[i]);
    const auto in = dx.row(i);
    for (std::size_t d = 0; d < c.dim; ++d) {
      gp->tok_emb(id, d) += in[d];
      gp->pos_txt(i, d) += in[d];
    }
  }
  Matrix dpatch(n_img, c.dim);
  std::memcpy(dpatch.data(), dx.row(text).data(), n_img * c.dim * sizeof(double));
  matmul_tn_acc(*q.x_t, dpatch, gp->patch_w);
  add_column_sums(dpatch, gp->patch_b);
  for (std::size_t i = 0; i < n_img; ++i) {
    const std::size_t pos = i % c.tokens_per_panel(), panel = i / c.tokens_per_panel();
    const auto in = dpatch.row(i);
    for (std::size_t d = 0; d < c.dim; ++d) {
      gp->pos_img(pos, d) += in[d];
      gp->panel_emb(panel, d) += in[d];
    }
  }
  matmul_tn_acc(fc.time_hidden, dtemb, gp->time_w2);
  add_column_sums(dtemb, gp->time_b2);
  Matrix dpre = matmul_nt(dtemb, p.time_w2);
  for (std::size_t i = 0; i < dpre.size(); ++i) dpre.values()[i] *= gelu_grad(fc.time_pre.values()[i]);
  matmul_tn_acc(fc.fourier, dpre, gp->time_w1);
  add_column_sums(dpre, gp->time_b1);
}

}  // namespace

Matrix predict_velocity(const DenoiserModel& model, const VelocityQuery& query) {
  return forward(model, query, nullptr);
}

Matrix predict_velocity(const DenoiserModel& model, const Matrix& x_t, double t, const Caption& caption,
                        const EnhancementConfig& cfg, const std::optional<AttentionPartition>& partition) {
  VelocityQuery q;
  q.x_t = &x_t;
  q.t = t;
  q.caption = &caption;
  q.enhancement = &cfg;
  q.partition = partition;
  return forward(model, q, nullptr);
}

double velocity_loss(const DenoiserModel& model, const LossQuery& query, const LossGradients& grads) {
  if (query.x0 == nullptr || query.noise == nullptr || query.caption == nullptr) {
    throw InputError("loss query needs clean tokens, noise and a caption");
  }
  const Matrix& x0 = *query.x0;
  const Matrix& eps = *query.noise;
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) throw ShapeError("noise must match the clean tokens");
  if (query.loss_mask != nullptr &&
      (query.loss_mask->rows() != x0.rows() || query.loss_mask->cols() != x0.cols())) {
    throw ShapeError("loss mask must match the clean tokens");
  }
  Matrix xt(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    xt.values()[i] = (1.0 - query.t) * x0.values()[i] + query.t * eps.values()[i];
  }
  VelocityQuery vq;
  vq.x_t = &xt;
  vq.t = query.t;
  vq.caption = query.caption;
  vq.injections = query.injections;
  const bool need_grad = grads.params != nullptr || grads.injections != nullptr;
  ForwardCache fc;
  const Matrix v = forward(model, vq, need_grad ? &fc : nullptr);

  double wsum = 0.0, loss = 0.0;
  Matrix dv(v.rows(), v.cols());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double w = query.loss_mask != nullptr ? query.loss_mask->values()[i] : 1.0;
    const double diff = v.values()[i] - (eps.values()[i] - x0.values()[i]);
    wsum += w;
    loss += w * diff * diff;
    dv.values()[i] = 2.0 * w * diff;
  }
  if (wsum == 0.0) return 0.0;
  loss /= wsum;
  if (need_grad) {
    const double k = grads.weight / wsum;
    for (double& g : dv.values()) g *= k;
    if (grads.injections != nullptr && grads.injections->size() != model.config().depth) {
      grads.injections->assign(model.config().depth, Matrix(x0.rows(), model.config().dim));
    }
    backward(model, vq, fc, dv, grads.params, grads.injections);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training

double schedule_lr(const TrainingConfig& config, std::size_t step) {
  if (config.warmup > 0 && step < config.warmup) {
    return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(config.warmup);
  }
  const double span = static_cast<double>(std::max<std::size_t>(1, config.steps - std::min(config.steps, config.warmup)));
  const double progress = std::min(1.0, static_cast<double>(step - std::min(step, config.warmup)) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return config.learning_rate * (config.final_lr_fraction + (1.0 - config.final_lr_fraction) * cosine);
}

void sgd_step(std::vector<std::pair<std::string, Matrix*>> params,
              std::vector<std::pair<std::string, Matrix*>> grads, std::vector<Matrix>& velocity, double lr,
              double momentum, double clip_norm) {
  if (params.size() != grads.size()) throw ShapeError("parameter and gradient lists differ");
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g->values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
  const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (const auto& [name, m] : params) velocity.emplace_back(m->rows(), m->cols());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto pv = params[i].second->values();
    const auto gv = grads[i].second->values();
    auto vv = velocity[i].values();
    for (std::size_t j = 0; j < pv.size(); ++j) {
      vv[j] = momentum * vv[j] + scale * gv[j];
      pv[j] -= lr * vv[j];
    }
  }
}

namespace {

struct HeldoutItem {
  std::size_t index;
  double t;
  Matrix noise;
};

double heldout_loss(const DenoiserModel& model, const std::vector<Matrix>& tokens,
                    const std::vector<TrainingSample>& data, const std::vector<HeldoutItem>& items) {
  double total = 0.0;
  for (const HeldoutItem& h : items) {
    LossQuery q;
    q.x0 = &tokens[h.index];
    q.noise = &h.noise;
    q.t = h.t;
    q.caption = &data[h.index].caption;
    total += velocity_loss(model, q);
  }
  return total / static_cast<double>(items.size());
}

Matrix noise_like(SeededRng& rng, const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (double& v : out.values()) v = rng.normal();
  return out;
}

}  // namespace

DenoiserModel train_denoiser(const std::vector<TrainingSample>& dataset, const DenoiserConfig& model_config,
                             const TrainingConfig& config, SeededRng& rng, TrainingReport* report,
                             const ProgressFn& progress) {
  if (dataset.empty()) throw InputError("training dataset is empty");
  if (config.batch == 0 || config.steps == 0) throw ConfigError("training needs positive steps and batch size");
  const auto start = std::chrono::steady_clock::now();
  DenoiserModel model(model_config, rng.next_u64());
  const DenoiserConfig& c = model.config();
  std::vector<Matrix> tokens;
  tokens.reserve(dataset.size());
  for (const TrainingSample& s : dataset) {
    try {
      tokens.push_back(to_tokens(s.image, c.panel, c.patch));
    } catch (const ShapeError& e) {
      throw InputError(std::string("training image rejected: ") + e.what());
    }
    if (s.caption.ids.size() != c.text_length) throw InputError("training caption has the wrong length");
  }

  // Split into training and held-out items.
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::size_t> train_idx, held_idx;
  if (dataset.size() == 1) {
    train_idx = held_idx = order;
  } else {
    const auto want = static_cast<std::size_t>(std::llround(config.heldout_fraction * static_cast<double>(dataset.size())));
    const std::size_t held = std::clamp<std::size_t>(want, 1, std::min(config.max_heldout, dataset.size() - 1));
    held_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
    train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  }
  std::vector<HeldoutItem> held_items;
  SeededRng held_rng = rng.child(1);
  for (std::size_t j = 0; j < held_idx.size(); ++j) {
    held_items.push_back({held_idx[j], (static_cast<double>(j) + 0.5) / static_cast<double>(held_idx.size()),
                          noise_like(held_rng, tokens[held_idx[j]])});
  }

  TrainingReport local;
  TrainingReport& rep = report != nullptr ? *report : local;
  rep = {};
  rep.train_items = train_idx.size();
  rep.heldout_items = held_idx.size();
  rep.initial_heldout = heldout_loss(model, tokens, dataset, held_items);

  const std::size_t per_epoch = (train_idx.size() + config.batch - 1) / config.batch;
  const std::size_t eval_every = config.eval_every > 0 ? config.eval_every : per_epoch;
  const Caption uncond = Caption{std::vector<std::int32_t>(c.text_length, Tokenizer::kPad)};
  DenoiserParams grads = model.params().zeros_like();
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
      const Matrix noise = noise_like(rng, tokens[idx]);
      LossQuery q;
      q.x0 = &tokens[idx];
      q.noise = &noise;
      q.t = rng.uniform();
      q.caption = rng.uniform() < config.caption_dropout ? &uncond : &dataset[idx].caption;
      LossGradients lg;
      lg.params = &grads;
      lg.weight = 1.0 / static_cast<double>(config.batch);
      const double loss = velocity_loss(model, q, lg);
      if (!std::isfinite(loss)) {
        throw TrainingError("training loss became non-finite at step " + std::to_string(step) + " (lr " +
                            std::to_string(schedule_lr(config, step)) + ")");
      }
      batch_loss += loss;
    }
    sgd_step(model.params().tensors(), grads.tensors(), momentum, schedule_lr(config, step), config.momentum,
             config.clip_norm);
    if (!model.all_finite()) throw TrainingError("parameters became non-finite at step " + std::to_string(step));
    running += batch_loss / static_cast<double>(config.batch);
    ++running_n;
    if ((step + 1) % eval_every == 0 || step + 1 == config.steps) {
      LossPoint pt{step + 1, running / static_cast<double>(running_n), heldout_loss(model, tokens, dataset, held_items)};
      if (!std::isfinite(pt.heldout)) throw TrainingError("held-out loss became non-finite");
      rep.curve.push_back(pt);
      if (progress) progress(pt);
      running = 0.0;
      running_n = 0;
    }
   } catch (const NumericError& e) {
    throw TrainingError("training diverged at step " + std::to_string(step) + " (lr " +
                        std::to_string(schedule_lr(config, step)) + "): " + e.what());
   }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return model;
}

// ---------------------------------------------------------------------------
// Sampling

void SamplerConfig::validate() const {
  if (steps == 0) throw ConfigError("sampler needs at least one step");
  if (!(guidance_scale >= 0.0) || !std::isfinite(guidance_scale)) throw ConfigError("guidance scale must be >= 0");
  if (!(conditioning_scale >= 0.0 && conditioning_scale <= 1.0)) {
    throw ConfigError("conditioning scale must lie in [0, 1]");
  }
  if (!(lambda >= 1.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 1");
}

Matrix guided_velocity(const DenoiserModel& model, VelocityQuery query, const Caption& unconditional,
                       double guidance_scale) {
  if (guidance_scale == 1.0) return predict_velocity(model, query);
  const Caption* cond = query.caption;
  query.caption = &unconditional;
  Matrix vu = predict_velocity(model, query);
  if (guidance_scale == 0.0) return vu;
  query.caption = cond;
  const Matrix vc = predict_velocity(model, query);
  for (std::size_t i = 0; i < vu.size(); ++i) vu.values()[i] += guidance_scale * (vc.values()[i] - vu.values()[i]);
  return vu;
}

ToyImage sample(const DenoiserModel& model, const Caption& caption, const SamplerConfig& sampler, SeededRng& rng,
                std::size_t panels, const EnhancementConfig& cfg) {
  sampler.validate();
  const DenoiserConfig& c = model.config();
  if (panels < 1 || panels > 2) throw ShapeError("sampling supports one or two panels");
  Matrix x(panels * c.tokens_per_panel(), c.patch_values());
  for (double& v : x.values()) v = rng.normal();
  const Caption uncond{std::vector<std::int32_t>(c.text_length, Tokenizer::kPad)};
  VelocityQuery q;
  q.caption = &caption;
  q.enhancement = &cfg;
  if (panels == 2) q.partition = diptych_partition(c);
  const double dt = 1.0 / static_cast<double>(sampler.steps);
  for (std::size_t i = 0; i < sampler.steps; ++i) {
    q.x_t = &x;
    q.t = static_cast<double>(sampler.steps - i) / static_cast<double>(sampler.steps);
    const Matrix v = guided_velocity(model, q, uncond, sampler.guidance_scale);
    for (std::size_t j = 0; j < x.size(); ++j) x.values()[j] -= dt * v.values()[j];
  }
  return from_tokens(x, c.panel, panels * c.panel, c.panel, c.patch);
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void write_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void write_tensor(std::vector<std::uint8_t>& out, const Matrix& m) {
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    write_u64(out, bits);
  }
}

std::uint32_t ByteReader::u32() {
  if (bytes_.size() - pos_ < 4) throw IoError("checkpoint is truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  if (bytes_.size() - pos_ < 8) throw IoError("checkpoint is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

void ByteReader::tensor_into(Matrix& m) {
  const std::uint32_t r = u32(), c = u32();
  if (r != m.rows() || c != m.cols()) throw IoError("checkpoint tensor shape does not match the configuration");
  for (double& v : m.values()) {
    const std::uint64_t bits = u64();
    std::memcpy(&v, &bits, sizeof v);
  }
}

void ByteReader::expect_magic(std::string_view magic) {
  if (bytes_.size() - pos_ < magic.size() ||
      std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0) {
    throw IoError("bad checkpoint magic; expected " + std::string(magic));
  }
  pos_ += magic.size();
}

namespace {

constexpr std::uint32_t kModelVersion = 1;

std::vector<std::uint8_t> serialize(const DenoiserModel& model) {
  std::vector<std::uint8_t> out = {'D', 'P', 'T', 'Y'};
  write_u32(out, kModelVersion);
  const DenoiserConfig& c = model.config();
  for (std::size_t v : {c.panel, c.patch, c.dim, c.depth, c.heads, c.mlp, c.text_length, c.vocab_size, c.time_features}) {
    write_u64(out, v);
  }
  const auto tensors = model.params().tensors();
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) write_tensor(out, *m);
  return out;
}

}  // namespace

std::uint64_t DenoiserModel::fingerprint() const {
  const auto bytes = serialize(*this);
  return hash_string(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void save_model(const std::filesystem::path& path, const DenoiserModel& model) {
  write_file(path, serialize(model));
}

DenoiserModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader in(bytes);
  in.expect_magic("DPTY");
  if (const std::uint32_t v = in.u32(); v != kModelVersion) {
    throw IoError("unsupported model checkpoint version " + std::to_string(v));
  }
  DenoiserConfig c;
  for (std::size_t* f : {&c.panel, &c.patch, &c.dim, &c.depth, &c.heads, &c.mlp, &c.text_length, &c.vocab_size,
                         &c.time_features}) {
    *f = static_cast<std::size_t>(in.u64());
  }
  DenoiserModel model(c, 0);
  auto tensors = model.params().tensors();
  if (in.u32() != tensors.size()) throw IoError("checkpoint tensor count does not match the configuration");
  for (auto& [name, m] : tensors) in.tensor_into(*m);
  if (!in.at_end()) throw IoError("trailing bytes after model checkpoint");
  return model;
}

}  // namespace diptych
