// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include "lrd/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "lrd/kernels.hpp"

namespace lrd {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

struct LayerNormOut {
  Matrix xhat;
  std::vector<double> rstd;
  Matrix y;
};

void layer_norm(const Matrix& x, const double* gain, const double* bias, LayerNormOut& out) {
  const std::size_t L = x.rows, d = x.cols;
  out.xhat = Matrix(L, d);
  out.y = Matrix(L, d);
  out.rstd.assign(L, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    out.rstd[i] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x(i, j) - mu) * rstd;
      out.xhat(i, j) = xh;
      out.y(i, j) = xh * gain[j] + bias[j];
    }
  }
}

// dx += LN'(dy); dgain/dbias accumulate.
void layer_norm_backward(const Matrix& dy, const LayerNormOut& ln, const double* gain,
                         double* dgain, double* dbias, Matrix& dx) {
  const std::size_t L = dy.rows, d = dy.cols;
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < L; ++i) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgain[j] += dy(i, j) * ln.xhat(i, j);
      dbias[j] += dy(i, j);
      dxhat[j] = dy(i, j) * gain[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * ln.xhat(i, j);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx(i, j) += ln.rstd[i] * (dxhat[j] - mean_dxhat - ln.xhat(i, j) * mean_dxhat_xhat);
    }
  }
}

// out = x W (+ bias), W is (in x out_dim) row-major.
Matrix linear(const Matrix& x, const double* w, std::size_t out_dim, const double* bias = nullptr) {
  Matrix y(x.rows, out_dim);
  kernels::matmul(x.data, std::span<const double>(w, x.cols * out_dim), y.data, x.rows, x.cols, out_dim);
  if (bias != nullptr) {
    for (std::size_t i = 0; i < y.rows; ++i)
      for (std::size_t j = 0; j < out_dim; ++j) y(i, j) += bias[j];
  }
  return y;
}

// Multi-head scaled dot-product attention on already projected q, k, v.
// probs holds n_heads stacked L x L row-stochastic matrices.
Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads,
              std::vector<Matrix>& probs) {
  const std::size_t L = q.rows, d = q.cols, dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(L, v.cols);
  const std::size_t dvh = v.cols / n_heads;
  probs.assign(n_heads, Matrix(L, L));
  for (std::size_t h = 0; h < n_heads; ++h) {
    Matrix& P = probs[h];
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < L; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        P(i, j) = s * scale;
      }
    }
    kernels::softmax_rows(P.data, L, L);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t c = 0; c < dvh; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < L; ++j) s += P(i, j) * v(j, h * dvh + c);
        out(i, h * dvh + c) = s;
      }
    }
  }
  return out;
}

}  // namespace

void DenoiserConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d < 1 || d_ff < 1 || L_max < 1 || V < 1) {
    throw Error("DenoiserConfig: all counts must be >= 1");
  }
  if (d % n_heads != 0) throw Error("DenoiserConfig: d must be divisible by n_heads");
}

EmbeddingTable::EmbeddingTable(std::span<const double> rows, std::size_t vocab, std::size_t dim)
    : rows_(rows), vocab_(vocab), dim_(dim) {
  if (rows.size() != (vocab + 1) * dim) throw Error("EmbeddingTable: expected (V + 1) x d values");
}

struct DenoiserModel::Cache {
  struct Layer {
    Matrix x_in;
    LayerNormOut ln1;
    Matrix q, k, v;
    std::vector<Matrix> probs;
    Matrix attn;  // concatenated heads before W_O
    Matrix x_mid;
    LayerNormOut ln2;
    Matrix u;
    Matrix g;
  };
  std::vector<Layer> layers;
  Matrix x_out;
  LayerNormOut lnf;
  Matrix logits;
};

std::size_t DenoiserModel::add_tensor(const std::string& name, std::size_t rows, std::size_t cols) {
  ParamTensor t;
  t.name = name;
  t.rows = rows;
  t.cols = cols;
  t.offset = tensors_.empty() ? 0 : tensors_.back().offset + tensors_.back().size();
  tensors_.push_back(t);
  return tensors_.size() - 1;
}

void DenoiserModel::build_layout() {
  const auto& c = config_;
  tensors_.clear();
  layers_.clear();
  table_ = add_tensor("embed.table", c.V + 1, c.d);
  positional_ = add_tensor("embed.positional", c.L_max, c.d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerIdx idx{};
    idx.ln1_g = add_tensor(p + "ln1.gain", 1, c.d);
    idx.ln1_b = add_tensor(p + "ln1.bias", 1, c.d);
    idx.wq = add_tensor(p + "attn.wq", c.d, c.d);
    idx.wk = add_tensor(p + "attn.wk", c.d, c.d);
    idx.wv = add_tensor(p + "attn.wv", c.d, c.d);
    idx.wo = add_tensor(p + "attn.wo", c.d, c.d);
    idx.ln2_g = add_tensor(p + "ln2.gain", 1, c.d);
    idx.ln2_b = add_tensor(p + "ln2.bias", 1, c.d);
    idx.w1 = add_tensor(p + "ff.w1", c.d, c.d_ff);
    idx.b1 = add_tensor(p + "ff.b1", 1, c.d_ff);
    idx.w2 = add_tensor(p + "ff.w2", c.d_ff, c.d);
    idx.b2 = add_tensor(p + "ff.b2", 1, c.d);
    layers_.push_back(idx);
  }
  lnf_g_ = add_tensor("final.ln.gain", 1, c.d);
  lnf_b_ = add_tensor("final.ln.bias", 1, c.d);
  head_w_ = add_tensor("head.w", c.d, c.V);
  head_b_ = add_tensor("head.b", 1, c.V);
  params_.assign(tensors_.back().offset + tensors_.back().size(), 0.0);
}

DenoiserModel DenoiserModel::zeros(const DenoiserConfig& config) {
  config.validate();
  DenoiserModel m;
  m.config_ = config;
  m.build_layout();
  return m;
}

DenoiserModel DenoiserModel::init(const DenoiserConfig& config, Rng& rng) {
  DenoiserModel m = zeros(config);
  const double d = static_cast<double>(config.d);
  auto fill_normal = [&](std::size_t idx, double stddev) {
    for (double& w : m.view(m.tensors_[idx])) w = stddev * normal01(rng);
  };
  auto fill_const = [&](std::size_t idx, double value) {
    for (double& w : m.view(m.tensors_[idx])) w = value;
  };

  // Token rows have expected norm token_init_scale; MASK row is shrunk.
  auto table = m.view(m.tensors_[m.table_]);
  const double tok_std = config.token_init_scale / std::sqrt(d);
  for (std::size_t v = 0; v <= config.V; ++v) {
    const double s = v == config.V ? tok_std * config.mask_init_ratio : tok_std;
    for (std::size_t j = 0; j < config.d; ++j) table[v * config.d + j] = s * normal01(rng);
  }
  fill_normal(m.positional_, tok_std);
  for (const auto& l : m.layers_) {
    fill_const(l.ln1_g, 1.0);
    fill_normal(l.wq, 1.0 / std::sqrt(d));
    fill_normal(l.wk, 1.0 / std::sqrt(d));
    fill_normal(l.wv, 1.0 / std::sqrt(d));
    fill_normal(l.wo, 1.0 / std::sqrt(d));
    fill_const(l.ln2_g, 1.0);
    fill_normal(l.w1, 1.0 / std::sqrt(d));
    fill_normal(l.w2, 1.0 / std::sqrt(static_cast<double>(config.d_ff)));
  }
  fill_const(m.lnf_g_, 1.0);
  return m;
}

const ParamTensor& DenoiserModel::tensor(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw Error("DenoiserModel: unknown tensor '" + std::string(name) + "'");
}

EmbeddingTable DenoiserModel::table() const {
  return EmbeddingTable(view(tensors_[table_]), config_.V, config_.d);
}

std::span<const double> DenoiserModel::positional_row(std::size_t pos) const {
  if (pos >= config_.L_max) throw Error("positional_row: position beyond L_max");
  return view(tensors_[positional_]).subspan(pos * config_.d, config_.d);
}

Matrix DenoiserModel::embed_tokens(std::span<const TokenId> tokens) const {
  if (tokens.size() > config_.L_max) throw Error("embed_tokens: sequence longer than L_max");
  const auto tbl = table();
  Matrix x(tokens.size(), config_.d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId tok = tokens[i];
    if (tok < 0 || static_cast<std::size_t>(tok) > config_.V) throw Error("embed_tokens: token id out of range");
    const auto row = tbl.row(static_cast<std::size_t>(tok));
    const auto pos = positional_row(i);
    for (std::size_t j = 0; j < config_.d; ++j) x(i, j) = row[j] + pos[j];
  }
  return x;
}

void DenoiserModel::add_positional(Matrix& content) const {
  if (content.rows > config_.L_max) throw Error("add_positional: sequence longer than L_max");
  for (std::size_t i = 0; i < content.rows; ++i) {
    const auto pos = positional_row(i);
    for (std::size_t j = 0; j < config_.d; ++j) content(i, j) += pos[j];
  }
}

void DenoiserModel::run_forward(const Matrix& x0, Cache& cache) const {
  const auto& c = config_;
  if (x0.rows > c.L_max) throw Error("forward: sequence longer than L_max");
  if (x0.cols != c.d) throw Error("forward: embedding width does not match d");
  cache.layers.resize(c.n_layers);
  Matrix x = x0;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const LayerIdx& w = layers_[l];
    auto& lc = cache.layers[l];
    lc.x_in = x;
    layer_norm(x, ptr(w.ln1_g), ptr(w.ln1_b), lc.ln1);
    lc.q = linear(lc.ln1.y, ptr(w.wq), c.d);
    lc.k = linear(lc.ln1.y, ptr(w.wk), c.d);
    lc.v = linear(lc.ln1.y, ptr(w.wv), c.d);
    lc.attn = attend(lc.q, lc.k, lc.v, c.n_heads, lc.probs);
    const Matrix a = linear(lc.attn, ptr(w.wo), c.d);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += a.data[i];
    lc.x_mid = x;
    layer_norm(x, ptr(w.ln2_g), ptr(w.ln2_b), lc.ln2);
    lc.u = linear(lc.ln2.y, ptr(w.w1), c.d_ff, ptr(w.b1));
    lc.g = lc.u;
    for (double& v : lc.g.data) v = gelu(v);
    const Matrix f = linear(lc.g, ptr(w.w2), c.d, ptr(w.b2));
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += f.data[i];
  }
  cache.x_out = x;
  layer_norm(x, ptr(lnf_g_), ptr(lnf_b_), cache.lnf);
  cache.logits = linear(cache.lnf.y, ptr(head_w_), c.V, ptr(head_b_));
}

DenoiserOutput DenoiserModel::forward(const Matrix& embeddings) const {
  Cache cache;
  run_forward(embeddings, cache);
  DenoiserOutput out;
  out.logits = std::move(cache.logits);
  Matrix probs = out.logits;
  kernels::softmax_rows(probs.data, probs.rows, probs.cols);
  out.dists.reserve(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const auto r = probs.row(i);
    out.dists.push_back(Categorical::checked(std::vector<double>(r.begin(), r.end())));
  }
  return out;
}

double DenoiserModel::backward_example(const MaskedExample& ex, const Cache& cache, double scale,
                                       std::span<double> grad) const {
  const auto& c = config_;
  const std::size_t L = ex.clean.size();
  const TokenId mask = mask_token();
  auto g = [&](std::size_t idx) { return grad.data() + tensors_[idx].offset; };

  // Cross-entropy on masked rows; dlogits = scale * (softmax - onehot).
  Matrix probs = cache.logits;
  kernels::softmax_rows(probs.data, L, c.V);
  Matrix dlogits(L, c.V);
  double loss = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    if (ex.corrupted[i] != mask) continue;
    const auto target = static_cast<std::size_t>(ex.clean[i]);
    const auto lr = cache.logits.row(i);
    const double mx = *std::max_element(lr.begin(), lr.end());
    double z = 0.0;
    for (double v : lr) z += std::exp(v - mx);
    loss += -(lr[target] - mx - std::log(z));
    for (std::size_t v = 0; v < c.V; ++v) dlogits(i, v) = scale * probs(i, v);
    dlogits(i, target) -= scale;
  }

  // Head.
  kernels::matmul_at(cache.lnf.y.data, dlogits.data, std::span<double>(g(head_w_), c.d * c.V), c.d, L,
                     c.V, true);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t v = 0; v < c.V; ++v) g(head_b_)[v] += dlogits(i, v);
  Matrix dh(L, c.d);
  kernels::matmul_bt(dlogits.data, std::span<const double>(ptr(head_w_), c.d * c.V), dh.data, L, c.V, c.d);
  Matrix dx(L, c.d);
  layer_norm_backward(dh, cache.lnf, ptr(lnf_g_), g(lnf_g_), g(lnf_b_), dx);

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const LayerIdx& w = layers_[li];
    const auto& lc = cache.layers[li];

    // Feed-forward residual branch.
    kernels::matmul_at(lc.g.data, dx.data, std::span<double>(g(w.w2), c.d_ff * c.d), c.d_ff, L, c.d, true);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < c.d; ++j) g(w.b2)[j] += dx(i, j);
    Matrix du(L, c.d_ff);
    kernels::matmul_bt(dx.data, std::span<const double>(ptr(w.w2), c.d_ff * c.d), du.data, L, c.d, c.d_ff);
    for (std::size_t i = 0; i < du.data.size(); ++i) du.data[i] *= gelu_grad(lc.u.data[i]);
    kernels::matmul_at(lc.ln2.y.data, du.data, std::span<double>(g(w.w1), c.d * c.d_ff), c.d, L, c.d_ff, true);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < c.d_ff; ++j) g(w.b1)[j] += du(i, j);
    Matrix dh2(L, c.d);
    kernels::matmul_bt(du.data, std::span<const double>(ptr(w.w1), c.d * c.d_ff), dh2.data, L, c.d_ff, c.d);
    layer_norm_backward(dh2, lc.ln2, ptr(w.ln2_g), g(w.ln2_g), g(w.ln2_b), dx);

    // Attention residual branch.
    kernels::matmul_at(lc.attn.data, dx.data, std::span<double>(g(w.wo), c.d * c.d), c.d, L, c.d, true);
    Matrix dattn(L, c.d);
    kernels::matmul_bt(dx.data, std::span<const double>(ptr(w.wo), c.d * c.d), dattn.data, L, c.d, c.d);

    const std::size_t dh_ = c.d_head();
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh_));
    Matrix dq(L, c.d), dk(L, c.d), dv(L, c.d);
    Matrix dP(L, L);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const Matrix& P = lc.probs[h];
      const std::size_t off = h * dh_;
      for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
          double s = 0.0;
          for (std::size_t cc = 0; cc < dh_; ++cc) s += dattn(i, off + cc) * lc.v(j, off + cc);
          dP(i, j) = s;
        }
      }
      for (std::size_t j = 0; j < L; ++j) {
        for (std::size_t cc = 0; cc < dh_; ++cc) {
          double s = 0.0;
          for (std::size_t i = 0; i < L; ++i) s += P(i, j) * dattn(i, off + cc);
          dv(j, off + cc) += s;
        }
      }
      for (std::size_t i = 0; i < L; ++i) {
        double rowdot = 0.0;
        for (std::size_t j = 0; j < L; ++j) rowdot += dP(i, j) * P(i, j);
        for (std::size_t j = 0; j < L; ++j) dP(i, j) = P(i, j) * (dP(i, j) - rowdot) * sc;
      }
      for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t cc = 0; cc < dh_; ++cc) {
          double sq = 0.0;
          for (std::size_t j = 0; j < L; ++j) sq += dP(i, j) * lc.k(j, off + cc);
          dq(i, off + cc) += sq;
        }
      }
      for (std::size_t j = 0; j < L; ++j) {
        for (std::size_t cc = 0; cc < dh_; ++cc) {
          double sk = 0.0;
          for (std::size_t i = 0; i < L; ++i) sk += dP(i, j) * lc.q(i, off + cc);
          dk(j, off + cc) += sk;
        }
      }
    }
    const std::span<const double> h1 = lc.ln1.y.data;
    kernels::matmul_at(h1, dq.data, std::span<double>(g(w.wq), c.d * c.d), c.d, L, c.d, true);
    kernels::matmul_at(h1, dk.data, std::span<double>(g(w.wk), c.d * c.d), c.d, L, c.d, true);
    kernels::matmul_at(h1, dv.data, std::span<double>(g(w.wv), c.d * c.d), c.d, L, c.d, true);
    Matrix dh1(L, c.d);
    kernels::matmul_bt(dq.data, std::span<const double>(ptr(w.wq), c.d * c.d), dh1.data, L, c.d, c.d, true);
    kernels::matmul_bt(dk.data, std::span<const double>(ptr(w.wk), c.d * c.d), dh1.data, L, c.d, c.d, true);
    kernels::matmul_bt(dv.data, std::span<const double>(ptr(w.wv), c.d * c.d), dh1.data, L, c.d, c.d, true);
    layer_norm_backward(dh1, lc.ln1, ptr(w.ln1_g), g(w.ln1_g), g(w.ln1_b), dx);
  }

  // Embedding lookups.
  for (std::size_t i = 0; i < L; ++i) {
    const auto tok = static_cast<std::size_t>(ex.corrupted[i]);
    for (std::size_t j = 0; j < c.d; ++j) {
      g(table_)[tok * c.d + j] += dx(i, j);
      g(positional_)[i * c.d + j] += dx(i, j);
    }
  }
  return loss;
}

double DenoiserModel::masked_loss(std::span<const MaskedExample> batch) const {
  const TokenId mask = mask_token();
  double loss = 0.0;
  std::size_t n_masked = 0;
  for (const auto& ex : batch) {
    Cache cache;
    run_forward(embed_tokens(ex.corrupted), cache);
    for (std::size_t i = 0; i < ex.clean.size(); ++i) {
      if (ex.corrupted[i] != mask) continue;
      const auto lr = cache.logits.row(i);
      const double mx = *std::max_element(lr.begin(), lr.end());
      double z = 0.0;
      for (double v : lr) z += std::exp(v - mx);
      loss += -(lr[static_cast<std::size_t>(ex.clean[i])] - mx - std::log(z));
      ++n_masked;
    }
  }
  return n_masked == 0 ? 0.0 : loss / static_cast<double>(n_masked);
}

double DenoiserModel::loss_and_grad(std::span<const MaskedExample> batch, std::span<double> grad,
                                    double loss_scale) const {
  if (grad.size() != params_.size()) throw Error("loss_and_grad: gradient buffer has wrong size");
  const TokenId mask = mask_token();
  std::size_t n_masked = 0;
  for (const auto& ex : batch) {
    if (ex.clean.size() != ex.corrupted.size()) throw Error("loss_and_grad: clean/corrupted length mismatch");
    for (std::size_t i = 0; i < ex.clean.size(); ++i) {
      if (ex.corrupted[i] == mask) {
        if (ex.clean[i] < 0 || static_cast<std::size_t>(ex.clean[i]) >= config_.V)
          throw Error("loss_and_grad: masked target is not a content token");
        ++n_masked;
      }
    }
  }
  std::fill(grad.begin(), grad.end(), 0.0);
  if (n_masked == 0) return 0.0;
  const double scale = loss_scale / static_cast<double>(n_masked);

  // One gradient slot per example, summed in example order afterwards so the
  // result does not depend on thread scheduling.
  const std::size_t n = batch.size();
  std::vector<std::vector<double>> slots(n);
  std::vector<double> losses(n, 0.0);
  bool failed = false;
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t e = 0; e < static_cast<std::ptrdiff_t>(n); ++e) {
    try {
      const auto& ex = batch[static_cast<std::size_t>(e)];
      Cache cache;
      run_forward(embed_tokens(ex.corrupted), cache);
      slots[static_cast<std::size_t>(e)].assign(params_.size(), 0.0);
      losses[static_cast<std::size_t>(e)] = backward_example(ex, cache, scale, slots[static_cast<std::size_t>(e)]);
    } catch (const std::exception& err) {
#pragma omp critical
      {
        failed = true;
        failure = err.what();
      }
    }
  }
  if (failed) throw Error(failure);
  double loss = 0.0;
  for (std::size_t e = 0; e < n; ++e) {
    loss += losses[e];
    for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += slots[e][p];
  }
  return loss_scale * loss / static_cast<double>(n_masked);
}

Matrix DenoiserModel::attention_map(std::size_t layer, std::size_t head, const Matrix& x_qk,
                                    const Matrix& x_v) const {
  const auto& c = config_;
  if (layer >= c.n_layers || head > c.n_heads) throw Error("attention_map: index out of range");
  if (x_qk.rows != x_v.rows || x_qk.cols != c.d || x_v.cols != c.d)
    throw Error("attention_map: input shape mismatch");
  const LayerIdx& w = layers_[layer];
  const Matrix q = linear(x_qk, ptr(w.wq), c.d);
  const Matrix k = linear(x_qk, ptr(w.wk), c.d);
  const Matrix v = linear(x_v, ptr(w.wv), c.d);
  std::vector<Matrix> probs;
  const Matrix heads = attend(q, k, v, c.n_heads, probs);
  if (head == c.n_heads) return linear(heads, ptr(w.wo), c.d);
  const std::size_t dh = c.d_head();
  Matrix out(heads.rows, dh);
  for (std::size_t i = 0; i < heads.rows; ++i)
    for (std::size_t j = 0; j < dh; ++j) out(i, j) = heads(i, head * dh + j);
  return out;
}

SpectralInputs DenoiserModel::spectral_inputs(std::size_t layer, std::size_t head) const {
  const auto& c = config_;
  if (layer >= c.n_layers || head >= c.n_heads) throw Error("spectral_inputs: index out of range");
  const LayerIdx& w = layers_[layer];
  const std::size_t dh = c.d_head();
  Matrix wq(c.d, dh), wk(c.d, dh), wv(c.d, dh);
  for (std::size_t r = 0; r < c.d; ++r) {
    for (std::size_t j = 0; j < dh; ++j) {
      wq(r, j) = ptr(w.wq)[r * c.d + head * dh + j];
      wk(r, j) = ptr(w.wk)[r * c.d + head * dh + j];
      wv(r, j) = ptr(w.wv)[r * c.d + head * dh + j];
    }
  }
  SpectralInputs s;
  s.qk = multiply(wq, transpose(wk));
  s.v = std::move(wv);
  return s;
}

MaskedExample corrupt_example(const TrainExample& ex, const NoiseSchedule& schedule,
                              TokenId mask_token, Rng& rng) {
  const std::size_t T = schedule.steps();
  const std::size_t t = 1 + uniform_index(rng, T);
  MaskedExample m;
  m.clean = ex.tokens;
  const std::size_t p = std::min(ex.prompt_len, ex.tokens.size());
  const std::span<const TokenId> tail(ex.tokens.data() + p, ex.tokens.size() - p);
  const TokenSeq noisy = forward_mask(tail, t, schedule, mask_token, rng);
  m.corrupted.assign(ex.tokens.begin(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(p));
  m.corrupted.insert(m.corrupted.end(), noisy.begin(), noisy.end());
  return m;
}

Trainer::Trainer(DenoiserModel& model, TrainOptions options)
    : model_(model), options_(options), velocity_(model.params().size(), 0.0),
      grad_(model.params().size(), 0.0) {}

double Trainer::step(std::span<const TrainExample> batch, const NoiseSchedule& schedule, Rng& rng) {
  if (batch.empty()) throw Error("Trainer::step: empty batch");
  std::vector<MaskedExample> corrupted;
  corrupted.reserve(batch.size());
  for (const auto& ex : batch) {
    if (ex.tokens.size() > model_.config().L_max) throw Error("Trainer::step: sequence longer than L_max");
    corrupted.push_back(corrupt_example(ex, schedule, model_.mask_token(), rng));
  }
  return step_masked(corrupted);
}

double Trainer::step_masked(std::span<const MaskedExample> batch) {
  if (batch.empty()) throw Error("Trainer::step: empty batch");
  const double loss = model_.loss_and_grad(batch, grad_);
  if (options_.grad_clip > 0.0) {
    double sq = 0.0;
    for (double g : grad_) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > options_.grad_clip) {
      const double s = options_.grad_clip / norm;
      for (double& g : grad_) g *= s;
    }
  }
  auto params = model_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity_[i] = options_.momentum * velocity_[i] + grad_[i];
    params[i] -= options_.learning_rate * velocity_[i];
  }
  return loss;
}

GradCheckReport grad_check(const DenoiserModel& model, std::span<const MaskedExample> batch, double h) {
  if (!(h > 0.0)) throw Error("grad_check: h must be positive");
  std::vector<double> analytic(model.params().size(), 0.0);
  model.loss_and_grad(batch, analytic);

  DenoiserModel probe = model;
  GradCheckReport report;
  for (const auto& t : model.tensors()) {
    double worst = 0.0;
    auto values = probe.view(t);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = probe.masked_loss(batch);
      values[i] = saved - h;
      const double down = probe.masked_loss(batch);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t.offset + i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report.per_tensor.emplace_back(t.name, worst);
    if (worst >= report.max_rel_error) {
      report.max_rel_error = worst;
      report.worst_tensor = t.name;
    }
  }
  return report;
}

}  // namespace lrd
