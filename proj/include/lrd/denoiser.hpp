#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

/**
 * @file denoiser.hpp
 * @brief Small bidirectional transformer denoiser with hand-written gradients.
 *
 * The model maps a sequence of d-dimensional input vectors (token embeddings,
 * the MASK embedding, or convex mixtures of them, each plus a learned
 * positional vector) to one categorical distribution over the V content
 * tokens per position. MASK (id V) has an embedding row but is never
 * predicted.
 *
 * Block layout (pre-norm):
 *
 *   h  = LN1(x);   x += MHA(h) Wo
 *   h2 = LN2(x);   x += gelu(h2 W1 + b1) W2 + b2
 *   logits = LNf(x) Wout + bout
 *
 * All parameters live in one flat vector; named tensors are views into it.
 */

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrd/common.hpp"
#include "lrd/matrix.hpp"
#include "lrd/probcore.hpp"

namespace lrd {

struct DenoiserConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d = 32;
  std::size_t d_ff = 64;
  std::size_t L_max = 16;
  std::size_t V = 12;  // content tokens; MASK is id V

  /// Std-dev of token-row initialisation.
  double token_init_scale = 1.0;
  /// MASK-row init scale relative to token rows.
  double mask_init_ratio = 0.38;

  std::size_t d_head() const { return d / n_heads; }
  /// Throws Error unless all counts >= 1 and n_heads divides d.
  void validate() const;
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Non-owning view of the (V + 1) x d embedding table; row V is MASK.
class EmbeddingTable {
 public:
  EmbeddingTable(std::span<const double> rows, std::size_t vocab, std::size_t dim);

  std::size_t vocab() const { return vocab_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::size_t v) const { return rows_.subspan(v * dim_, dim_); }
  std::span<const double> mask_row() const { return row(vocab_); }

 private:
  std::span<const double> rows_;
  std::size_t vocab_;
  std::size_t dim_;
};

struct ParamTensor {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Per-position categoricals over V (MASK excluded) and the raw logits.
struct DenoiserOutput {
  std::vector<Categorical> dists;
  Matrix logits;
};

/// A training example after corruption: positions holding MASK in
/// `corrupted` contribute cross-entropy against `clean`.
struct MaskedExample {
  TokenSeq clean;
  TokenSeq corrupted;
};

/// The two matrices entering the local attention-Lipschitz estimate.
struct SpectralInputs {
  Matrix qk;  // W_Q,h W_K,h^T  (d x d)
  Matrix v;   // W_V,h          (d x d_head)
};

/// What a sampler needs from a denoiser: the embedding table, positional
/// vectors and a forward pass.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual EmbeddingTable table() const = 0;
  virtual std::size_t max_length() const = 0;
  /// Adds positional vectors to pre-built content vectors in place.
  virtual void add_positional(Matrix& content) const = 0;
  /// Rows of `embeddings` already include the positional vector.
  virtual DenoiserOutput forward(const Matrix& embeddings) const = 0;
};

class DenoiserModel final : public Denoiser {
 public:
  /// Random initialisation. Head weights and biases start at zero, so an
  /// untrained model predicts the uniform distribution.
  static DenoiserModel init(const DenoiserConfig& config, Rng& rng);
  /// Layout only; all parameters zero (gains included).
  static DenoiserModel zeros(const DenoiserConfig& config);

  const DenoiserConfig& config() const { return config_; }
  TokenId mask_token() const { return static_cast<TokenId>(config_.V); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }
  const ParamTensor& tensor(std::string_view name) const;
  std::span<double> view(const ParamTensor& t) { return std::span<double>(params_).subspan(t.offset, t.size()); }
  std::span<const double> view(const ParamTensor& t) const {
    return std::span<const double>(params_).subspan(t.offset, t.size());
  }

  EmbeddingTable table() const override;
  std::size_t max_length() const override { return config_.L_max; }
  std::span<const double> positional_row(std::size_t pos) const;

  /// Table row lookup plus positional vector. Ids in [0, V].
  Matrix embed_tokens(std::span<const TokenId> tokens) const;
  /// Adds positional vectors to pre-built content vectors in place.
  void add_positional(Matrix& content) const override;

  /// Full forward pass. Rows of `embeddings` must already include the
  /// positional vector. Throws Error if length exceeds L_max.
  DenoiserOutput forward(const Matrix& embeddings) const override;

  /// Mean cross-entropy over masked positions of the batch. 0 when nothing
  /// is masked.
  double masked_loss(std::span<const MaskedExample> batch) const;
  /// Same loss times `loss_scale`; writes d(scaled loss)/d(params) to grad.
  double loss_and_grad(std::span<const MaskedExample> batch, std::span<double> grad,
                       double loss_scale = 1.0) const;

  /// Single self-attention map of `layer` with no layer norm or residual.
  /// Queries/keys come from x_qk and values from x_v. head < n_heads
  /// returns that head's (L x d_head) output; head == n_heads returns the
  /// concatenated heads projected by W_O (L x d).
  Matrix attention_map(std::size_t layer, std::size_t head, const Matrix& x_qk,
                       const Matrix& x_v) const;

  SpectralInputs spectral_inputs(std::size_t layer, std::size_t head) const;

 private:
  struct LayerIdx {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Cache;

  DenoiserModel() = default;
  void build_layout();
  std::size_t add_tensor(const std::string& name, std::size_t rows, std::size_t cols);
  const double* ptr(std::size_t tensor_index) const { return params_.data() + tensors_[tensor_index].offset; }

  void run_forward(const Matrix& x0, Cache& cache) const;
  double backward_example(const MaskedExample& ex, const Cache& cache, double scale,
                          std::span<double> grad) const;

  DenoiserConfig config_;
  std::vector<double> params_;
  std::vector<ParamTensor> tensors_;
  std::size_t table_ = 0, positional_ = 0, lnf_g_ = 0, lnf_b_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<LayerIdx> layers_;

};

struct TrainOptions {
  double learning_rate = 0.05;
  double momentum = 0.9;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
};

/// Clean sequence with a protected (never masked) prompt prefix.
struct TrainExample {
  TokenSeq tokens;
  std::size_t prompt_len = 0;
};

/// Momentum-SGD trainer with exclusive access to the model.
class Trainer {
 public:
  Trainer(DenoiserModel& model, TrainOptions options);

  /// Samples t uniformly per example, corrupts non-prompt positions with
  /// forward_mask, takes one optimiser step on the masked cross-entropy.
  /// Returns the pre-update loss. Throws Error on an empty batch.
  double step(std::span<const TrainExample> batch, const NoiseSchedule& schedule, Rng& rng);

  /// One optimiser step on an already-corrupted batch.
  double step_masked(std::span<const MaskedExample> batch);

 private:
  DenoiserModel& model_;
  TrainOptions options_;
  std::vector<double> velocity_;
  std::vector<double> grad_;
};

/// Corrupts one example the way Trainer::step does.
MaskedExample corrupt_example(const TrainExample& ex, const NoiseSchedule& schedule,
                              TokenId mask_token, Rng& rng);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::vector<std::pair<std::string, double>> per_tensor;  // max rel error per tensor
};

/// Analytic gradient vs central differences (f(p+h) - f(p-h)) / 2h for every
/// parameter. Relative error |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const DenoiserModel& model, std::span<const MaskedExample> batch,
                           double h);

/// Plain-text checkpoint: `lrd-ckpt v1`, then per tensor a header line
/// `name dtype dims...` followed by one line of values per row.
void save_checkpoint(const DenoiserModel& model, std::ostream& out);
void save_checkpoint(const DenoiserModel& model, const std::string& path);
DenoiserModel load_checkpoint(std::istream& in);
DenoiserModel load_checkpoint(const std::string& path);

}  // namespace lrd
