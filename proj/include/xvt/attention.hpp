#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "xvt/layers.hpp"
#include "xvt/tensor.hpp"
#include "xvt/tokenizer.hpp"

namespace xvt {

// Where the attention keys/values come from: every source pixel, or L visual
// tokens computed from the source pixels.
enum class SourceMode { kPixels, kTokens };

struct AttentionConfig {
  int heads = 4;
  int embed_dim = 32;  // per-head embedding size d
  SourceMode source_mode = SourceMode::kPixels;
  int tokens = 16;     // token count L (token mode)
  double dropout_rate = 0.1;
};

// Weights of one attention direction. Query embeddings belong to the target
// view, key embeddings to the source view; they are never shared across
// directions. The value side is the raw (unembedded) source content.
// The key embedding carries no bias: a constant added to every key shifts
// each logit row by a per-query constant, which the softmax cancels exactly.
template <typename T>
struct AttentionWeights {
  std::vector<Tensor<T>> query_w, query_b;  // per head: (f_t, d), (d)
  std::vector<Tensor<T>> key_w;             // per head: (f_s, d)
  Tensor<T> reduce_w, reduce_b;             // (h*f_s, f_s), (f_s)
  Tensor<T> linear_w, linear_b;             // (f_s, f_t), (f_t)
  NormParams<T> norm;                       // layer norm over f_t channels
  std::optional<TokenizerWeights<T>> tokenizer;  // token mode only
  double dropout_rate = 0.1;
};

template <typename T>
AttentionWeights<T> make_attention_weights(int f_target, int f_source,
                                           const AttentionConfig& config, Rng& rng);

// One head's attention inputs. Q comes from the target's embedded pixels,
// K from the source's embedded pixels or tokens, V is the raw source content.
template <typename T>
struct QKV {
  Tensor<T> q;  // (N, n, d)
  Tensor<T> k;  // (N, m, d)
  Tensor<T> v;  // (N, m, f_s)
};

// Builds one head's Q/K/V from a (N,C,H,W) target map and flattened source
// rows (pixels or tokens, (N, m, f_s)).
template <typename T>
QKV<T> build_qkv(const Tensor<T>& target, const Tensor<T>& source_rows,
                 const AttentionWeights<T>& weights, int head);

// Scaled dot-product logits Q K^T / sqrt(d), d = embedding size.
template <typename T>
Tensor<T> attention_logits(const Tensor<T>& q, const Tensor<T>& k);

// softmax_rows(Q K^T / sqrt(d)) V; every output row is a convex combination
// of V's rows.
template <typename T>
Tensor<T> scaled_dot_attention(const QKV<T>& qkv);

// Runs every head, concatenates the h*f_s per-head features in head order,
// and reduces them back to f_s channels on the target's spatial layout.
template <typename T>
Tensor<T> multi_head_cross_attention(const Tensor<T>& target, const Tensor<T>& source_rows,
                                     const AttentionConfig& config,
                                     const AttentionWeights<T>& weights);

// y = LayerNorm(x + Dropout(Linear(a))), with Linear a 1x1 convolution from
// the attention features to x's channel space. Eval mode makes Dropout the
// identity.
template <typename T>
Tensor<T> residual_combine(const Tensor<T>& x, const Tensor<T>& a,
                           const AttentionWeights<T>& weights, bool training, Rng& rng);

// One direction of the cross-view transformer: tokenize the source if
// configured, attend, and combine into the target.
template <typename T>
struct CrossViewModule {
  AttentionConfig config;
  AttentionWeights<T> weights;

  Tensor<T> apply(const Tensor<T>& target, const Tensor<T>& source, bool training, Rng& rng);
};

template <typename T>
CrossViewModule<T> make_cross_view_module(int f_target, int f_source,
                                          const AttentionConfig& config, Rng& rng);

// Applies two independent modules in opposite directions. Both directions
// read the pre-transformer inputs; neither sees the other's output.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> bidirectional_apply(const Tensor<T>& fm_a, const Tensor<T>& fm_b,
                                                    CrossViewModule<T>& module_to_a,
                                                    CrossViewModule<T>& module_to_b, bool training,
                                                    Rng& rng);

}  // namespace xvt
