#pragma once

#include <vector>

#include "xvt/tensor.hpp"

namespace xvt {

// L visual tokens summarizing m source pixels. Every token is a convex
// combination of the pixel feature vectors: the per-token spatial weights are
// a softmax over the spatial axis. The per-layer attention maps are retained
// so tests can check convexity and weight normalization layer by layer.
template <typename T>
struct TokenSet {
  Tensor<T> tokens;                          // (N, L, f)
  std::vector<Tensor<T>> layer_attention;    // per layer, (N, m, L)
  std::vector<Tensor<T>> layer_tokens;       // per layer, (N, L, f)
};

// Three-layer tokenizer weights: a static first layer and two recurrent
// layers with distinct f x f maps.
template <typename T>
struct TokenizerWeights {
  Tensor<T> w_a;    // (f, L)
  Tensor<T> w_tr2;  // (f, f)
  Tensor<T> w_tr3;  // (f, f)
};

// Xavier-uniform initialization.
template <typename T>
TokenizerWeights<T> make_tokenizer_weights(int features, int tokens, Rng& rng);

// Layer 1: A = softmax_m(X W_A) per token column, T = A^T X.
// X is the flattened source feature map (N, m, f).
template <typename T>
TokenSet<T> tokenize_static(const Tensor<T>& x, const Tensor<T>& w_a);

// Layers 2/3: W_R = T_in W_TR, logits = X W_R^T, spatial softmax, T = A^T X.
template <typename T>
TokenSet<T> tokenize_recurrent(const Tensor<T>& x, const Tensor<T>& t_in, const Tensor<T>& w_tr);

// Full three-layer procedure; returns the final tokens with per-layer
// provenance.
template <typename T>
TokenSet<T> tokenize(const Tensor<T>& x, const TokenizerWeights<T>& weights);

}  // namespace xvt
