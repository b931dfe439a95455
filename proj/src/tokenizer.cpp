#include "xvt/tokenizer.hpp"

#include <cmath>

namespace xvt {

template <typename T>
TokenizerWeights<T> make_tokenizer_weights(int features, int tokens, Rng& rng) {
  TokenizerWeights<T> w;
  const double b1 = std::sqrt(6.0 / (features + tokens));
  const double b2 = std::sqrt(6.0 / (features + features));
  w.w_a = Tensor<T>::uniform({features, tokens}, -b1, b1, rng, true);
  w.w_tr2 = Tensor<T>::uniform({features, features}, -b2, b2, rng, true);
  w.w_tr3 = Tensor<T>::uniform({features, features}, -b2, b2, rng, true);
  return w;
}

namespace {

template <typename T>
void check_rows(const Tensor<T>& x) {
  if (x.rank() != 3) {
    throw DimensionError("tokenizer expects flattened source rows (N,m,f), got " +
                         shape_str(x.shape()));
  }
}

// Shared tail of both layer kinds: spatial softmax of the logits, then the
// attention-weighted sum of pixel features.
template <typename T>
TokenSet<T> from_logits(const Tensor<T>& x, const Tensor<T>& logits) {
  TokenSet<T> out;
  Tensor<T> attention = softmax(logits, 1);  // over the spatial axis m
  out.tokens = bmm_tn(attention, x);         // (N, L, f)
  out.layer_attention = {attention};
  out.layer_tokens = {out.tokens};
  return out;
}

}  // namespace

template <typename T>
TokenSet<T> tokenize_static(const Tensor<T>& x, const Tensor<T>& w_a) {
  check_rows(x);
  if (w_a.rank() != 2 || w_a.dim(0) != x.dim(2)) {
    throw DimensionError("tokenize_static: weights " + shape_str(w_a.shape()) +
                         " do not match source rows " + shape_str(x.shape()));
  }
  return from_logits(x, linear(x, w_a));
}

template <typename T>
TokenSet<T> tokenize_recurrent(const Tensor<T>& x, const Tensor<T>& t_in, const Tensor<T>& w_tr) {
  check_rows(x);
  if (t_in.rank() != 3 || t_in.dim(0) != x.dim(0) || t_in.dim(2) != x.dim(2)) {
    throw DimensionError("tokenize_recurrent: tokens " + shape_str(t_in.shape()) +
                         " do not match source rows " + shape_str(x.shape()));
  }
  if (w_tr.rank() != 2 || w_tr.dim(0) != x.dim(2) || w_tr.dim(1) != x.dim(2)) {
    throw DimensionError("tokenize_recurrent: recurrence weights " + shape_str(w_tr.shape()) +
                         " must be (f,f) for f=" + std::to_string(x.dim(2)));
  }
  Tensor<T> w_r = linear(t_in, w_tr);      // (N, L, f)
  Tensor<T> logits = bmm_nt(x, w_r);       // (N, m, L)
  return from_logits(x, logits);
}

template <typename T>
TokenSet<T> tokenize(const Tensor<T>& x, const TokenizerWeights<T>& weights) {
  TokenSet<T> layer1 = tokenize_static(x, weights.w_a);
  TokenSet<T> layer2 = tokenize_recurrent(x, layer1.tokens, weights.w_tr2);
  TokenSet<T> layer3 = tokenize_recurrent(x, layer2.tokens, weights.w_tr3);
  TokenSet<T> out;
  out.tokens = layer3.tokens;
  out.layer_attention = {layer1.layer_attention[0], layer2.layer_attention[0],
                         layer3.layer_attention[0]};
  out.layer_tokens = {layer1.tokens, layer2.tokens, layer3.tokens};
  return out;
}

#define XVT_INSTANTIATE_TOKENIZER(T)                                                       \
  template TokenizerWeights<T> make_tokenizer_weights(int, int, Rng&);                     \
  template TokenSet<T> tokenize_static(const Tensor<T>&, const Tensor<T>&);                \
  template TokenSet<T> tokenize_recurrent(const Tensor<T>&, const Tensor<T>&,              \
                                          const Tensor<T>&);                               \
  template TokenSet<T> tokenize(const Tensor<T>&, const TokenizerWeights<T>&);

XVT_INSTANTIATE_TOKENIZER(float)
XVT_INSTANTIATE_TOKENIZER(double)

#undef XVT_INSTANTIATE_TOKENIZER

}  // namespace xvt
