#include "xvt/attention.hpp"

#include <cmath>

namespace xvt {

namespace {

void check_config(const AttentionConfig& c) {
  if (c.heads < 1 || c.embed_dim < 1) {
    throw ConfigError("attention config requires heads >= 1 and embed_dim >= 1");
  }
  if (c.source_mode == SourceMode::kTokens && c.tokens < 1) {
    throw ConfigError("token source mode requires at least 1 token");
  }
}

template <typename T>
void check_feature_map(const Tensor<T>& x, const char* what) {
  if (x.rank() != 4) {
    throw DimensionError(std::string(what) + " must be a (N,C,H,W) feature map, got " +
                         shape_str(x.shape()));
  }
}

template <typename T>
void check_rows(const Tensor<T>& x, const char* what) {
  if (x.rank() != 3) {
    throw DimensionError(std::string(what) + " must be flattened rows (N,m,f), got " +
                         shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
AttentionWeights<T> make_attention_weights(int f_target, int f_source,
                                           const AttentionConfig& config, Rng& rng) {
  check_config(config);
  AttentionWeights<T> w;
  const double bq = std::sqrt(6.0 / f_target);
  const double bk = std::sqrt(6.0 / f_source);
  for (int h = 0; h < config.heads; ++h) {
    w.query_w.push_back(Tensor<T>::uniform({f_target, config.embed_dim}, -bq, bq, rng, true));
    w.query_b.push_back(Tensor<T>::zeros({config.embed_dim}, true));
    w.key_w.push_back(Tensor<T>::uniform({f_source, config.embed_dim}, -bk, bk, rng, true));
  }
  const double br = std::sqrt(6.0 / (config.heads * f_source));
  w.reduce_w = Tensor<T>::uniform({config.heads * f_source, f_source}, -br, br, rng, true);
  w.reduce_b = Tensor<T>::zeros({f_source}, true);
  const double bl = std::sqrt(6.0 / f_source);
  w.linear_w = Tensor<T>::uniform({f_source, f_target}, -bl, bl, rng, true);
  w.linear_b = Tensor<T>::zeros({f_target}, true);
  w.norm = make_layer_norm<T>(f_target);
  if (config.source_mode == SourceMode::kTokens) {
    w.tokenizer = make_tokenizer_weights<T>(f_source, config.tokens, rng);
  }
  w.dropout_rate = config.dropout_rate;
  return w;
}

template <typename T>
QKV<T> build_qkv(const Tensor<T>& target, const Tensor<T>& source_rows,
                 const AttentionWeights<T>& weights, int head) {
  check_feature_map(target, "build_qkv target");
  check_rows(source_rows, "build_qkv source");
  QKV<T> qkv;
  qkv.q = linear(flatten_rows(target), weights.query_w[static_cast<std::size_t>(head)],
                 weights.query_b[static_cast<std::size_t>(head)]);
  qkv.k = linear(source_rows, weights.key_w[static_cast<std::size_t>(head)]);
  qkv.v = source_rows;
  return qkv;
}

template <typename T>
Tensor<T> attention_logits(const Tensor<T>& q, const Tensor<T>& k) {
  check_rows(q, "attention query");
  check_rows(k, "attention key");
  const int d = q.dim(2);
  return scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
}

template <typename T>
Tensor<T> scaled_dot_attention(const QKV<T>& qkv) {
  Tensor<T> logits = attention_logits(qkv.q, qkv.k);
  Tensor<T> attention = softmax(logits, 2);
  return bmm(attention, qkv.v);
}

template <typename T>
Tensor<T> multi_head_cross_attention(const Tensor<T>& target, const Tensor<T>& source_rows,
                                     const AttentionConfig& config,
                                     const AttentionWeights<T>& weights) {
  check_config(config);
  check_feature_map(target, "attention target");
  check_rows(source_rows, "attention source");
  if (static_cast<int>(weights.query_w.size()) != config.heads) {
    throw ConfigError("attention weights hold " + std::to_string(weights.query_w.size()) +
                      " heads, config expects " + std::to_string(config.heads));
  }
  const int height = target.dim(2), width = target.dim(3);

  Tensor<T> target_rows = flatten_rows(target);
  std::vector<Tensor<T>> per_head;
  per_head.reserve(static_cast<std::size_t>(config.heads));
  for (int h = 0; h < config.heads; ++h) {
    QKV<T> qkv;
    qkv.q = linear(target_rows, weights.query_w[static_cast<std::size_t>(h)],
                   weights.query_b[static_cast<std::size_t>(h)]);
    qkv.k = linear(source_rows, weights.key_w[static_cast<std::size_t>(h)]);
    qkv.v = source_rows;
    per_head.push_back(scaled_dot_attention(qkv));  // (N, n, f_s)
  }
  Tensor<T> merged = config.heads == 1 ? per_head[0] : concat(per_head, 2);  // (N, n, h*f_s)
  Tensor<T> reduced = linear(merged, weights.reduce_w, weights.reduce_b);    // (N, n, f_s)
  return unflatten_rows(reduced, height, width);
}

template <typename T>
Tensor<T> residual_combine(const Tensor<T>& x, const Tensor<T>& a,
                           const AttentionWeights<T>& weights, bool training, Rng& rng) {
  check_feature_map(x, "residual_combine x");
  check_feature_map(a, "residual_combine a");
  if (x.dim(2) != a.dim(2) || x.dim(3) != a.dim(3) || x.dim(0) != a.dim(0)) {
    throw DimensionError("residual_combine: spatial/batch shapes differ, " +
                         shape_str(x.shape()) + " vs " + shape_str(a.shape()));
  }
  const int height = x.dim(2), width = x.dim(3);
  Tensor<T> projected = linear(flatten_rows(a), weights.linear_w, weights.linear_b);
  Tensor<T> dropped = dropout(projected, weights.dropout_rate, training, rng);
  Tensor<T> combined = add(flatten_rows(x), dropped);
  return unflatten_rows(layer_norm_rows(combined, weights.norm), height, width);
}

template <typename T>
Tensor<T> CrossViewModule<T>::apply(const Tensor<T>& target, const Tensor<T>& source,
                                    bool training, Rng& rng) {
  check_feature_map(source, "cross-view source");
  Tensor<T> source_rows = flatten_rows(source);
  if (config.source_mode == SourceMode::kTokens) {
    source_rows = tokenize(source_rows, *weights.tokenizer).tokens;
  }
  Tensor<T> a = multi_head_cross_attention(target, source_rows, config, weights);
  return residual_combine(target, a, weights, training, rng);
}

template <typename T>
CrossViewModule<T> make_cross_view_module(int f_target, int f_source,
                                          const AttentionConfig& config, Rng& rng) {
  CrossViewModule<T> m;
  m.config = config;
  m.weights = make_attention_weights<T>(f_target, f_source, config, rng);
  return m;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> bidirectional_apply(const Tensor<T>& fm_a, const Tensor<T>& fm_b,
                                                    CrossViewModule<T>& module_to_a,
                                                    CrossViewModule<T>& module_to_b, bool training,
                                                    Rng& rng) {
  Tensor<T> y_a = module_to_a.apply(fm_a, fm_b, training, rng);
  Tensor<T> y_b = module_to_b.apply(fm_b, fm_a, training, rng);
  return {y_a, y_b};
}

#define XVT_INSTANTIATE_ATTENTION(T)                                                      \
  template AttentionWeights<T> make_attention_weights(int, int, const AttentionConfig&,   \
                                                      Rng&);                              \
  template QKV<T> build_qkv(const Tensor<T>&, const Tensor<T>&, const AttentionWeights<T>&, \
                            int);                                                         \
  template Tensor<T> attention_logits(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> scaled_dot_attention(const QKV<T>&);                                 \
  template Tensor<T> multi_head_cross_attention(const Tensor<T>&, const Tensor<T>&,       \
                                                const AttentionConfig&,                   \
                                                const AttentionWeights<T>&);              \
  template Tensor<T> residual_combine(const Tensor<T>&, const Tensor<T>&,                 \
                                      const AttentionWeights<T>&, bool, Rng&);            \
  template struct CrossViewModule<T>;                                                     \
  template CrossViewModule<T> make_cross_view_module(int, int, const AttentionConfig&,    \
                                                     Rng&);                               \
  template std::pair<Tensor<T>, Tensor<T>> bidirectional_apply(                           \
      const Tensor<T>&, const Tensor<T>&, CrossViewModule<T>&, CrossViewModule<T>&, bool, \
      Rng&);

XVT_INSTANTIATE_ATTENTION(float)
XVT_INSTANTIATE_ATTENTION(double)

#undef XVT_INSTANTIATE_ATTENTION

}  // namespace xvt
