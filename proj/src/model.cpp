#include "xvt/model.hpp"

#include <cmath>

namespace xvt {

namespace {

void validate_spec(const ModelSpec& spec) {
  if (spec.width_mult <= 0) throw ConfigError("model: width multiplier must be positive");
  if (spec.input_channels < 1) throw ConfigError("model: input channels must be >= 1");
  if (spec.head == HeadType::kMultitask3 && spec.tasks < 1) {
    throw ConfigError("model: multitask head requires tasks >= 1");
  }
  if (spec.placement < 1 || spec.placement > 3) {
    throw ConfigError("model: cross-view placement must insert after block 1..3, got " +
                      std::to_string(spec.placement));
  }
}

}  // namespace

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  Rng rng = Rng::derive(seed, {stream::kInit});

  Model<T> m;
  m.spec = spec;
  const int branch_count = spec.view_count() == 1 || spec.share_branches ? 1 : 2;
  for (int b = 0; b < branch_count; ++b) {
    m.branches.push_back(make_backbone<T>(spec.input_channels, spec.width_mult, rng));
  }

  if (spec.is_cross_view()) {
    AttentionConfig att = spec.attention;
    att.source_mode =
        spec.variant == Variant::kCrossViewToken ? SourceMode::kTokens : SourceMode::kPixels;
    const int f = m.branches[0].out_channels_after(spec.placement);
    m.module_to_a = make_cross_view_module<T>(f, f, att, rng);
    m.module_to_b = make_cross_view_module<T>(f, f, att, rng);
  }

  const int fc_in = spec.view_count() * m.branches[0].out_channels_after(4);
  const int fc_out = spec.head_outputs();
  const double bound = 1.0 / std::sqrt(static_cast<double>(fc_in));
  m.fc_w = Tensor<T>::uniform({fc_in, fc_out}, -bound, bound, rng, true);
  m.fc_b = Tensor<T>::zeros({fc_out}, true);
  return m;
}

template <typename T>
Tensor<T> Model<T>::forward_logits(const std::vector<Tensor<T>>& views, bool training, Rng& rng) {
  if (static_cast<int>(views.size()) != spec.view_count()) {
    throw ContractError("model expects " + std::to_string(spec.view_count()) + " views, got " +
                        std::to_string(views.size()));
  }

  std::vector<Tensor<T>> feats;
  for (std::size_t v = 0; v < views.size(); ++v) {
    feats.push_back(
        branch(static_cast<int>(v)).forward_through(views[v], spec.is_cross_view() ? spec.placement : 4, training));
  }

  if (spec.is_cross_view()) {
    auto [y_a, y_b] =
        bidirectional_apply(feats[0], feats[1], *module_to_a, *module_to_b, training, rng);
    feats = {y_a, y_b};
    for (std::size_t v = 0; v < feats.size(); ++v) {
      for (int k = spec.placement + 1; k <= 4; ++k) {
        feats[v] = branch(static_cast<int>(v)).block(k, feats[v], training);
      }
    }
  }

  std::vector<Tensor<T>> pooled;
  for (auto& f : feats) pooled.push_back(global_avg_pool(f));
  Tensor<T> joined = pooled.size() == 1 ? pooled[0] : concat(pooled, 1);
  return linear(joined, fc_w, fc_b);
}

namespace {

template <typename T>
void visit_conv(const std::string& prefix, Conv2dParams<T>& c,
                const typename Model<T>::ParamVisitor& visit) {
  visit(prefix + ".weight", c.weight);
  if (c.bias.defined()) visit(prefix + ".bias", c.bias);
}

template <typename T>
void visit_norm(const std::string& prefix, NormParams<T>& nrm,
                const typename Model<T>::ParamVisitor& visit, bool with_state) {
  visit(prefix + ".gamma", nrm.gamma);
  visit(prefix + ".beta", nrm.beta);
  if (with_state && nrm.mode == NormMode::kBatchNorm) {
    visit(prefix + ".running_mean", nrm.running_mean);
    visit(prefix + ".running_var", nrm.running_var);
  }
}

template <typename T>
void visit_block(const std::string& prefix, ResnetBlock<T>& b,
                 const typename Model<T>::ParamVisitor& visit, bool with_state) {
  visit_conv<T>(prefix + ".conv1", b.conv1, visit);
  visit_norm<T>(prefix + ".bn1", b.bn1, visit, with_state);
  visit_conv<T>(prefix + ".conv2", b.conv2, visit);
  visit_norm<T>(prefix + ".bn2", b.bn2, visit, with_state);
  if (b.shortcut) visit_conv<T>(prefix + ".shortcut", *b.shortcut, visit);
}

template <typename T>
void visit_backbone(const std::string& prefix, Backbone<T>& bb,
                    const typename Model<T>::ParamVisitor& visit, bool with_state) {
  visit_conv<T>(prefix + ".conv1", bb.conv1, visit);
  visit_norm<T>(prefix + ".bn1", bb.bn1, visit, with_state);
  for (int k = 0; k < 4; ++k) {
    visit_block<T>(prefix + ".block" + std::to_string(k + 1), bb.blocks[static_cast<std::size_t>(k)],
                   visit, with_state);
  }
}

template <typename T>
void visit_module(const std::string& prefix, CrossViewModule<T>& m,
                  const typename Model<T>::ParamVisitor& visit) {
  AttentionWeights<T>& w = m.weights;
  for (std::size_t h = 0; h < w.query_w.size(); ++h) {
    const std::string head = prefix + ".head" + std::to_string(h);
    visit(head + ".query.weight", w.query_w[h]);
    visit(head + ".query.bias", w.query_b[h]);
    visit(head + ".key.weight", w.key_w[h]);
  }
  visit(prefix + ".reduce.weight", w.reduce_w);
  visit(prefix + ".reduce.bias", w.reduce_b);
  visit(prefix + ".linear.weight", w.linear_w);
  visit(prefix + ".linear.bias", w.linear_b);
  visit(prefix + ".norm.gamma", w.norm.gamma);
  visit(prefix + ".norm.beta", w.norm.beta);
  if (w.tokenizer) {
    visit(prefix + ".tokenizer.w_a", w.tokenizer->w_a);
    visit(prefix + ".tokenizer.w_tr2", w.tokenizer->w_tr2);
    visit(prefix + ".tokenizer.w_tr3", w.tokenizer->w_tr3);
  }
}

template <typename T>
void visit_all(Model<T>& m, const typename Model<T>::ParamVisitor& visit, bool with_state) {
  for (std::size_t b = 0; b < m.branches.size(); ++b) {
    visit_backbone<T>("branch" + std::to_string(b), m.branches[b], visit, with_state);
  }
  if (m.module_to_a) visit_module<T>("to_a", *m.module_to_a, visit);
  if (m.module_to_b) visit_module<T>("to_b", *m.module_to_b, visit);
  visit("fc.weight", m.fc_w);
  visit("fc.bias", m.fc_b);
}

}  // namespace

template <typename T>
void Model<T>::visit_params(const ParamVisitor& visit) {
  visit_all(*this, visit, false);
}

template <typename T>
void Model<T>::visit_state(const ParamVisitor& visit) {
  visit_all(*this, visit, true);
}

template <typename T>
std::int64_t Model<T>::param_count() {
  std::int64_t n = 0;
  visit_params([&n](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double infer_binary_from_3class(double neg_logit, double /*unc_logit*/, double pos_logit) {
  return sigmoid(pos_logit - neg_logit);
}

template <typename T>
Prediction predict(const Tensor<T>& logits, const ModelSpec& spec) {
  Prediction p;
  const int n = logits.dim(0);
  if (spec.head == HeadType::kBinarySigmoid) {
    if (logits.rank() != 2 || logits.dim(1) != 1) {
      throw DimensionError("binary head expects (N,1) logits, got " + shape_str(logits.shape()));
    }
    p.binary_scores.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p.binary_scores.push_back(sigmoid(logits.at(i, 0)));
    return p;
  }
  if (logits.rank() != 2 || logits.dim(1) != 3 * spec.tasks) {
    throw DimensionError("multitask head expects (N,3*tasks) logits, got " +
                         shape_str(logits.shape()));
  }
  p.binary_scores.reserve(static_cast<std::size_t>(n) * spec.tasks);
  p.class_probs.reserve(static_cast<std::size_t>(n) * spec.tasks * 3);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < spec.tasks; ++t) {
      const double z0 = logits.at(i, 3 * t);
      const double z1 = logits.at(i, 3 * t + 1);
      const double z2 = logits.at(i, 3 * t + 2);
      const double mx = std::max(z0, std::max(z1, z2));
      const double e0 = std::exp(z0 - mx), e1 = std::exp(z1 - mx), e2 = std::exp(z2 - mx);
      const double denom = e0 + e1 + e2;
      p.class_probs.push_back(e0 / denom);
      p.class_probs.push_back(e1 / denom);
      p.class_probs.push_back(e2 / denom);
      p.binary_scores.push_back(infer_binary_from_3class(z0, z1, z2));
    }
  }
  return p;
}

#define XVT_INSTANTIATE_MODEL(T)                                 \
  template struct Model<T>;                                      \
  template Model<T> build_model(const ModelSpec&, std::uint64_t); \
  template Prediction predict(const Tensor<T>&, const ModelSpec&);

XVT_INSTANTIATE_MODEL(float)
XVT_INSTANTIATE_MODEL(double)

#undef XVT_INSTANTIATE_MODEL

}  // namespace xvt
