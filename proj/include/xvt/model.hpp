#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xvt/attention.hpp"
#include "xvt/layers.hpp"

namespace xvt {

enum class Variant { kSingleView, kLateJoin, kCrossViewPixel, kCrossViewToken };
enum class HeadType { kBinarySigmoid, kMultitask3 };

struct ModelSpec {
  Variant variant = Variant::kLateJoin;
  double width_mult = 0.125;
  int input_channels = 1;
  HeadType head = HeadType::kBinarySigmoid;
  int tasks = 1;                // multitask head only
  AttentionConfig attention;    // cross-view variants only
  bool share_branches = false;  // ablation: share backbone weights across views
  int placement = 3;            // cross-view module sits after this block (1..3)

  bool is_cross_view() const {
    return variant == Variant::kCrossViewPixel || variant == Variant::kCrossViewToken;
  }
  int view_count() const { return variant == Variant::kSingleView ? 1 : 2; }
  int head_outputs() const { return head == HeadType::kBinarySigmoid ? 1 : 3 * tasks; }
};

// A built network: view-specific convolution branches, an optional pair of
// cross-view modules between the configured block and the next one, global
// average pooling, concatenation of the per-view vectors, and a single fully
// connected output layer.
template <typename T>
struct Model {
  ModelSpec spec;
  std::vector<Backbone<T>> branches;  // one per view, or one shared
  std::optional<CrossViewModule<T>> module_to_a, module_to_b;
  Tensor<T> fc_w, fc_b;

  Backbone<T>& branch(int view) { return branches[spec.share_branches ? 0 : static_cast<std::size_t>(view)]; }

  // Logits: (N,1) for the binary head, (N, tasks*3) for the multitask head.
  Tensor<T> forward_logits(const std::vector<Tensor<T>>& views, bool training, Rng& rng);

  using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;
  void visit_params(const ParamVisitor& visit);  // trainable parameters
  void visit_state(const ParamVisitor& visit);   // parameters + running stats
  std::int64_t param_count();
};

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed);

// Test-time rule for the three-class head: drop the uncertain logit and
// softmax over {negative, positive} only, returning P(positive).
double infer_binary_from_3class(double neg_logit, double unc_logit, double pos_logit);

double sigmoid(double z);

// Per-sample probabilities derived from logits.
struct Prediction {
  // Binary head: one score per sample. Multitask head: row-major per
  // (sample, task) scores derived with infer_binary_from_3class.
  std::vector<double> binary_scores;
  // Multitask head only: (sample, task, class) softmax probabilities.
  std::vector<double> class_probs;
};

template <typename T>
Prediction predict(const Tensor<T>& logits, const ModelSpec& spec);

extern template struct Model<float>;
extern template struct Model<double>;

}  // namespace xvt
