#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xvt/data.hpp"
#include "xvt/model.hpp"
#include "xvt/tensor.hpp"

namespace xvt {

// Linear warm-up to lr_max over the first warmup_epochs, then cosine
// annealing down to lr_min at total_epochs. Continuous in the epoch fraction.
struct ScheduleSpec {
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  double total_epochs = 40;
  double warmup_epochs = 4;
};

double lr_at(double t, const ScheduleSpec& spec);

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// Bias-corrected Adam. Moments are allocated on first use and keyed by the
// stable parameter order.
template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

template <typename T>
void adam_step(std::vector<NamedParam<T>>& params, AdamState<T>& state, double lr,
               double weight_decay = 0.0, double grad_clip = 0.0);

// Class-weighted binary cross-entropy of sigmoid(logits), computed in logit
// space so confident predictions never produce infinities. Mean over the
// batch; class_weights = {w_negative, w_positive}.
template <typename T>
Tensor<T> weighted_bce(const Tensor<T>& logits, const std::vector<int>& labels,
                       const std::array<double, 2>& class_weights);

// Three-class cross-entropy over (N, tasks, 3) logits with per-entry label
// states (row-major N x tasks). Unknown entries are excluded: their logits
// get exactly zero gradient. Per-task mean over known samples, averaged over
// tasks that have any known sample.
template <typename T>
Tensor<T> masked_multitask_ce(const Tensor<T>& logits, const std::vector<LabelState>& states);

// Inverse class frequency, normalized so the sample-average weight is 1.
std::array<double, 2> inverse_frequency_weights(const std::vector<int>& labels);

// Mann-Whitney AUC with half credit for ties; exact integer pair counting.
// Throws MetricError unless both classes are present.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

enum class SelectionRule { kFinalEpoch, kPerTaskBest };

struct TrainConfig {
  ScheduleSpec schedule;
  int batch_size = 32;
  double weight_decay = 0.0;  // off by default
  double grad_clip = 0.0;     // off by default
  SelectionRule selection = SelectionRule::kFinalEpoch;
  int checkpoint_every = 0;  // extra checkpoints every k epochs; final always
  bool augment = false;
  AugmentParams augment_params;
  int view_index = 0;  // which view a single-view model trains on
  // Stop after this many epochs while keeping the schedule defined by
  // schedule.total_epochs; a later resume continues to the full run.
  int run_until = -1;  // -1 = total_epochs
};

struct TrainSummary {
  int epochs_done = 0;
  // task -> AUC under the configured selection rule, on the test fold when
  // present, otherwise on the validation fold.
  std::map<std::string, double> selected_auc;
  std::map<std::string, int> selected_epoch;
  std::map<std::string, double> final_val_auc;
};

// Fold convention: 0 = train, 1 = validation, 2 = test.
// Writes metrics.csv (columns epoch,split,task,metric,value) and
// checkpoint.xvck under out_dir; set resume=true to continue from an
// existing checkpoint.
TrainSummary train_model(Model<float>& model, const DatasetContainer& data,
                         const TrainConfig& config, std::uint64_t seed,
                         const std::string& out_dir, bool resume = false);

// Per-task AUC (and mean loss) of a model on one fold.
struct EvalResult {
  std::map<std::string, double> auc;
  double loss = 0.0;
  std::int64_t samples = 0;
};

EvalResult evaluate(Model<float>& model, const DatasetContainer& data, int fold,
                    const std::array<double, 2>& class_weights, int batch_size = 32);

}  // namespace xvt
