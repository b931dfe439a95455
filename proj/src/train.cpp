#include "xvt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "xvt/checkpoint.hpp"

namespace xvt {

// ---- schedule ----

double lr_at(double t, const ScheduleSpec& spec) {
  if (!(spec.warmup_epochs > 0) || !(spec.warmup_epochs < spec.total_epochs)) {
    throw ConfigError("schedule requires 0 < warmup < total epochs");
  }
  if (!(spec.lr_min < spec.lr_max)) throw ConfigError("schedule requires lr_min < lr_max");
  if (t < 0 || t > spec.total_epochs) {
    throw ContractError("lr_at: t=" + std::to_string(t) + " outside [0, total]");
  }
  if (t < spec.warmup_epochs) return spec.lr_max * (t / spec.warmup_epochs);
  const double u = (t - spec.warmup_epochs) / (spec.total_epochs - spec.warmup_epochs);
  const double w = 0.5 * (1.0 + std::cos(M_PI * u));
  return w * spec.lr_max + (1.0 - w) * spec.lr_min;  // exact at both endpoints
}

// ---- Adam ----

template <typename T>
void adam_step(std::vector<NamedParam<T>>& params, AdamState<T>& state, double lr,
               double weight_decay, double grad_clip) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<std::size_t>(params[i].tensor.size()), T(0));
      state.v[i].assign(static_cast<std::size_t>(params[i].tensor.size()), T(0));
    }
  }

  // materialize gradients (weight decay included), validate finiteness
  std::vector<std::vector<T>> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i].tensor;
    grads[i].assign(static_cast<std::size_t>(p.size()), T(0));
    if (p.has_grad()) {
      const auto& g = p.grad();
      for (std::size_t j = 0; j < grads[i].size(); ++j) {
        if (!std::isfinite(static_cast<double>(g[j]))) {
          throw NumericError("non-finite gradient in parameter '" + params[i].name + "'");
        }
        grads[i][j] = g[j];
      }
    }
    if (weight_decay != 0.0) {
      const auto& v = p.values();
      for (std::size_t j = 0; j < grads[i].size(); ++j) {
        grads[i][j] += static_cast<T>(weight_decay) * v[j];
      }
    }
  }
  if (grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads) {
      for (T v : g) sq += static_cast<double>(v) * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > grad_clip) {
      const T factor = static_cast<T>(grad_clip / norm);
      for (auto& g : grads) {
        for (T& v : g) v *= factor;
      }
    }
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& vals = params[i].tensor.values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double g = grads[i][j];
      m[j] = static_cast<T>(state.beta1 * m[j] + (1.0 - state.beta1) * g);
      v[j] = static_cast<T>(state.beta2 * v[j] + (1.0 - state.beta2) * g * g);
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      vals[j] = static_cast<T>(vals[j] - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

// ---- losses ----

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
NodePtr<T> make_loss_node(T value, NodePtr<T> parent, const char* op) {
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = {1};
  n->values = std::make_shared<std::vector<T>>(std::vector<T>{value});
  n->parents = {std::move(parent)};
  n->op = op;
  n->requires_grad = n->parents[0]->requires_grad;
  return n;
}

}  // namespace

template <typename T>
Tensor<T> weighted_bce(const Tensor<T>& logits, const std::vector<int>& labels,
                       const std::array<double, 2>& class_weights) {
  const std::int64_t n = logits.size();
  if (logits.rank() > 2 || (logits.rank() == 2 && logits.dim(1) != 1)) {
    throw DimensionError("weighted_bce expects (N) or (N,1) logits, got " +
                         shape_str(logits.shape()));
  }
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw DimensionError("weighted_bce: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " logits");
  }
  double acc = 0.0;
  const T* z = logits.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y != 0 && y != 1) throw ContractError("weighted_bce: labels must be 0/1");
    const double w = class_weights[static_cast<std::size_t>(y)];
    acc += w * (softplus(z[i]) - y * static_cast<double>(z[i]));
  }
  auto node = make_loss_node<T>(static_cast<T>(acc / static_cast<double>(n)), logits.node(),
                                "weighted_bce");
  if (node->requires_grad) {
    node->backward = [n, labels, class_weights](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      const T g = self.grad[0];
      const std::vector<T>& z = *p.values;
      for (std::int64_t i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double w = class_weights[static_cast<std::size_t>(y)];
        p.grad[static_cast<std::size_t>(i)] += static_cast<T>(
            g * w * (sigmoid(static_cast<double>(z[static_cast<std::size_t>(i)])) - y) /
            static_cast<double>(n));
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> masked_multitask_ce(const Tensor<T>& logits, const std::vector<LabelState>& states) {
  if (logits.rank() != 3 || logits.dim(2) != 3) {
    throw DimensionError("masked_multitask_ce expects (N,tasks,3) logits, got " +
                         shape_str(logits.shape()));
  }
  const int n = logits.dim(0), tasks = logits.dim(1);
  if (static_cast<int>(states.size()) != n * tasks) {
    throw DimensionError("masked_multitask_ce: " + std::to_string(states.size()) +
                         " states for " + std::to_string(n * tasks) + " entries");
  }

  std::vector<int> known(static_cast<std::size_t>(tasks), 0);
  for (int t = 0; t < tasks; ++t) {
    for (int i = 0; i < n; ++i) {
      if (states[static_cast<std::size_t>(i) * tasks + t] != LabelState::kUnknown) ++known[static_cast<std::size_t>(t)];
    }
  }
  const int active = static_cast<int>(std::count_if(known.begin(), known.end(), [](int k) { return k > 0; }));
  if (active == 0) {
    throw DegenerateInputError("masked_multitask_ce: every entry in the batch is unknown");
  }

  double total = 0.0;
  const T* z = logits.data();
  for (int t = 0; t < tasks; ++t) {
    if (known[static_cast<std::size_t>(t)] == 0) continue;
    double task_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const LabelState s = states[static_cast<std::size_t>(i) * tasks + t];
      if (s == LabelState::kUnknown) continue;
      const T* row = z + (static_cast<std::size_t>(i) * tasks + t) * 3;
      const double mx = std::max({row[0], row[1], row[2]});
      const double lse =
          mx + std::log(std::exp(row[0] - mx) + std::exp(row[1] - mx) + std::exp(row[2] - mx));
      task_sum += lse - row[static_cast<int>(s)];
    }
    total += task_sum / known[static_cast<std::size_t>(t)];
  }

  auto node = make_loss_node<T>(static_cast<T>(total / active), logits.node(), "masked_ce");
  if (node->requires_grad) {
    node->backward = [n, tasks, states, known, active](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      const T g = self.grad[0];
      const std::vector<T>& z = *p.values;
      for (int t = 0; t < tasks; ++t) {
        if (known[static_cast<std::size_t>(t)] == 0) continue;
        const double coeff = static_cast<double>(g) / (static_cast<double>(known[static_cast<std::size_t>(t)]) * active);
        for (int i = 0; i < n; ++i) {
          const LabelState s = states[static_cast<std::size_t>(i) * tasks + t];
          if (s == LabelState::kUnknown) continue;
          const std::size_t base = (static_cast<std::size_t>(i) * tasks + t) * 3;
          const double mx = std::max({z[base], z[base + 1], z[base + 2]});
          const double e0 = std::exp(z[base] - mx), e1 = std::exp(z[base + 1] - mx),
                       e2 = std::exp(z[base + 2] - mx);
          const double denom = e0 + e1 + e2;
          const double probs[3] = {e0 / denom, e1 / denom, e2 / denom};
          for (int k = 0; k < 3; ++k) {
            const double onehot = k == static_cast<int>(s) ? 1.0 : 0.0;
            p.grad[base + static_cast<std::size_t>(k)] += static_cast<T>(coeff * (probs[k] - onehot));
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

std::array<double, 2> inverse_frequency_weights(const std::vector<int>& labels) {
  std::int64_t pos = 0;
  for (int y : labels) pos += y;
  const std::int64_t neg = static_cast<std::int64_t>(labels.size()) - pos;
  if (pos == 0 || neg == 0) {
    throw DegenerateInputError("inverse_frequency_weights: training labels are single-class");
  }
  const double n = static_cast<double>(labels.size());
  // w_c = n / (2 n_c): the frequency-weighted mean weight is exactly 1
  return {n / (2.0 * static_cast<double>(neg)), n / (2.0 * static_cast<double>(pos))};
}

// ---- AUC ----

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc_roc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::int64_t pos = 0, neg = 0;
  for (int y : labels) (y ? pos : neg) += 1;
  if (pos == 0 || neg == 0) {
    throw MetricError("auc_roc undefined: only one class present");
  }

  // walk tie groups in increasing score order, counting pairs exactly
  std::int64_t concordant = 0, tied = 0, neg_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::int64_t group_pos = 0, group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? group_pos : group_neg) += 1;
      ++j;
    }
    concordant += group_pos * neg_below;
    tied += group_pos * group_neg;
    neg_below += group_neg;
    i = j;
  }
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

// ---- training loop ----

namespace {

struct TaskLabels {
  // state per (sample, task), row-major
  std::vector<LabelState> states;
  int tasks = 0;

  LabelState at(std::int64_t sample, int task) const {
    return states[static_cast<std::size_t>(sample) * tasks + task];
  }
};

TaskLabels collect_labels(const DatasetContainer& data, const std::vector<std::string>& tasks) {
  TaskLabels out;
  out.tasks = static_cast<int>(tasks.size());
  out.states.assign(data.count * tasks.size(), LabelState::kUnknown);
  for (const auto& row : data.manifest) {
    const auto it = std::find(tasks.begin(), tasks.end(), row.task);
    const int t = static_cast<int>(it - tasks.begin());
    out.states[static_cast<std::size_t>(row.id) * out.tasks + t] = row.state;
  }
  return out;
}

std::vector<std::int64_t> fold_indices(const DatasetContainer& data, int fold) {
  std::vector<std::int64_t> out;
  std::vector<bool> seen(data.count, false);
  for (const auto& row : data.manifest) {
    if (row.fold == fold && !seen[static_cast<std::size_t>(row.id)]) {
      seen[static_cast<std::size_t>(row.id)] = true;
      out.push_back(row.id);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Batch tensors for the requested samples; optionally augmented per view with
// per-sample derived rng streams.
std::vector<Tensor<float>> assemble_views(const DatasetContainer& data,
                                          const std::vector<std::int64_t>& ids, int view_count,
                                          int view_index, const TrainConfig* augment_cfg,
                                          std::uint64_t seed, int epoch) {
  const int c = data.channels, h = data.height, w = data.width;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<Tensor<float>> views;
  for (int v = 0; v < view_count; ++v) {
    const int src_view = view_count == 1 ? view_index : v;
    Tensor<float> batch = Tensor<float>::zeros({static_cast<int>(ids.size()), c, h, w});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const float* src = data.view(static_cast<std::uint64_t>(ids[i]), src_view);
      float* dst = batch.data() + static_cast<std::int64_t>(i) * c * plane;
      std::copy(src, src + static_cast<std::int64_t>(c) * plane, dst);
      if (augment_cfg && augment_cfg->augment) {
        Rng rng = Rng::derive(seed, {stream::kAugment, static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(ids[i]),
                                     static_cast<std::uint64_t>(src_view)});
        for (int ch = 0; ch < c; ++ch) {
          Tensor<float> img({h, w},
                            std::vector<float>(dst + ch * plane, dst + (ch + 1) * plane));
          Tensor<float> aug = augment(img, augment_cfg->augment_params, rng);
          std::copy(aug.data(), aug.data() + plane, dst + ch * plane);
        }
      }
    }
    views.push_back(std::move(batch));
  }
  return views;
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct MetricsWriter {
  std::ofstream os;

  MetricsWriter(const std::string& path, bool append) {
    os.open(path, append ? std::ios::app : std::ios::trunc);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    if (!append) os << "epoch,split,task,metric,value\n";
  }
  void row(int epoch, const std::string& split, const std::string& task,
           const std::string& metric, double value) {
    os << epoch << ',' << split << ',' << task << ',' << metric << ',' << format_value(value)
       << '\n';
  }
};

struct MetricRow {
  int epoch;
  std::string split, task, metric;
  double value;
};

std::vector<MetricRow> read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  std::string line;
  std::getline(is, line);  // header
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    MetricRow r;
    std::string epoch_s, value_s;
    std::getline(ls, epoch_s, ',');
    std::getline(ls, r.split, ',');
    std::getline(ls, r.task, ',');
    std::getline(ls, r.metric, ',');
    std::getline(ls, value_s);
    r.epoch = std::stoi(epoch_s);
    r.value = std::stod(value_s);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

EvalResult evaluate(Model<float>& model, const DatasetContainer& data, int fold,
                    const std::array<double, 2>& class_weights, int batch_size) {
  const std::vector<std::string> tasks = data.task_names();
  const TaskLabels labels = collect_labels(data, tasks);
  const std::vector<std::int64_t> ids = fold_indices(data, fold);
  EvalResult result;
  result.samples = static_cast<std::int64_t>(ids.size());
  if (ids.empty()) return result;

  const int task_count = model.spec.head == HeadType::kBinarySigmoid ? 1 : model.spec.tasks;
  std::vector<std::vector<double>> scores(static_cast<std::size_t>(task_count));
  std::vector<std::vector<int>> binary_labels(static_cast<std::size_t>(task_count));
  double loss_sum = 0.0;
  std::int64_t loss_samples = 0;

  Rng unused_rng(0);
  for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(ids.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<std::int64_t> batch_ids(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                              ids.begin() + static_cast<std::ptrdiff_t>(end));
    auto views = assemble_views(data, batch_ids, model.spec.view_count(), 0, nullptr, 0, 0);
    Tensor<float> logits = model.forward_logits(views, false, unused_rng);

    if (model.spec.head == HeadType::kBinarySigmoid) {
      std::vector<int> ys;
      for (std::int64_t id : batch_ids) {
        ys.push_back(labels.at(id, 0) == LabelState::kPositive ? 1 : 0);
      }
      loss_sum += static_cast<double>(weighted_bce(logits, ys, class_weights).item()) *
                  static_cast<double>(batch_ids.size());
      loss_samples += static_cast<std::int64_t>(batch_ids.size());
    } else {
      std::vector<LabelState> states;
      for (std::int64_t id : batch_ids) {
        for (int t = 0; t < labels.tasks; ++t) states.push_back(labels.at(id, t));
      }
      Tensor<float> shaped = reshape(logits, {static_cast<int>(batch_ids.size()),
                                              model.spec.tasks, 3});
      loss_sum += static_cast<double>(masked_multitask_ce(shaped, states).item()) *
                  static_cast<double>(batch_ids.size());
      loss_samples += static_cast<std::int64_t>(batch_ids.size());
    }

    const Prediction pred = predict(logits, model.spec);
    for (std::size_t i = 0; i < batch_ids.size(); ++i) {
      for (int t = 0; t < task_count; ++t) {
        const LabelState s = labels.at(batch_ids[i], t);
        if (s != LabelState::kPositive && s != LabelState::kNegative) continue;
        scores[static_cast<std::size_t>(t)].push_back(
            pred.binary_scores[i * static_cast<std::size_t>(task_count) + static_cast<std::size_t>(t)]);
        binary_labels[static_cast<std::size_t>(t)].push_back(s == LabelState::kPositive ? 1 : 0);
      }
    }
  }

  result.loss = loss_sum / static_cast<double>(loss_samples);
  for (int t = 0; t < task_count; ++t) {
    const auto& sc = scores[static_cast<std::size_t>(t)];
    const auto& yl = binary_labels[static_cast<std::size_t>(t)];
    const std::int64_t pos = std::count(yl.begin(), yl.end(), 1);
    if (pos == 0 || pos == static_cast<std::int64_t>(yl.size()) || yl.empty()) continue;
    result.auc[tasks[static_cast<std::size_t>(t)]] = auc_roc(sc, yl);
  }
  return result;
}

TrainSummary train_model(Model<float>& model, const DatasetContainer& data,
                         const TrainConfig& config, std::uint64_t seed,
                         const std::string& out_dir, bool resume) {
  const std::vector<std::string> tasks = data.task_names();
  if (model.spec.head == HeadType::kBinarySigmoid && tasks.size() != 1) {
    throw ConfigError("binary head requires a single-task dataset, got " +
                      std::to_string(tasks.size()) + " tasks");
  }
  if (model.spec.head == HeadType::kMultitask3 &&
      static_cast<int>(tasks.size()) != model.spec.tasks) {
    throw ConfigError("multitask head expects " + std::to_string(model.spec.tasks) +
                      " tasks, dataset has " + std::to_string(tasks.size()));
  }
  const TaskLabels labels = collect_labels(data, tasks);
  const std::vector<std::int64_t> train_ids = fold_indices(data, 0);
  if (train_ids.empty()) throw ConfigError("dataset has no training fold (fold 0)");

  std::array<double, 2> class_weights{1.0, 1.0};
  if (model.spec.head == HeadType::kBinarySigmoid) {
    std::vector<int> ys;
    for (std::int64_t id : train_ids) {
      ys.push_back(labels.at(id, 0) == LabelState::kPositive ? 1 : 0);
    }
    class_weights = inverse_frequency_weights(ys);
  }

  std::filesystem::create_directories(out_dir);
  const std::string metrics_file = out_dir + "/metrics.csv";
  const std::string ckpt_file = out_dir + "/checkpoint.xvck";

  std::vector<NamedParam<float>> params;
  model.visit_params([&params](const std::string& name, Tensor<float>& t) {
    params.push_back({name, t});
  });
  AdamState<float> adam;

  int start_epoch = 0;
  if (resume) {
    const Checkpoint ckpt = load_checkpoint(ckpt_file);
    restore_model(model, &adam, ckpt);
    start_epoch = static_cast<int>(ckpt.epochs_done);
  }
  MetricsWriter metrics(metrics_file, resume);

  const int total_epochs = static_cast<int>(config.schedule.total_epochs);
  const int run_until = config.run_until < 0
                            ? total_epochs
                            : std::min(total_epochs, config.run_until);
  const int view_count = model.spec.view_count();

  for (int epoch = start_epoch; epoch < run_until; ++epoch) {
    // deterministic per-epoch shuffle
    std::vector<std::int64_t> order = train_ids;
    Rng shuffle_rng = Rng::derive(seed, {stream::kShuffle, static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<int>(i)))]);
    }

    const int num_batches =
        static_cast<int>((order.size() + static_cast<std::size_t>(config.batch_size) - 1) /
                         static_cast<std::size_t>(config.batch_size));
    double loss_sum = 0.0;
    std::int64_t loss_samples = 0;
    int step = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size), ++step) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      if (end - start < 2 && view_count > 0) {
        // batch norm needs at least 2 samples in training mode
        if (end - start == 1) continue;
      }
      const std::vector<std::int64_t> batch_ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(end));
      auto views = assemble_views(data, batch_ids, view_count, config.view_index, &config, seed,
                                  epoch);
      Rng dropout_rng = Rng::derive(seed, {stream::kDropout, static_cast<std::uint64_t>(epoch),
                                           static_cast<std::uint64_t>(step)});
      Tensor<float> logits = model.forward_logits(views, true, dropout_rng);

      Tensor<float> loss;
      if (model.spec.head == HeadType::kBinarySigmoid) {
        std::vector<int> ys;
        for (std::int64_t id : batch_ids) {
          ys.push_back(labels.at(id, 0) == LabelState::kPositive ? 1 : 0);
        }
        loss = weighted_bce(logits, ys, class_weights);
      } else {
        std::vector<LabelState> states;
        for (std::int64_t id : batch_ids) {
          for (int t = 0; t < labels.tasks; ++t) states.push_back(labels.at(id, t));
        }
        loss = masked_multitask_ce(
            reshape(logits, {static_cast<int>(batch_ids.size()), model.spec.tasks, 3}), states);
      }
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("training aborted: non-finite loss at epoch " +
                           std::to_string(epoch) + " step " + std::to_string(step));
      }
      loss_sum += loss_value * static_cast<double>(batch_ids.size());
      loss_samples += static_cast<std::int64_t>(batch_ids.size());

      for (auto& p : params) p.tensor.zero_grad();
      loss.backward();
      const double lr = lr_at(epoch + static_cast<double>(step) / num_batches, config.schedule);
      adam_step(params, adam, lr, config.weight_decay, config.grad_clip);
    }

    metrics.row(epoch, "train", "-", "loss", loss_sum / static_cast<double>(loss_samples));
    for (int fold : {1, 2}) {
      const EvalResult ev = evaluate(model, data, fold, class_weights, config.batch_size);
      if (ev.samples == 0) continue;
      const std::string split = fold == 1 ? "val" : "test";
      metrics.row(epoch, split, "-", "loss", ev.loss);
      for (const auto& [task, auc] : ev.auc) metrics.row(epoch, split, task, "auc", auc);
    }
    metrics.os.flush();

    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      save_checkpoint(snapshot_model(model, &adam, static_cast<std::uint32_t>(epoch + 1)),
                      ckpt_file);
    }
  }

  save_checkpoint(snapshot_model(model, &adam, static_cast<std::uint32_t>(run_until)), ckpt_file);

  TrainSummary summary;
  summary.epochs_done = run_until;
  if (run_until < total_epochs) return summary;  // partial run: no selection yet

  // selection over the complete metrics log (covers resumed runs)
  const std::vector<MetricRow> rows = read_metrics(metrics_file);
  const bool has_test = std::any_of(rows.begin(), rows.end(), [](const MetricRow& r) {
    return r.split == "test" && r.metric == "auc";
  });
  const std::string report_split = has_test ? "test" : "val";
  for (const auto& task : tasks) {
    int best_epoch = total_epochs - 1;
    if (config.selection == SelectionRule::kPerTaskBest) {
      double best_val = -1.0;
      for (const auto& r : rows) {
        if (r.split == "val" && r.metric == "auc" && r.task == task && r.value > best_val) {
          best_val = r.value;
          best_epoch = r.epoch;
        }
      }
    }
    for (const auto& r : rows) {
      if (r.split == report_split && r.metric == "auc" && r.task == task &&
          r.epoch == best_epoch) {
        summary.selected_auc[task] = r.value;
        summary.selected_epoch[task] = best_epoch;
        metrics.row(best_epoch, "selected-" + report_split, task, "auc", r.value);
      }
      if (r.split == "val" && r.metric == "auc" && r.task == task &&
          r.epoch == total_epochs - 1) {
        summary.final_val_auc[task] = r.value;
      }
    }
  }
  metrics.os.flush();
  return summary;
}

// ---- explicit instantiations ----

#define XVT_INSTANTIATE_TRAIN(T)                                                              \
  template void adam_step(std::vector<NamedParam<T>>&, AdamState<T>&, double, double, double); \
  template Tensor<T> weighted_bce(const Tensor<T>&, const std::vector<int>&,                  \
                                  const std::array<double, 2>&);                              \
  template Tensor<T> masked_multitask_ce(const Tensor<T>&, const std::vector<LabelState>&);

XVT_INSTANTIATE_TRAIN(float)
XVT_INSTANTIATE_TRAIN(double)

#undef XVT_INSTANTIATE_TRAIN

}  // namespace xvt
