// Command-line front end: synthetic dataset generation, training, evaluation
// and the gradient-check suite. Every command is a pure function of
// (config, seed, input files); reruns produce byte-identical artifacts.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include <CLI11.hpp>

#include "xvt/checkpoint.hpp"
#include "xvt/config.hpp"
#include "xvt/data.hpp"
#include "xvt/gradcheck.hpp"
#include "xvt/model.hpp"
#include "xvt/train.hpp"

namespace {

namespace fs = std::filesystem;

std::string resolve_out_dir(const std::string& out) {
  const char* root = std::getenv("XVT_RUN_ROOT");
  fs::path p(out);
  if (root && *root && p.is_relative()) p = fs::path(root) / p;
  return p.string();
}

xvt::RunConfig load_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
  xvt::RunConfig config =
      config_path.empty() ? xvt::RunConfig() : xvt::RunConfig::from_file(config_path);
  for (const auto& o : overrides) config.apply_override(o);
  return config;
}

void write_config_echo(const xvt::RunConfig& config, const std::string& dir) {
  std::ofstream os(dir + "/config.resolved", std::ios::trunc);
  if (!os) throw xvt::Error("cannot write config echo under '" + dir + "'");
  os << config.resolved_text();
}

int cmd_synth_gen(const xvt::RunConfig& config, std::uint64_t seed, const std::string& out) {
  fs::create_directories(out);
  const xvt::SynthDataset dataset =
      xvt::synth_generate(config.synth_spec(), config.fold_counts(), seed);
  xvt::write_container(dataset.container, out + "/data.xvds");
  write_config_echo(config, out);
  std::cout << "wrote " << dataset.container.count << " samples to " << out << "/data.xvds\n";
  return 0;
}

int cmd_train(const xvt::RunConfig& config, std::uint64_t seed, const std::string& out,
              bool resume) {
  if (config.data_path().empty()) throw xvt::ConfigError("data.path is not set");
  const xvt::DatasetContainer data = xvt::read_container(config.data_path());
  xvt::Model<float> model = xvt::build_model<float>(config.model_spec(), seed);
  fs::create_directories(out);
  write_config_echo(config, out);
  const xvt::TrainSummary summary =
      xvt::train_model(model, data, config.train_config(), seed, out, resume);
  if (summary.selected_auc.empty()) {
    std::cout << "trained " << summary.epochs_done << " epochs (partial run)\n";
  } else {
    for (const auto& [task, auc] : summary.selected_auc) {
      std::printf("selected epoch %d: task %s auc=%.6f\n", summary.selected_epoch.at(task),
                  task.c_str(), auc);
    }
  }
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& data_override,
             const std::string& fold_name, const std::string& out_file) {
  const xvt::RunConfig config = xvt::RunConfig::from_file(run_dir + "/config.resolved");
  const std::string data_path = data_override.empty() ? config.data_path() : data_override;
  const xvt::DatasetContainer data = xvt::read_container(data_path);

  xvt::Model<float> model = xvt::build_model<float>(config.model_spec(), 0);
  const xvt::Checkpoint ckpt = xvt::load_checkpoint(run_dir + "/checkpoint.xvck");
  xvt::restore_model(model, nullptr, ckpt);

  int fold = 2;
  if (fold_name == "val") {
    fold = 1;
  } else if (fold_name == "train") {
    fold = 0;
  } else if (fold_name != "test") {
    throw xvt::ConfigError("unknown fold '" + fold_name + "'");
  }

  std::array<double, 2> weights{1.0, 1.0};
  const xvt::EvalResult result = xvt::evaluate(model, data, fold, weights);
  if (result.samples == 0) throw xvt::ConfigError("fold '" + fold_name + "' is empty");
  // a fold where no task has both classes present leaves auc empty
  if (result.auc.empty()) {
    throw xvt::MetricError("AUC undefined on fold '" + fold_name + "': single-class labels");
  }

  const std::string path = out_file.empty() ? run_dir + "/eval.csv" : out_file;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw xvt::Error("cannot write '" + path + "'");
  os << "epoch,split,task,metric,value\n";
  char buf[64];
  for (const auto& [task, auc] : result.auc) {
    std::snprintf(buf, sizeof(buf), "%.17g", auc);
    os << (ckpt.epochs_done > 0 ? static_cast<int>(ckpt.epochs_done) - 1 : 0) << ',' << fold_name
       << ',' << task << ",auc," << buf << '\n';
    std::printf("%s %s auc=%.6f\n", fold_name.c_str(), task.c_str(), auc);
  }
  return 0;
}

int cmd_eval_aggregate(const std::vector<std::string>& run_dirs, const std::string& out_file) {
  // rows keyed by (split, task, metric) -> values across runs
  std::map<std::string, std::vector<double>> groups;
  for (const auto& dir : run_dirs) {
    std::ifstream is(dir + "/eval.csv");
    if (!is) throw xvt::Error("cannot open '" + dir + "/eval.csv' (run `eval` there first)");
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      std::string epoch, split, task, metric, value;
      std::getline(ls, epoch, ',');
      std::getline(ls, split, ',');
      std::getline(ls, task, ',');
      std::getline(ls, metric, ',');
      std::getline(ls, value);
      groups[split + "," + task + "," + metric].push_back(std::stod(value));
    }
  }
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_file.empty()) {
    file.open(out_file, std::ios::trunc);
    if (!file) throw xvt::Error("cannot write '" + out_file + "'");
    os = &file;
  }
  (*os) << "split,task,metric,mean,std,n\n";
  char buf[128];
  for (const auto& [key, values] : groups) {
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double stddev =
        values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", mean, stddev);
    (*os) << key << ',' << buf << ',' << values.size() << '\n';
  }
  return 0;
}

int cmd_gradcheck(const std::string& scope, int seeds) {
  const auto& cases = xvt::gradcheck_cases();
  std::vector<const xvt::GradCheckCase*> selected;
  if (scope == "all") {
    for (const auto& c : cases) selected.push_back(&c);
  } else {
    for (const auto& c : cases) {
      if (c.name == scope) selected.push_back(&c);
    }
    if (selected.empty()) {
      std::cerr << "usage error: unknown gradcheck scope '" << scope << "'; known scopes:\n";
      for (const auto& c : cases) std::cerr << "  " << c.name << '\n';
      std::cerr << "  all\n";
      return 2;
    }
  }
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  std::printf("%-24s %12s  %s\n", "operation", "max-rel-err", "status");
  for (const auto* c : selected) {
    const double err = xvt::run_gradcheck_case(*c, seeds);
    const bool pass = err <= kTolerance;
    ok = ok && pass;
    std::printf("%-24s %12.3e  %s\n", c->name.c_str(), err, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-view transformer models: data synthesis, training, evaluation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_path, fold = "test", out_file, scope = "all";
  std::vector<std::string> overrides, run_dirs;
  std::uint64_t seed = 0;
  bool resume = false;
  int seeds = 10;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key = value lines)");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--override", overrides, "config override key=value (repeatable)");
  };

  CLI::App* synth = app.add_subcommand("synth-gen", "generate a synthetic two-view dataset");
  add_common(synth);
  synth->add_option("--out", out_dir, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_flag("--resume", resume, "resume from the run directory's checkpoint");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint or aggregate runs");
  eval->add_option("--run", run_dirs, "run directory (repeat with --aggregate)");
  eval->add_option("--data", data_path, "dataset container override");
  eval->add_option("--fold", fold, "fold to evaluate: train|val|test");
  eval->add_option("--out", out_file, "output CSV path");
  bool aggregate = false;
  eval->add_flag("--aggregate", aggregate, "aggregate eval.csv across run directories");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--scope", scope, "operation name or 'all'");
  gradcheck->add_option("--seeds", seeds, "random seeds per operation");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      return cmd_synth_gen(load_config(config_path, overrides), seed, resolve_out_dir(out_dir));
    }
    if (train->parsed()) {
      return cmd_train(load_config(config_path, overrides), seed, resolve_out_dir(out_dir),
                       resume);
    }
    if (eval->parsed()) {
      if (run_dirs.empty()) {
        std::cerr << "usage error: eval requires at least one --run directory\n";
        return 2;
      }
      if (aggregate) return cmd_eval_aggregate(run_dirs, out_file);
      if (run_dirs.size() != 1) {
        std::cerr << "usage error: evaluating a single run takes exactly one --run\n";
        return 2;
      }
      return cmd_eval(run_dirs[0], data_path, fold, out_file);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(scope, seeds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
