#pragma once

#include <map>
#include <string>

#include "xvt/data.hpp"
#include "xvt/model.hpp"
#include "xvt/train.hpp"

namespace xvt {

// Flat key=value run configuration with a closed key set: unknown keys are
// rejected at parse time, before any compute. The resolved form (every key,
// sorted) is echoed into each run directory so results are self-describing;
// the echo itself parses as a config file.
class RunConfig {
 public:
  RunConfig();  // defaults

  static RunConfig from_file(const std::string& path);
  // "key=value", applied on top of the current values.
  void apply_override(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  ModelSpec model_spec() const;
  TrainConfig train_config() const;
  SynthTaskSpec synth_spec() const;
  std::array<int, 3> fold_counts() const;
  std::string data_path() const { return get("data.path"); }

  std::string resolved_text() const;

 private:
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> values_;
};

}  // namespace xvt
