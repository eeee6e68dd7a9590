#pragma once

// Experiment configuration.
//
// Every setting has a dotted key ("train.epochs", "model.fafm", ...). The
// command line exposes each key as a flag and config files use the same
// keys split into [section] headers. Values travel as strings through
// Config::set, which rejects unknown keys and invalid values.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nutri/depth_adapter.hpp"
#include "nutri/losses.hpp"
#include "nutri/model.hpp"
#include "nutri/synth.hpp"

namespace nutri {

struct DataSettings {
  std::string root = "corpus";
  SynthConfig synth;
  std::string depth_provider = "synthetic-corruptor";
  DepthCorruption corruption{2.0, 0.5, 0.005, 0.0};
};

struct LossSettings {
  double tau = 0.07;         // alignment temperature
  double lambda = 0.1;       // alignment weight
  double smoothing = kDefaultSmoothing;
  double kpi_eps = kKpiEpsilon;
  double depth_weight = 1.0; // auxiliary depth L2 when ground truth exists
};

struct OptimSettings {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::string schedule = "cosine";  // cosine | constant
};

struct TrainSettings {
  int epochs = 150;
  int batch_size = 8;
  std::uint64_t seed = 42;
  double val_fraction = 0.1;
  int checkpoint_every = 0;  // 0: only the final and best checkpoints
  std::string out = "run";
  std::string preset = "none";  // none | baseline | +fafm | +ssra | +mph
  bool verbose = true;
};

struct Config {
  DataSettings data;
  ModelConfig model;
  LossSettings loss;
  OptimSettings optim;
  TrainSettings train;

  // Throws ConfigError for unknown keys and unparsable or out-of-range values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  // Cross-field checks; throws ConfigError.
  void validate() const;
  // Applies train.preset to the model toggles.
  void apply_preset();

  std::map<std::string, std::string> to_map() const;
  static Config from_map(const std::map<std::string, std::string>& values);
  // "[section]" blocks of "key = value" lines.
  std::string to_ini() const;
};

struct ConfigKey {
  std::string key;
  std::string help;
};

// Every accepted key in section order.
const std::vector<ConfigKey>& config_keys();

// Model toggles for one ablation row: "baseline", "+fafm", "+ssra", "+mph".
// Rows are cumulative.
void apply_ablation_row(ModelConfig& model, const std::string& row);
inline const std::vector<std::string> kAblationRows{"baseline", "+fafm", "+ssra", "+mph"};

}  // namespace nutri
