#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tg {

inline constexpr const char* kToolVersion = "0.1.0";

/// Bad config file, unknown key or out-of-range value (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string experiment = "check-transport";
  int dim = 50;
  int components = 10;
  std::vector<std::string> family{"all"};
  std::vector<std::string> estimators;
  std::vector<std::string> test_function{"quadratic"};
  int samples = 20000;
  std::uint64_t seed = 0;
  int rank = 1;
  std::vector<double> r_sweep{0.0, 0.5, 1.0};
  int steps = 2000;
  std::string out;

  // check-transport
  std::vector<int> dim_sweep;
  std::vector<int> component_sweep{1, 2, 3, 5};
  int points = 100;
  int avf_instances = 20;

  // adaptation
  double step_size_theta = 1e-3;
  double step_size_lambda = 3e-3;
  std::string optimizer = "adam";
  bool freeze_theta = true;
  int samples_per_step = 1;
  int window = 500;

  // bench-mixture geometry
  double radius = 2.0;
  double spread = 0.05;
  double temperature = 1.0;
  int bootstrap = 1000;

  // sgvi-toy
  int seeds = 20;
  double learning_rate = 1e-2;
  int log_every = 250;
  int eval_samples = 2000;
  std::string target = "default";
};

/// Every accepted key, in canonical order.
const std::vector<std::string>& config_keys();

/// Defaults for one command (steps, samples and estimator lists differ).
ExperimentConfig default_config(const std::string& experiment);

/// Flat `key = value` lines; `#` starts a comment, values may be quoted
/// strings or bracketed lists. Throws ConfigError with the line number.
std::map<std::string, std::string> parse_config_text(const std::string& text);

/// Throws ConfigError for unknown keys or unparsable / out-of-range values.
void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
void validate(const ExperimentConfig& cfg);

/// `key = value` for every key, one per line.
std::string canonical_config(const ExperimentConfig& cfg);
/// FNV-1a 64 of canonical_config.
std::uint64_t config_hash(const ExperimentConfig& cfg);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct CommandResult {
  CsvTable table;
  bool thresholds_met = true;
};

CommandResult run_experiment(const ExperimentConfig& cfg);

/// Writes the comment line, header and rows.
void write_csv(std::ostream& os, const ExperimentConfig& cfg, const CsvTable& table);

/// Entry point of the tgbench tool. args excludes the program name.
/// Returns 0 on success, 1 when a checked threshold fails, 2 on usage or
/// configuration errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tg
