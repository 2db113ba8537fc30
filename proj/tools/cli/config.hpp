#pragma once

// Plain-text configuration for the lipscope tool.
//
// Format: key=value pairs under optional [section] headers. A line may hold
// several whitespace-separated pairs; '#' starts a comment. Keys before the
// first header are matched by name across all sections and must be
// unambiguous. Lists are comma-separated without spaces.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lipscope/harness.hpp"
#include "lipscope/lipschitz.hpp"
#include "lipscope/network.hpp"
#include "lipscope/toy_training.hpp"

namespace lipscope::cli {

struct JacobianSettings {
  std::string kind = "Linear";
  std::size_t dim = 16;
  std::size_t tokens = 16;
  std::size_t probes = 10;
  double step = 1e-5;
  double kink_margin = 1e-3;
};

struct InitStatsSettings {
  InitMethod method = InitMethod::XavierNormal;
  double gain = 1.0;
  std::size_t rows = 256;
  std::size_t cols = 256;
  std::size_t bins = 20;
};

enum class OptimMode { Trace, Threshold };

struct OptimSettings {
  ToyTrainingConfig toy;
  OptimMode mode = OptimMode::Trace;
  double lr_lo = 1e-3;
  double lr_hi = 1e4;
  std::size_t iterations = 12;
};

struct Settings {
  NetworkSpec net;
  EstimatorOptions estimator;
  SweepConfig sweep;  ///< base and estimator are taken from net and estimator
  JacobianSettings jacobian;
  InitStatsSettings init_stats;
  OptimSettings optim;
  Precision precision = Precision::FP16;
  Scale scale = Scale::Desk;
};

struct ConfigKey {
  std::string section;
  std::string name;
  std::string help;
  /// Throws std::invalid_argument with a message naming the expected type.
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;

  std::string default_value() const { return get(Settings{}); }
};

const std::vector<ConfigKey>& config_keys();

/// Applies `text` on top of `settings`. Unknown keys are errors unless
/// `lenient`. Throws ValidationError listing every problem with its line.
void load_config_text(const std::string& text, Settings& settings, bool lenient = false);
/// Throws ValidationError when the file cannot be read.
void load_config_file(const std::string& path, Settings& settings, bool lenient = false);
/// One "key=value" or "section.key=value" override.
void apply_override(const std::string& assignment, Settings& settings, bool lenient = false);

/// Checks the cross-field preconditions of every section.
void validate_settings(const Settings& settings);

/// Every key under its section header, in registry order.
std::string serialize_config(const Settings& settings);

/// Key table for --help: "[section] name (default: value)  help".
std::string config_help();

}  // namespace lipscope::cli
