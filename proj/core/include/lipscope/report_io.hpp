#pragma once

// JSON serialization of reports. Keys keep the struct field names; +inf and
// NaN are written as the strings "inf" and "nan". Output is pretty-printed
// with two-space indentation and a trailing newline.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lipscope/harness.hpp"
#include "lipscope/init.hpp"
#include "lipscope/lipschitz.hpp"
#include "lipscope/toy_training.hpp"

namespace lipscope {

inline constexpr const char* kToolVersion = "0.3.0";

std::string to_json(const LipschitzEstimate& estimate);
std::string to_json(const BoundReport& report);
std::string to_json(const PrincipleReport& report);
std::string to_json(const LayerwiseProfile& profile);
std::string to_json(const JacobianReport& report);
std::string to_json(const SpectrumReport& report);
std::string to_json(const NetworkSpec& spec);
std::string to_json(const SweepConfig& config);

struct ThresholdReport {
  ThresholdResult sgd;
  ThresholdResult adamw;
  double lo = 0.0;
  double hi = 0.0;
};
std::string to_json(const ThresholdReport& report);

/// {tool, version, scale, seeds, config, files, wall_time_s}; wall_time_s is
/// null unless given.
std::string figures_manifest_json(const FigurePlan& plan, const std::string& scale,
                                  const std::vector<std::filesystem::path>& files, std::optional<double> wall_time_s);

/// {"error": {"kind": ..., "message": ..., "violations": [...]}}
std::string error_json(const std::string& kind, const std::string& message,
                       const std::vector<std::string>& violations = {});

}  // namespace lipscope
