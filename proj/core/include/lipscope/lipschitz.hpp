#pragma once

// Sampled local Lipschitz estimates, per-layer profiles, analytic bound
// composition and floating-point range checks.
//
// The estimator draws base points x and directions z from N(0, I) and reports
//   K_s = max ‖f(x + εz) - f(x)‖_p / ‖(x + εz) - x‖_p
// Base point b uses substream (seed, base, b) and direction k of base b uses
// (seed, perturbation, b, k), so raising either count keeps earlier samples.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lipscope/network.hpp"

namespace lipscope {

struct MapOutput {
  DenseMatrix value;
  bool overflow = false;
};

using MapFn = std::function<MapOutput(const DenseMatrix&)>;

struct EstimatorOptions {
  std::size_t base_points = 10;
  std::size_t perturbations = 10;
  double epsilon = 1e-7;
  NormKind norm = NormKind::L2;
  std::uint64_t seed = 0;
  /// Replaces the Gaussian base points (base_points is then their count).
  std::vector<DenseMatrix> bases;
  /// Replaces the Gaussian directions; the same list is used at every base.
  std::vector<DenseMatrix> directions;
  /// Values above this magnitude count as overflow when estimating networks.
  double overflow_range = std::numeric_limits<double>::infinity();
};

void validate_estimator(const EstimatorOptions& options);

struct SampleIndex {
  std::size_t base = 0;
  std::size_t perturbation = 0;
};

struct LipschitzEstimate {
  double value = 0.0;  ///< K_s; +inf when any sample overflowed
  NormKind norm = NormKind::L2;
  double epsilon = 0.0;
  std::size_t num_base_points = 0;
  std::size_t num_perturbations = 0;
  std::uint64_t seed = 0;
  SampleIndex argmax_sample;
  bool overflow = false;
  std::optional<SampleIndex> overflow_sample;
};

LipschitzEstimate estimate_K(const MapFn& f, Shape input, const EstimatorOptions& options = {});
LipschitzEstimate estimate_K(const LayerSpec& layer, Shape input, const EstimatorOptions& options = {});
LipschitzEstimate estimate_K(const Network& net, const EstimatorOptions& options = {});

/// Estimates for several depth prefixes and norms from one set of samples:
/// value[t][n] is K_s of the first taps[t] layers under norms[n]. Every
/// forward pass is shared, so a depth sweep costs one run of the deepest net.
struct TapEstimate {
  std::vector<std::size_t> taps;
  std::vector<NormKind> norms;
  std::vector<std::vector<double>> value;
  std::vector<bool> overflow;  ///< per tap
};

TapEstimate estimate_K_taps(const Network& net, const std::vector<std::size_t>& taps,
                            const std::vector<NormKind>& norms, const EstimatorOptions& options);

struct LayerwiseProfile {
  std::vector<double> k_l0;  ///< size L + 1
  std::vector<double> k_Ll;  ///< size L + 1
  std::vector<bool> k_Ll_undefined;
};

/// K_l0[l]: sensitivity of layer l's output to the input; K_Ll[l]: of the
/// final output to layer l's output. One forward pair per direction serves
/// every layer.
LayerwiseProfile estimate_layerwise(const Network& net, const DenseMatrix& x, const EstimatorOptions& options);

enum class Caveat { ConvOverlap, MultiheadHeuristic, DpaUnbounded };
std::string to_string(Caveat caveat);

struct BoundFactor {
  ExtendedReal value;
  bool droppable = false;  ///< a residual factor (1 + Lip f) that DropPath can remove
  std::size_t layer = 0;   ///< 1-based
};

struct BoundReport {
  std::vector<ExtendedReal> per_layer;
  ExtendedReal product;
  std::vector<BoundFactor> factors;
  std::vector<Caveat> caveats;
};

/// Stage bounds: raw body bound, 1 + bound for a plain shortcut, 1 + max|ν| bound
/// for a weighted one, times the post chain. The product runs over all layers.
BoundReport compose_network_bound(const Network& net);
BoundReport compose_layer_bound(const LayerSpec& layer);

enum class DropPathMode { Deterministic, Sampled };

/// Deterministic: the no-drop product. Sampled: each droppable factor is
/// replaced by 1 with probability p.
ExtendedReal droppath_bound(const BoundReport& report, double p, DropPathMode mode, std::uint64_t seed = 0);

enum class Precision { FP16, FP32 };
double precision_range(Precision precision);
std::string to_string(Precision precision);
Precision precision_from_string(const std::string& text);

struct PrincipleReport {
  Precision precision = Precision::FP32;
  double range = 0.0;
  std::vector<double> max_abs_activation;  ///< per layer 1..L
  std::vector<double> max_abs_gradient;    ///< per layer l = 0..L-1: max |d x^L / d x^l|
  std::vector<std::size_t> forward_violations;
  std::vector<std::size_t> backward_violations;
  bool backward_checked = false;
};

PrincipleReport check_principles(const Network& net, const DenseMatrix& x, Precision precision);

/// K_s <= K_u + 1e-9, or K_u infinite.
bool sandwich_check(const LipschitzEstimate& estimate, const BoundReport& report);

}  // namespace lipscope
