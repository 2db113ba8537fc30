#pragma once

// Toy supervised training of a small post-norm DPA Transformer with a linear
// head, used to trace how the top singular value of every weight drifts under
// SGD or AdamW.
//
// Data: each step draws x ~ N(0, I) of the network's input shape and a fixed
// random linear teacher gives the target T x. Loss: mean squared error of
// head(net(x)) against T x.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lipscope/network.hpp"
#include "lipscope/optim.hpp"

namespace lipscope {

enum class OptimizerKind { SGD, AdamW };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& text);

struct ToyTrainingConfig {
  NetworkSpec net = toy_default_spec();
  std::size_t head_out = 4;
  std::size_t steps = 40;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double momentum = 0.9;  ///< SGD beta
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  BiasCorrection bias_correction = BiasCorrection::Fixed;
  AdamUpdateForm update_form = AdamUpdateForm::Sqrt;
  double clip_norm = 0.0;  ///< 0 disables clipping
  bool zero_gradients = false;  ///< apply only weight decay
  std::uint64_t seed = 0;

  static NetworkSpec toy_default_spec();
};

void validate_toy(const ToyTrainingConfig& config);

struct StepRecord {
  std::size_t step = 0;
  std::string weight_id;
  double sigma_max = 0.0;
  double max_update = 0.0;  ///< max |w' - w|
  double loss = 0.0;        ///< loss before the update of this step
};

struct StepTrace {
  std::vector<StepRecord> records;
  std::vector<std::string> weight_ids;
  bool diverged = false;
  std::optional<std::size_t> diverged_step;

  /// Header: step,weight_id,sigma_max,max_update,loss
  std::string to_csv() const;
};

/// Runs config.steps updates; stops early (diverged) at the first non-finite
/// loss or weight, keeping the partial trace.
StepTrace run_toy_training(const ToyTrainingConfig& config);

struct ThresholdResult {
  double threshold = 0.0;  ///< smallest learning rate found to diverge; +inf if none in range
  bool found = false;
  std::size_t probes = 0;
};

struct ToyGradients {
  double loss = 0.0;
  std::vector<std::string> ids;
  std::vector<DenseMatrix> values;  ///< weights at initialization
  std::vector<DenseMatrix> grads;   ///< d loss / d weight, same shapes
};

/// Loss and reverse-mode gradients at initialization on the batch of `step`.
ToyGradients toy_gradients(const ToyTrainingConfig& config, std::size_t step = 1);
/// Loss on the batch of `step` with the given weights (order of ToyGradients::ids).
double toy_loss(const ToyTrainingConfig& config, const std::vector<DenseMatrix>& values, std::size_t step = 1);
/// Teacher matrix (head_out x width) and the input batch of `step`.
DenseMatrix toy_teacher(const ToyTrainingConfig& config);
DenseMatrix toy_batch(const ToyTrainingConfig& config, std::size_t step);

/// Log-scale bisection over [lo, hi] for the divergence learning rate.
ThresholdResult divergence_threshold(ToyTrainingConfig config, double lo, double hi, std::size_t iterations = 12);

}  // namespace lipscope
