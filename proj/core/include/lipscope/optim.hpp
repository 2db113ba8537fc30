#pragma once

// SGD with momentum and AdamW, both with decoupled weight decay, plus the
// small helpers used around them (decay operator, clipping, EMA).
//
// Steps are 1-based. Each step function returns the new weights and updates
// the optimizer state in place; a gradient with a non-finite entry is rejected
// before any state changes.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "lipscope/linalg.hpp"

namespace lipscope {

/// Learning rate alpha_t for step t.
using Schedule = std::function<double(std::size_t)>;

Schedule constant_schedule(double alpha);

struct SgdState {
  DenseMatrix v;  ///< momentum buffer; zero-initialized on first use
  double beta = 0.9;
  double weight_decay = 0.0;
  bool decoupled_decay = true;
  Schedule schedule = constant_schedule(1e-3);
};

/// v' = beta v + (1 - beta) g;  w' = w - a_t v' - a_t lambda w.
DenseMatrix sgd_step(SgdState& state, const DenseMatrix& w, const DenseMatrix& g, std::size_t t);

enum class BiasCorrection { Fixed, Stepwise };
enum class AdamUpdateForm { Sqrt, AsPrinted };

std::string to_string(BiasCorrection mode);
BiasCorrection bias_correction_from_string(const std::string& text);
std::string to_string(AdamUpdateForm form);
AdamUpdateForm adam_update_form_from_string(const std::string& text);

struct AdamState {
  DenseMatrix m;
  DenseMatrix v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double eps = 1e-8;
  /// Fixed: m / (1 - beta1); Stepwise: m / (1 - beta1^t).
  BiasCorrection bias_correction = BiasCorrection::Fixed;
  /// Sqrt: m_hat / (sqrt(v_hat) + eps); AsPrinted: m_hat / (v_hat + eps).
  AdamUpdateForm update_form = AdamUpdateForm::Sqrt;
  Schedule schedule = constant_schedule(1e-3);
};

void validate_adam(const AdamState& state);

/// Returns the new weights; when `update` is given it receives mu.
DenseMatrix adamw_step(AdamState& state, const DenseMatrix& w, const DenseMatrix& g, std::size_t t,
                       DenseMatrix* update = nullptr);

/// |m_1| / sqrt(v_1) one step from zero moments: (1 - beta1) / sqrt(1 - beta2).
double raw_update_ratio(double beta1, double beta2, double g = 1.0);

/// (1 - alpha lambda) w. Rejects alpha lambda >= 1.
DenseMatrix weight_decay_apply(const DenseMatrix& w, double alpha, double lambda);

/// Scales every gradient by c / total_norm when total_norm > c.
std::vector<DenseMatrix> clip_global_norm(std::vector<DenseMatrix> gradients, double c);
double global_norm(const std::vector<DenseMatrix>& gradients);

/// decay * w_ema + (1 - decay) * w.
DenseMatrix ema_update(const DenseMatrix& w_ema, const DenseMatrix& w, double decay);

}  // namespace lipscope
