#include "lipscope/optim.hpp"

#include <cmath>
#include <sstream>

namespace lipscope {

namespace {

void check_gradient(const DenseMatrix& w, const DenseMatrix& g, const char* who) {
  if (w.rows() != g.rows() || w.cols() != g.cols())
    throw ShapeError(std::string(who) + ": gradient shape differs from weights");
  const auto data = g.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      std::ostringstream os;
      os << who << ": non-finite gradient entry " << data[i] << " at (" << i / g.cols() << ", " << i % g.cols()
         << "); step rejected";
      throw DegenerateInputError(os.str());
    }
  }
}

void ensure_buffer(DenseMatrix& b, const DenseMatrix& w) {
  if (b.rows() != w.rows() || b.cols() != w.cols()) b = DenseMatrix(w.rows(), w.cols());
}

double learning_rate(const Schedule& schedule, std::size_t t) {
  if (!schedule) throw ValidationError("optimizer: schedule is empty");
  const double a = schedule(t);
  if (!(a >= 0.0) || !std::isfinite(a)) throw ValidationError("optimizer: learning rate must be finite and >= 0");
  return a;
}

}  // namespace

Schedule constant_schedule(double alpha) {
  return [alpha](std::size_t) { return alpha; };
}

DenseMatrix sgd_step(SgdState& state, const DenseMatrix& w, const DenseMatrix& g, std::size_t t) {
  if (!(state.beta >= 0.0 && state.beta < 1.0)) throw ValidationError("sgd: beta must be in [0, 1)");
  if (!(state.weight_decay >= 0.0)) throw ValidationError("sgd: weight_decay must be >= 0");
  check_gradient(w, g, "sgd_step");
  const double alpha = learning_rate(state.schedule, t);
  ensure_buffer(state.v, w);

  DenseMatrix out = w;
  auto v = state.v.data();
  const auto gd = g.data();
  const auto wd = w.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    v[i] = state.beta * v[i] + (1.0 - state.beta) * gd[i];
    od[i] = wd[i] - alpha * v[i];
    if (state.decoupled_decay) od[i] -= alpha * state.weight_decay * wd[i];
  }
  return out;
}

std::string to_string(BiasCorrection mode) { return mode == BiasCorrection::Fixed ? "fixed" : "stepwise"; }

BiasCorrection bias_correction_from_string(const std::string& text) {
  if (text == "fixed") return BiasCorrection::Fixed;
  if (text == "stepwise") return BiasCorrection::Stepwise;
  throw ValidationError("unknown bias_correction '" + text + "' (expected fixed|stepwise)");
}

std::string to_string(AdamUpdateForm form) { return form == AdamUpdateForm::Sqrt ? "sqrt" : "as_printed"; }

AdamUpdateForm adam_update_form_from_string(const std::string& text) {
  if (text == "sqrt") return AdamUpdateForm::Sqrt;
  if (text == "as_printed") return AdamUpdateForm::AsPrinted;
  throw ValidationError("unknown update_form '" + text + "' (expected sqrt|as_printed)");
}

void validate_adam(const AdamState& s) {
  std::vector<std::string> v;
  if (!(s.beta1 >= 0.0 && s.beta1 < 1.0)) v.push_back("adamw: beta1 must be in [0, 1)");
  if (!(s.beta2 >= 0.0 && s.beta2 < 1.0)) v.push_back("adamw: beta2 must be in [0, 1)");
  if (!(s.eps > 0.0)) v.push_back("adamw: eps must be > 0");
  if (!(s.weight_decay >= 0.0)) v.push_back("adamw: weight_decay must be >= 0");
  if (!v.empty()) throw ValidationError(std::move(v));
}

DenseMatrix adamw_step(AdamState& state, const DenseMatrix& w, const DenseMatrix& g, std::size_t t,
                       DenseMatrix* update) {
  validate_adam(state);
  if (t == 0) throw ValidationError("adamw: steps are 1-based");
  check_gradient(w, g, "adamw_step");
  const double alpha = learning_rate(state.schedule, t);
  ensure_buffer(state.m, w);
  ensure_buffer(state.v, w);

  double c1 = 1.0 - state.beta1;
  double c2 = 1.0 - state.beta2;
  if (state.bias_correction == BiasCorrection::Stepwise) {
    c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  }

  DenseMatrix out = w;
  if (update) *update = DenseMatrix(w.rows(), w.cols());
  auto m = state.m.data();
  auto v = state.v.data();
  const auto gd = g.data();
  const auto wd = w.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gd[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gd[i] * gd[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    const double denom = state.update_form == AdamUpdateForm::Sqrt ? std::sqrt(v_hat) + state.eps : v_hat + state.eps;
    const double mu = m_hat / denom;
    od[i] = wd[i] - alpha * mu - alpha * state.weight_decay * wd[i];
    if (update) update->data()[i] = mu;
  }
  return out;
}

double raw_update_ratio(double beta1, double beta2, double g) {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("raw_update_ratio: betas must be in [0, 1)");
  if (g == 0.0 || !std::isfinite(g)) throw DegenerateInputError("raw_update_ratio: gradient must be finite and nonzero");
  const double m1 = (1.0 - beta1) * g;
  const double v1 = (1.0 - beta2) * g * g;
  return std::abs(m1) / std::sqrt(v1);
}

DenseMatrix weight_decay_apply(const DenseMatrix& w, double alpha, double lambda) {
  if (!(alpha >= 0.0) || !(lambda >= 0.0)) throw ValidationError("weight decay: alpha and lambda must be >= 0");
  if (alpha * lambda >= 1.0) throw ValidationError("weight decay: alpha * lambda must be < 1");
  return w * (1.0 - alpha * lambda);
}

double global_norm(const std::vector<DenseMatrix>& gradients) {
  std::vector<double> flat;
  for (const auto& g : gradients) flat.insert(flat.end(), g.data().begin(), g.data().end());
  return vector_norm(flat, NormKind::L2);
}

std::vector<DenseMatrix> clip_global_norm(std::vector<DenseMatrix> gradients, double c) {
  if (!(c > 0.0)) throw ValidationError("clip_global_norm: c must be > 0");
  const double norm = global_norm(gradients);
  if (norm > c) {
    const double s = c / norm;
    for (auto& g : gradients) g *= s;
  }
  return gradients;
}

DenseMatrix ema_update(const DenseMatrix& w_ema, const DenseMatrix& w, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ValidationError("ema_update: decay must be in [0, 1)");
  if (w_ema.rows() != w.rows() || w_ema.cols() != w.cols()) throw ShapeError("ema_update: shape mismatch");
  DenseMatrix out = w_ema * decay;
  out += w * (1.0 - decay);
  return out;
}

}  // namespace lipscope
