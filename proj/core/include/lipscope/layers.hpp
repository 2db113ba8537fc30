#pragma once

// Non-attention modules: forward map, analytic Jacobian and analytic L2
// Lipschitz upper bound for each.
//
// Every layer consumes a D x N matrix whose columns are tokens, samples or
// pixels (a single vector is D x 1). Most layers act on each column
// independently; BatchNorm in training mode mixes columns through the batch
// statistics, and Conv2D reads the columns as an image in raster order.
//
// Jacobians use denominator layout over the column-major flattening of
// linalg.hpp: J(i, j) = d out_j / d in_i, so a linear layer has Jacobian Wᵀ and
// a chain f2(f1(x)) has Jacobian J1 * J2.

#include <cstdint>
#include <memory>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "lipscope/linalg.hpp"

namespace lipscope {

inline constexpr double kDefaultNormEps = 1e-5;
inline constexpr double kDefaultResidualClamp = 2.0;

struct LayerSpec;
using LayerChain = std::vector<LayerSpec>;

/// y = W x + b. W is out x in; b may be empty.
struct Linear {
  DenseMatrix w;
  Vector b;
};

/// Convolution over a channels x (height * width) input. kernel is
/// out_channels x (kernel_size^2 * in_channels) with columns in (ky, kx, c) order.
struct Conv2D {
  DenseMatrix kernel;
  Vector bias;
  std::size_t in_channels = 1;
  std::size_t kernel_size = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t out_channels() const { return kernel.rows(); }
};

struct Sigmoid {};
/// Softmax over the feature axis of each column.
struct Softmax {};
struct ReLU {};
/// x * sigmoid(1.702 x).
struct GELU {};
/// x * sigmoid(x).
struct Swish {};

/// gamma * y / sqrt(|y|^2 + eps) + beta with y the centered input.
struct LayerNorm {
  Vector gamma;
  Vector beta;
  double eps = kDefaultNormEps;
};

enum class BatchNormMode { Training, Inference };

struct BatchNorm {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double eps = kDefaultNormEps;
  BatchNormMode mode = BatchNormMode::Inference;
};

/// gamma * x / sqrt(|x|^2 + eps) + beta.
struct RMSNorm {
  Vector gamma;
  Vector beta;
  double eps = kDefaultNormEps;
};

/// D/(D-1) * gamma * (x - mean(x)) + beta.
struct CenterNorm {
  Vector gamma;
  Vector beta;
};

/// y = W x + b with W(i, :) = gamma_i v_i / sqrt(|v_i|^2 + eps).
struct WeightNorm {
  DenseMatrix v;
  Vector gamma;
  Vector b;
  double eps = kDefaultNormEps;

  DenseMatrix effective_weight() const;
};

/// W2 relu(W1 x + b1) + b2.
struct FFN {
  DenseMatrix w1;
  Vector b1;
  DenseMatrix w2;
  Vector b2;
};

/// x + scale * branch(x).
struct Residual {
  std::shared_ptr<const LayerChain> branch;
  double scale = 1.0;
};

/// x + nu ⊙ branch(x), |nu_d| <= clamp.
struct WeightedResidual {
  std::shared_ptr<const LayerChain> branch;
  Vector nu;
  double clamp = kDefaultResidualClamp;
};

/// Max over the feature axis of each column (D x N -> 1 x N).
struct MaxPool {};
/// Mean over the feature axis of each column (D x N -> 1 x N). `dim` is the
/// expected feature count; 0 leaves it unchecked (and the bound falls back to 1).
struct AvgPool {
  std::size_t dim = 0;
};

using LayerVariant = std::variant<Linear, Conv2D, Sigmoid, Softmax, ReLU, GELU, Swish, LayerNorm,
                                  BatchNorm, RMSNorm, CenterNorm, WeightNorm, FFN, Residual,
                                  WeightedResidual, MaxPool, AvgPool>;

struct LayerSpec {
  LayerVariant op;

  template <typename T>
    requires(!std::is_same_v<std::remove_cvref_t<T>, LayerSpec> && std::is_constructible_v<LayerVariant, T>)
  LayerSpec(T&& value) : op(std::forward<T>(value)) {}  // NOLINT(google-explicit-constructor)
};

std::string layer_kind_name(const LayerSpec& layer);

/// Throws ValidationError listing every violated parameter constraint.
void validate_layer(const LayerSpec& layer);

// Convenience constructors with unit gamma / zero beta, validated.
LayerSpec make_layer_norm(std::size_t dim, double eps = kDefaultNormEps);
LayerSpec make_rms_norm(std::size_t dim, double eps = kDefaultNormEps);
LayerSpec make_center_norm(std::size_t dim);
LayerSpec make_batch_norm(std::size_t dim, BatchNormMode mode, double eps = kDefaultNormEps);
LayerSpec make_residual(LayerChain branch, double scale = 1.0);
LayerSpec make_weighted_residual(LayerChain branch, Vector nu, double clamp = kDefaultResidualClamp);

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Output shape for an input shape; throws ShapeError on mismatch.
Shape layer_output_shape(const LayerSpec& layer, Shape input);

DenseMatrix layer_forward(const LayerSpec& layer, const DenseMatrix& x);
DenseMatrix chain_forward(const LayerChain& chain, const DenseMatrix& x);

struct LayerJacobian {
  DenseMatrix matrix;       ///< (rows*cols of input) x (rows*cols of output)
  bool nonsmooth = false;   ///< evaluated at a kink; a subgradient was used
};

LayerJacobian layer_jacobian(const LayerSpec& layer, const DenseMatrix& x);
LayerJacobian chain_jacobian(const LayerChain& chain, const DenseMatrix& x);

ExtendedReal layer_lip_bound(const LayerSpec& layer);
ExtendedReal chain_lip_bound(const LayerChain& chain);

/// True when the layer's bound is the per-patch kernel norm of an
/// overlapping convolution, which does not bound the whole operator.
bool has_conv_overlap(const LayerSpec& layer);

struct JacobianReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t probe_count = 0;
  bool nonsmooth = false;
};

/// Compares the analytic Jacobian with central differences along `probes`
/// Gaussian directions.
JacobianReport check_jacobian_fd(const LayerSpec& layer, const DenseMatrix& x, std::size_t probes,
                                 double step, std::uint64_t seed = 0);

/// Residual block with stochastic depth: with probability p returns x,
/// otherwise x + rho * branch(x). The draw comes from `seed` alone.
DenseMatrix droppath_apply(const LayerChain& branch, double p, std::uint64_t seed,
                           const DenseMatrix& x, double rho = 1.0);

double sigmoid(double x);

}  // namespace lipscope
