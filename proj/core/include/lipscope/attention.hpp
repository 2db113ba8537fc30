#pragma once

// Self-attention over a D x N token matrix: dot-product (DPA), L2-distance
// (L2A) and scaled cosine similarity (SCSA).
//
// For each head h the scores are S = Qᵀ K (S_ij pairs q_i with k_j), the
// softmax runs down each column of S so every column of P sums to one, and
// the head output is V P. Head outputs are stacked along the feature axis;
// there is no output projection.

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "lipscope/linalg.hpp"

namespace lipscope {

enum class AttentionKind { DPA, L2A, SCSA };

std::string to_string(AttentionKind kind);
AttentionKind attention_kind_from_string(const std::string& text);

struct AttentionParams {
  AttentionKind kind = AttentionKind::DPA;
  /// D x D each; rows [h*D/H, (h+1)*D/H) hold the projection of head h.
  DenseMatrix wq;
  DenseMatrix wk;
  DenseMatrix wv;
  std::size_t heads = 1;
  std::size_t dim = 0;
  double nu = 1.0;
  double tau = 5.0;
  double eps = 1e-5;

  std::size_t head_dim() const { return dim / heads; }
};

/// Throws ValidationError listing every violated constraint.
void validate_attention(const AttentionParams& params);

struct AttentionOptions {
  /// Scores or outputs with magnitude above this count as overflow.
  double overflow_range = std::numeric_limits<double>::infinity();
  bool keep_probabilities = false;
};

struct AttentionResult {
  DenseMatrix output;
  bool overflow = false;
  std::vector<DenseMatrix> probabilities;  ///< per head, N x N; only if requested
};

AttentionResult attn_forward(const AttentionParams& params, const DenseMatrix& x,
                             const AttentionOptions& options = {});

/// Analytic L2 bound. DPA is +inf; L2A is +inf unless W_Q == W_K. With more
/// than one head the result is sqrt(H) times the largest head bound.
ExtendedReal attn_lip_bound(const AttentionParams& params, std::size_t tokens);

/// Solves x * exp(x + 1) = y for x on [1e-12, 50] by bisection.
double phi_inverse(double y, double tol = 1e-10);

/// (f(X + hZ) - f(X - hZ)) / 2h.
DenseMatrix attn_jvp_numeric(const AttentionParams& params, const DenseMatrix& x,
                             const DenseMatrix& direction, double step);

/// Full (DN x DN) Jacobian in denominator layout from one central-difference
/// JVP per input coordinate.
DenseMatrix attn_jacobian_numeric(const AttentionParams& params, const DenseMatrix& x, double step = 1e-6);

}  // namespace lipscope
