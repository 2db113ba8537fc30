#pragma once

// Weight initializers and singular-value spectrum reports.
//
// Every draw comes from the substream derive_seed(seed, {kStreamWeights, ...})
// chosen by the caller, so two matrices never share random numbers.

#include <cstdint>
#include <string>
#include <vector>

#include "lipscope/linalg.hpp"

namespace lipscope {

enum class InitMethod { XavierUniform, XavierNormal, Kaiming, Orthogonal, Spectral, DepthAware };
enum class DepthRule { InvSqrtL, InvL };

std::string to_string(InitMethod method);
InitMethod init_method_from_string(const std::string& text);
std::string to_string(DepthRule rule);
DepthRule depth_rule_from_string(const std::string& text);

struct InitSpec {
  InitMethod method = InitMethod::XavierNormal;
  double gain = 1.0;
  double kaiming_a = 0.0;
  DepthRule depth_rule = DepthRule::InvSqrtL;
  std::size_t depth = 1;  ///< L, used by DepthAware
};

void validate_init(const InitSpec& spec);

/// n_out x n_in matrix with fans n_in and n_out.
DenseMatrix init_matrix(const InitSpec& spec, std::size_t n_in, std::size_t n_out, std::uint64_t seed);

/// rows x cols matrix with explicit fans (convolution kernels use
/// fan_in = C_in K², fan_out = C_out K²).
DenseMatrix init_matrix_shaped(const InitSpec& spec, std::size_t rows, std::size_t cols, std::size_t fan_in,
                               std::size_t fan_out, std::uint64_t seed);

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::size_t count = 0;
};

struct SpectrumReport {
  std::vector<HistogramBin> bins;
  double max_value = 0.0;
  double min_value = 0.0;
  Vector singular_values;  ///< descending

  /// CSV with header bin_left,bin_right,count.
  std::string to_csv() const;
};

/// Histogram of singular values over [min, max] (a unit-wide range around a
/// single repeated value).
SpectrumReport spectrum_report(const DenseMatrix& w, std::size_t bins);

}  // namespace lipscope
