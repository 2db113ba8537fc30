#pragma once

// Dense linear algebra primitives shared by every other module.
//
// Matrices are row-major 64-bit arrays. When a matrix is treated as a point in
// R^{rows*cols} (Jacobians, perturbation norms) it is flattened column by
// column: element (i, n) sits at index i + rows * n, so each column (token,
// sample, pixel) is a contiguous block.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lipscope/errors.hpp"

namespace lipscope {

using Vector = std::vector<double>;

enum class NormKind { L1, L2, LInf };

std::string to_string(NormKind kind);
NormKind norm_kind_from_string(const std::string& text);

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static DenseMatrix column(std::span<const double> values);
  static DenseMatrix diagonal(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector col(std::size_t c) const;
  void set_col(std::size_t c, std::span<const double> values);

  /// Rows [first, first + count) as a new matrix.
  DenseMatrix row_block(std::size_t first, std::size_t count) const;
  void set_row_block(std::size_t first, const DenseMatrix& block);

  DenseMatrix transposed() const;

  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator-=(const DenseMatrix& other);
  DenseMatrix& operator*=(double s);

  friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
  friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
  friend DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }
  friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }
  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Non-negative real or +inf. Used for analytic Lipschitz bounds.
class ExtendedReal {
 public:
  constexpr ExtendedReal() = default;
  /// Throws std::invalid_argument for negative or NaN values.
  explicit ExtendedReal(double value);

  static ExtendedReal infinity() { return ExtendedReal(std::numeric_limits<double>::infinity()); }

  bool is_infinite() const noexcept { return value_ == std::numeric_limits<double>::infinity(); }
  double value() const noexcept { return value_; }

  // 0 * inf = 0: a constant factor makes the composite constant.
  friend ExtendedReal operator*(ExtendedReal a, ExtendedReal b);
  friend ExtendedReal operator+(ExtendedReal a, ExtendedReal b) { return ExtendedReal(a.value_ + b.value_); }
  ExtendedReal& operator*=(ExtendedReal other) { return *this = *this * other; }

  friend auto operator<=>(const ExtendedReal&, const ExtendedReal&) = default;

  std::string to_string() const;

 private:
  double value_ = 0.0;
};

// --- products --------------------------------------------------------------

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// aᵀ b without materializing the transpose.
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
/// a bᵀ without materializing the transpose.
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
Vector matvec(const DenseMatrix& a, std::span<const double> x);
/// aᵀ x.
Vector matvec_t(const DenseMatrix& a, std::span<const double> x);

// --- norms -----------------------------------------------------------------

double vector_norm(std::span<const double> x, NormKind kind);
double frobenius_norm(const DenseMatrix& a);
double max_abs(std::span<const double> x);
bool all_finite(std::span<const double> x);

/// Column-major flattening: element (i, n) -> i + rows * n.
Vector vec(const DenseMatrix& a);
DenseMatrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols);

// --- spectra ---------------------------------------------------------------

struct PowerIterationOptions {
  double tol = 1e-10;
  std::size_t max_iter = 1000;
  std::uint64_t seed = 0;
};

/// Largest singular value by power iteration on aᵀa from a seeded Gaussian start.
/// Throws ConvergenceError (carrying the last unit iterate) at max_iter.
double spectral_norm(const DenseMatrix& a, const PowerIterationOptions& options = {});

/// spectral_norm, falling back to the full spectrum if power iteration stalls
/// on a near-degenerate top singular pair.
double spectral_norm_robust(const DenseMatrix& a);

enum class SvdMethod {
  Auto,        ///< Jacobi up to kJacobiMaxDim columns, bidiagonal beyond
  Jacobi,      ///< one-sided (Hestenes) Jacobi
  Bidiagonal,  ///< Householder bidiagonalization + divide and conquer
};

inline constexpr std::size_t kJacobiMaxDim = 256;

/// All singular values, descending.
Vector full_singular_values(const DenseMatrix& a, SvdMethod method = SvdMethod::Auto);

/// Householder QR; returns the thin Q (rows x cols) with diag(R) > 0.
/// Throws DegenerateInputError for rank-deficient input.
DenseMatrix qr_orthonormalize(const DenseMatrix& a);

// --- convolution support ---------------------------------------------------

/// Image in height x width x channels order (channels fastest).
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
};

struct ConvGeometry {
  std::size_t out_height = 0;
  std::size_t out_width = 0;
};

ConvGeometry conv_geometry(std::size_t height, std::size_t width, std::size_t kernel,
                           std::size_t stride, std::size_t padding);

/// One row per output position (row-major over positions); each row is the
/// zero-padded kernel x kernel x channels patch in (ky, kx, c) order.
DenseMatrix im2col(const ImageTensor& image, std::size_t kernel, std::size_t stride,
                   std::size_t padding);

}  // namespace lipscope
