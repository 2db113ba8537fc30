#include "lipscope/linalg.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lipscope/rng.hpp"

namespace lipscope {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const DenseMatrix& m) { return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }
MutMap view(DenseMatrix& m) { return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }

// Eigen peels vectorized loops up to the first aligned address, so the
// summation order of a product over a mapped buffer depends on where the heap
// put it. Owned Eigen storage is always aligned, which keeps results bit-stable.
RowMajor aligned(const DenseMatrix& m) { return view(m); }

std::string shape_of(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::L1: return "L1";
    case NormKind::L2: return "L2";
    case NormKind::LInf: return "LInf";
  }
  return "?";
}

NormKind norm_kind_from_string(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "l1") return NormKind::L1;
  if (t == "l2") return NormKind::L2;
  if (t == "linf" || t == "l_inf" || t == "inf") return NormKind::LInf;
  throw std::invalid_argument("unknown norm '" + text + "' (expected L1, L2 or LInf)");
}

// --- DenseMatrix -------------------------------------------------------------

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("DenseMatrix: " + std::to_string(data_.size()) + " values for a " +
                     std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseMatrix(r, c, std::move(data));
}

DenseMatrix DenseMatrix::column(std::span<const double> values) {
  return DenseMatrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> values) {
  DenseMatrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

Vector DenseMatrix::col(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void DenseMatrix::set_col(std::size_t c, std::span<const double> values) {
  if (values.size() != rows_) throw ShapeError("set_col: length mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

DenseMatrix DenseMatrix::row_block(std::size_t first, std::size_t count) const {
  if (first + count > rows_) throw ShapeError("row_block: out of range");
  return DenseMatrix(count, cols_,
                     std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_),
                                         data_.begin() + static_cast<std::ptrdiff_t>((first + count) * cols_)));
}

void DenseMatrix::set_row_block(std::size_t first, const DenseMatrix& block) {
  if (block.cols() != cols_ || first + block.rows() > rows_) throw ShapeError("set_row_block: shape mismatch");
  std::copy(block.data().begin(), block.data().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(first * cols_));
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw ShapeError("operator+=: " + shape_of(*this) + " vs " + shape_of(other));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

DenseMatrix& DenseMatrix::operator-=(const DenseMatrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw ShapeError("operator-=: " + shape_of(*this) + " vs " + shape_of(other));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

DenseMatrix& DenseMatrix::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

// --- ExtendedReal ------------------------------------------------------------

ExtendedReal::ExtendedReal(double value) : value_(value) {
  if (std::isnan(value) || value < 0.0) {
    throw std::invalid_argument("ExtendedReal must be >= 0 or +inf");
  }
}

ExtendedReal operator*(ExtendedReal a, ExtendedReal b) {
  if (a.value_ == 0.0 || b.value_ == 0.0) return ExtendedReal(0.0);
  return ExtendedReal(a.value_ * b.value_);
}

std::string ExtendedReal::to_string() const {
  if (is_infinite()) return "inf";
  std::ostringstream os;
  os.precision(17);
  os << value_;
  return os.str();
}

// --- products ----------------------------------------------------------------

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape_of(a) + " x " + shape_of(b));
  DenseMatrix c(a.rows(), b.cols());
  if (!c.empty() && a.cols() > 0) view(c) = aligned(a) * aligned(b);
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: " + shape_of(a) + "ᵀ x " + shape_of(b));
  DenseMatrix c(a.cols(), b.cols());
  if (!c.empty() && a.rows() > 0) view(c) = aligned(a).transpose() * aligned(b);
  return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + shape_of(a) + " x " + shape_of(b) + "ᵀ");
  DenseMatrix c(a.rows(), b.rows());
  if (!c.empty() && a.cols() > 0) view(c) = aligned(a) * aligned(b).transpose();
  return c;
}

Vector matvec(const DenseMatrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw ShapeError("matvec: " + shape_of(a) + " x " + std::to_string(x.size()));
  Vector y(a.rows(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

Vector matvec_t(const DenseMatrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw ShapeError("matvec_t: " + shape_of(a) + "ᵀ x " + std::to_string(x.size()));
  Vector y(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    const double xr = x[r];
    for (std::size_t c = 0; c < row.size(); ++c) y[c] += row[c] * xr;
  }
  return y;
}

// --- norms -------------------------------------------------------------------

double vector_norm(std::span<const double> x, NormKind kind) {
  switch (kind) {
    case NormKind::L1: {
      double s = 0.0;
      for (double v : x) s += std::abs(v);
      return s;
    }
    case NormKind::L2: {
      // Scaled accumulation so huge activations do not overflow the sum of squares.
      double scale = max_abs(x);
      if (scale == 0.0 || !std::isfinite(scale)) return scale;
      double s = 0.0;
      for (double v : x) {
        const double t = v / scale;
        s += t * t;
      }
      return scale * std::sqrt(s);
    }
    case NormKind::LInf:
      return max_abs(x);
  }
  return 0.0;
}

double frobenius_norm(const DenseMatrix& a) { return vector_norm(a.data(), NormKind::L2); }

double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) {
    const double a = std::abs(v);
    if (a > m || std::isnan(a)) m = a;
    if (std::isnan(m)) return m;
  }
  return m;
}

bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

Vector vec(const DenseMatrix& a) {
  Vector v(a.size());
  const std::size_t rows = a.rows();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) v[r + rows * c] = a(r, c);
  return v;
}

DenseMatrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) throw ShapeError("unvec: length mismatch");
  DenseMatrix a(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) a(r, c) = v[r + rows * c];
  return a;
}

// --- power iteration ---------------------------------------------------------

double spectral_norm(const DenseMatrix& a, const PowerIterationOptions& options) {
  if (a.empty()) throw ShapeError("spectral_norm: empty matrix");
  if (!(options.tol > 0.0)) throw std::invalid_argument("spectral_norm: tol must be > 0");

  Rng rng(options.seed, {kStreamPowerIteration});
  Vector v(a.cols());
  rng.fill_normal(v);
  double nv = vector_norm(v, NormKind::L2);
  for (double& x : v) x /= nv;

  double sigma = 0.0;
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    const Vector u = matvec(a, v);
    const double next = vector_norm(u, NormKind::L2);
    if (next == 0.0) return 0.0;  // v in the null space; with a Gaussian start only for a == 0
    Vector w = matvec_t(a, u);
    const double nw = vector_norm(w, NormKind::L2);
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / nw;
    // ‖a v‖ is the Rayleigh quotient of aᵀa; it rises monotonically to σ_max.
    if (it > 0 && std::abs(next - sigma) <= options.tol * next) {
      // One more product from the refreshed iterate.
      return std::max(next, vector_norm(matvec(a, v), NormKind::L2));
    }
    sigma = next;
  }
  throw ConvergenceError("spectral_norm: no convergence in " + std::to_string(options.max_iter) + " iterations",
                         v, sigma);
}

double spectral_norm_robust(const DenseMatrix& a) {
  try {
    return spectral_norm(a);
  } catch (const ConvergenceError&) {
    return full_singular_values(a).front();
  }
}

// --- im2col ------------------------------------------------------------------

ConvGeometry conv_geometry(std::size_t height, std::size_t width, std::size_t kernel,
                           std::size_t stride, std::size_t padding) {
  if (kernel == 0 || stride == 0) throw ShapeError("convolution: kernel and stride must be >= 1");
  const std::size_t ph = height + 2 * padding;
  const std::size_t pw = width + 2 * padding;
  if (kernel > ph || kernel > pw) {
    throw ShapeError("convolution: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(ph) + "x" + std::to_string(pw));
  }
  return {(ph - kernel) / stride + 1, (pw - kernel) / stride + 1};
}

DenseMatrix im2col(const ImageTensor& image, std::size_t kernel, std::size_t stride,
                   std::size_t padding) {
  if (image.data.size() != image.height * image.width * image.channels)
    throw ShapeError("im2col: image data does not match its dimensions");
  const ConvGeometry g = conv_geometry(image.height, image.width, kernel, stride, padding);
  const std::size_t c = image.channels;
  const std::size_t patch = kernel * kernel * c;
  DenseMatrix out(g.out_height * g.out_width, patch);

  for (std::size_t oy = 0; oy < g.out_height; ++oy) {
    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
      auto row = out.row(oy * g.out_width + ox);
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        const std::ptrdiff_t y = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(padding);
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const std::ptrdiff_t x = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(padding);
          double* dst = row.data() + (ky * kernel + kx) * c;
          if (y < 0 || x < 0 || y >= std::ptrdiff_t(image.height) || x >= std::ptrdiff_t(image.width)) {
            std::fill(dst, dst + c, 0.0);
          } else {
            const double* src = image.data.data() + (std::size_t(y) * image.width + std::size_t(x)) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace lipscope
