#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

#include "lipscope/linalg.hpp"

namespace lipscope {

namespace {

// One-sided (Hestenes) Jacobi on the columns of a tall matrix. Rotates column
// pairs until every pair is orthogonal to within m * eps; the singular values
// are then the column norms.
Vector jacobi_singular_values(const DenseMatrix& a) {
  const bool wide = a.cols() > a.rows();
  const std::size_t m = wide ? a.cols() : a.rows();
  const std::size_t n = wide ? a.rows() : a.cols();

  // Column-major working copy of the tall orientation, columns contiguous.
  std::vector<double> u(m * n);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (wide) u[r * m + c] = a(r, c);
      else u[c * m + r] = a(r, c);
    }

  std::vector<double> norm2(n);
  auto column = [&](std::size_t j) { return u.data() + j * m; };
  auto refresh = [&](std::size_t j) {
    const double* x = column(j);
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += x[i] * x[i];
    norm2[j] = s;
  };
  for (std::size_t j = 0; j < n; ++j) refresh(j);

  const double tol = static_cast<double>(m) * std::numeric_limits<double>::epsilon();
  constexpr int kMaxSweeps = 60;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = norm2[p];
        const double beta = norm2[q];
        if (alpha == 0.0 || beta == 0.0) continue;
        double* xp = column(p);
        double* xq = column(q);
        double gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) gamma += xp[i] * xq[i];
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = xp[i];
          const double y = xq[i];
          xp[i] = c * x - s * y;
          xq[i] = s * x + c * y;
        }
        refresh(p);
        refresh(q);
      }
    }
    if (!rotated) break;
  }

  Vector sv(n);
  for (std::size_t j = 0; j < n; ++j) sv[j] = std::sqrt(norm2[j]);
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

Vector bidiagonal_singular_values(const DenseMatrix& a) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMajor> view(a.data().data(), Eigen::Index(a.rows()), Eigen::Index(a.cols()));
  Eigen::MatrixXd dense = view;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(dense);
  const auto& s = svd.singularValues();
  Vector sv(s.data(), s.data() + s.size());
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

}  // namespace

Vector full_singular_values(const DenseMatrix& a, SvdMethod method) {
  if (a.empty()) throw ShapeError("full_singular_values: empty matrix");
  if (method == SvdMethod::Auto) {
    method = std::min(a.rows(), a.cols()) <= kJacobiMaxDim ? SvdMethod::Jacobi : SvdMethod::Bidiagonal;
  }
  return method == SvdMethod::Jacobi ? jacobi_singular_values(a) : bidiagonal_singular_values(a);
}

DenseMatrix qr_orthonormalize(const DenseMatrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (n == 0 || m < n) throw ShapeError("qr_orthonormalize: need rows >= cols >= 1");

  const double scale = frobenius_norm(a);
  const double threshold = static_cast<double>(m) * std::numeric_limits<double>::epsilon() * scale;

  // Householder vectors are stored below the diagonal of r (column-major copy).
  std::vector<double> r(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) r[j * m + i] = a(i, j);
  std::vector<double> tau(n, 0.0);
  std::vector<double> diag(n, 0.0);

  for (std::size_t k = 0; k < n; ++k) {
    double* col = r.data() + k * m;
    double norm = 0.0;
    for (std::size_t i = k; i < m; ++i) norm += col[i] * col[i];
    norm = std::sqrt(norm);
    if (!(norm > threshold)) {
      throw DegenerateInputError("qr_orthonormalize: input is rank deficient (column " + std::to_string(k) + ")");
    }
    const double alpha = col[k] > 0.0 ? -norm : norm;
    const double v0 = col[k] - alpha;
    col[k] = v0;
    double vnorm2 = v0 * v0;
    for (std::size_t i = k + 1; i < m; ++i) vnorm2 += col[i] * col[i];
    tau[k] = 2.0 / vnorm2;
    diag[k] = alpha;
    for (std::size_t j = k + 1; j < n; ++j) {
      double* cj = r.data() + j * m;
      double dot = 0.0;
      for (std::size_t i = k; i < m; ++i) dot += col[i] * cj[i];
      dot *= tau[k];
      for (std::size_t i = k; i < m; ++i) cj[i] -= dot * col[i];
    }
  }

  // Q = H_0 ... H_{n-1} applied to the first n columns of I.
  std::vector<double> q(m * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) q[j * m + j] = 1.0;
  for (std::size_t k = n; k-- > 0;) {
    const double* v = r.data() + k * m;
    for (std::size_t j = 0; j < n; ++j) {
      double* qj = q.data() + j * m;
      double dot = 0.0;
      for (std::size_t i = k; i < m; ++i) dot += v[i] * qj[i];
      dot *= tau[k];
      for (std::size_t i = k; i < m; ++i) qj[i] -= dot * v[i];
    }
  }

  DenseMatrix out(m, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double sign = diag[j] < 0.0 ? -1.0 : 1.0;  // make diag(R) positive
    for (std::size_t i = 0; i < m; ++i) out(i, j) = sign * q[j * m + i];
  }
  return out;
}

}  // namespace lipscope
