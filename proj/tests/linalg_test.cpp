#include <gtest/gtest.h>

#include <cmath>

#include "lipscope/linalg.hpp"
#include "lipscope/rng.hpp"

namespace lipscope {
namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  DenseMatrix m(r, c);
  Rng(seed).fill_normal(m.data());
  return m;
}

DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      c(i, j) = static_cast<double>(s);
    }
  return c;
}

double max_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// U diag(s) Vᵀ with orthonormal U, V from QR of Gaussian matrices.
DenseMatrix with_singular_values(const Vector& s, std::size_t rows, std::size_t cols, std::uint64_t seed) {
  const DenseMatrix u = qr_orthonormalize(random_matrix(rows, s.size(), seed));
  const DenseMatrix v = qr_orthonormalize(random_matrix(cols, s.size(), seed + 1));
  return matmul_nt(matmul(u, DenseMatrix::diagonal(s)), v);
}

TEST(Matmul, MatchesNaiveProduct) {
  const DenseMatrix a = random_matrix(7, 5, 1);
  const DenseMatrix b = random_matrix(5, 9, 2);
  EXPECT_LT(max_diff(matmul(a, b), naive_matmul(a, b)), 1e-13);
  EXPECT_LT(max_diff(matmul_tn(a.transposed(), b), naive_matmul(a, b)), 1e-13);
  EXPECT_LT(max_diff(matmul_nt(a, b.transposed()), naive_matmul(a, b)), 1e-13);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(DenseMatrix(2, 3), DenseMatrix(4, 2)), ShapeError);
  EXPECT_THROW(matvec(DenseMatrix(2, 3), Vector(2)), ShapeError);
}

TEST(Matvec, TransposedProduct) {
  const DenseMatrix a = DenseMatrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(matvec(a, Vector{1, 0, -1}), (Vector{-2, -2}));
  EXPECT_EQ(matvec_t(a, Vector{1, 1}), (Vector{5, 7, 9}));
}

TEST(Vec, ColumnMajorRoundTrip) {
  const DenseMatrix a = DenseMatrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(vec(a), (Vector{1, 3, 5, 2, 4, 6}));
  EXPECT_EQ(unvec(vec(a), 3, 2), a);
}

TEST(Norms, HandValues) {
  const Vector x{3, -4, 0};
  EXPECT_DOUBLE_EQ(vector_norm(x, NormKind::L1), 7.0);
  EXPECT_DOUBLE_EQ(vector_norm(x, NormKind::L2), 5.0);
  EXPECT_DOUBLE_EQ(vector_norm(x, NormKind::LInf), 4.0);
  EXPECT_DOUBLE_EQ(frobenius_norm(DenseMatrix::from_rows({{1, 2}, {2, 4}})), 5.0);
  EXPECT_FALSE(all_finite(Vector{1.0, std::nan("")}));
}

TEST(NormKind, StringRoundTrip) {
  for (NormKind k : {NormKind::L1, NormKind::L2, NormKind::LInf}) EXPECT_EQ(norm_kind_from_string(to_string(k)), k);
  EXPECT_THROW(norm_kind_from_string("L3"), std::invalid_argument);
}

TEST(ExtendedReal, ArithmeticAndInfinity) {
  const ExtendedReal inf = ExtendedReal::infinity();
  EXPECT_TRUE((inf * ExtendedReal(2.0)).is_infinite());
  EXPECT_EQ((inf * ExtendedReal(0.0)).value(), 0.0);
  EXPECT_EQ((ExtendedReal(2.0) + ExtendedReal(3.0)).value(), 5.0);
  EXPECT_LT(ExtendedReal(1.0), inf);
  EXPECT_THROW(ExtendedReal(-1.0), std::invalid_argument);
  EXPECT_EQ(inf.to_string(), "inf");
}

TEST(SpectralNorm, DiagonalMatrix) {
  EXPECT_NEAR(spectral_norm(DenseMatrix::diagonal(Vector{1, -7, 3})), 7.0, 1e-9);
}

TEST(SpectralNorm, KnownSingularValues) {
  const DenseMatrix w = with_singular_values({4.0, 2.5, 1.0, 0.1}, 12, 8, 3);
  EXPECT_NEAR(spectral_norm(w), 4.0, 1e-8);
  EXPECT_NEAR(spectral_norm_robust(w), 4.0, 1e-8);
}

TEST(SpectralNorm, StalledIterationCarriesIterate) {
  // Two equal top singular values with opposite signs stall the Rayleigh quotient check only rarely;
  // a one-iteration cap always trips.
  const DenseMatrix w = with_singular_values({3.0, 2.9, 1.0}, 6, 6, 5);
  try {
    spectral_norm(w, {1e-16, 1, 0});
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.last_iterate().size(), 6u);
    EXPECT_GT(e.last_value(), 0.0);
  }
}

TEST(Svd, JacobiAndBidiagonalAgreeWithConstruction) {
  const Vector s{5.0, 3.0, 2.0, 0.5, 0.01};
  const DenseMatrix w = with_singular_values(s, 9, 5, 7);
  for (SvdMethod m : {SvdMethod::Jacobi, SvdMethod::Bidiagonal, SvdMethod::Auto}) {
    const Vector got = full_singular_values(w, m);
    ASSERT_EQ(got.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(got[i], s[i], 1e-10);
  }
}

TEST(Svd, WideMatrix) {
  const DenseMatrix w = with_singular_values({2.0, 1.0}, 2, 6, 11);
  const Vector got = full_singular_values(w, SvdMethod::Jacobi);
  ASSERT_GE(got.size(), 2u);
  EXPECT_NEAR(got[0], 2.0, 1e-10);
  EXPECT_NEAR(got[1], 1.0, 1e-10);
}

TEST(Qr, OrthonormalColumnsAndRankDeficiency) {
  const DenseMatrix q = qr_orthonormalize(random_matrix(10, 4, 9));
  const DenseMatrix g = matmul_tn(q, q);
  EXPECT_LT(max_diff(g, DenseMatrix::identity(4)), 1e-13);
  DenseMatrix dup = DenseMatrix::from_rows({{1, 2}, {2, 4}, {3, 6}});
  EXPECT_THROW(qr_orthonormalize(dup), DegenerateInputError);
}

TEST(Im2col, HandExample) {
  // 3x3 single-channel image 1..9, kernel 2, stride 1, no padding.
  ImageTensor img{3, 3, 1, {1, 2, 3, 4, 5, 6, 7, 8, 9}};
  const DenseMatrix cols = im2col(img, 2, 1, 0);
  ASSERT_EQ(cols.rows(), 4u);
  ASSERT_EQ(cols.cols(), 4u);
  EXPECT_EQ(cols, DenseMatrix::from_rows({{1, 2, 4, 5}, {2, 3, 5, 6}, {4, 5, 7, 8}, {5, 6, 8, 9}}));
}

TEST(Im2col, PaddingAndGeometry) {
  ImageTensor img{2, 2, 1, {1, 2, 3, 4}};
  const ConvGeometry g = conv_geometry(2, 2, 3, 1, 1);
  EXPECT_EQ(g.out_height, 2u);
  EXPECT_EQ(g.out_width, 2u);
  const DenseMatrix cols = im2col(img, 3, 1, 1);
  // Top-left patch: zero row, then (0, 1, 2), (0, 3, 4).
  EXPECT_EQ(Vector(cols.row(0).begin(), cols.row(0).end()), (Vector{0, 0, 0, 0, 1, 2, 0, 3, 4}));
}

TEST(Im2col, ConvolutionMatchesDirectSum) {
  ImageTensor img{5, 4, 2, {}};
  img.data.resize(5 * 4 * 2);
  Rng(4).fill_normal(img.data);
  const DenseMatrix kernel = random_matrix(1, 3 * 3 * 2, 8);
  const DenseMatrix out = matmul_nt(kernel, im2col(img, 3, 2, 1));
  const ConvGeometry g = conv_geometry(5, 4, 3, 2, 1);
  for (std::size_t oy = 0; oy < g.out_height; ++oy)
    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
      double s = 0.0;
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx)
          for (std::size_t c = 0; c < 2; ++c) {
            const long y = static_cast<long>(oy * 2 + ky) - 1;
            const long x = static_cast<long>(ox * 2 + kx) - 1;
            if (y < 0 || x < 0 || y >= 5 || x >= 4) continue;
            s += kernel(0, (ky * 3 + kx) * 2 + c) * img.at(y, x, c);
          }
      EXPECT_NEAR(out(0, oy * g.out_width + ox), s, 1e-12);
    }
}

}  // namespace
}  // namespace lipscope
