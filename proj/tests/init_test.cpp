#include <gtest/gtest.h>

#include <cmath>

#include "lipscope/init.hpp"

namespace lipscope {
namespace {

double variance(const DenseMatrix& w) {
  double s = 0.0, s2 = 0.0;
  for (double x : w.data()) {
    s += x;
    s2 += x * x;
  }
  const double n = static_cast<double>(w.size());
  return s2 / n - (s / n) * (s / n);
}

TEST(Init, XavierNormalVariance) {
  const DenseMatrix w = init_matrix({InitMethod::XavierNormal, 1.0}, 300, 200, 1);
  ASSERT_EQ(w.rows(), 200u);
  ASSERT_EQ(w.cols(), 300u);
  EXPECT_NEAR(variance(w), 2.0 / 500.0, 0.03 * 2.0 / 500.0);
}

TEST(Init, XavierUniformRangeAndVariance) {
  const DenseMatrix w = init_matrix({InitMethod::XavierUniform, 1.0}, 100, 100, 2);
  const double a = std::sqrt(6.0 / 200.0);
  for (double x : w.data()) ASSERT_LE(std::abs(x), a);
  EXPECT_NEAR(variance(w), a * a / 3.0, 0.03 * a * a / 3.0);
}

TEST(Init, KaimingVarianceAndGain) {
  const DenseMatrix w = init_matrix({InitMethod::Kaiming, 1.0}, 128, 256, 3);
  EXPECT_NEAR(variance(w), 2.0 / 128.0, 0.03 * 2.0 / 128.0);
  const DenseMatrix g = init_matrix({InitMethod::Kaiming, 2.0}, 128, 256, 3);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(g.data()[i], 2.0 * w.data()[i]);
}

TEST(Init, OrthogonalTallAndWide) {
  for (auto [in, out] : {std::pair<std::size_t, std::size_t>{16, 40}, {40, 16}}) {
    const DenseMatrix q = init_matrix({InitMethod::Orthogonal, 1.0}, in, out, 4);
    const DenseMatrix g = q.rows() >= q.cols() ? matmul_tn(q, q) : matmul_nt(q, q);
    const DenseMatrix eye = DenseMatrix::identity(g.rows());
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g.data()[i], eye.data()[i], 1e-12);
  }
}

TEST(Init, SpectralHasUnitTopSingularValue) {
  const DenseMatrix w = init_matrix({InitMethod::Spectral, 1.0}, 64, 48, 5);
  EXPECT_NEAR(full_singular_values(w, SvdMethod::Jacobi).front(), 1.0, 1e-10);
}

TEST(Init, DepthAwareRescalesXavier) {
  InitSpec spec{InitMethod::DepthAware, 1.0};
  spec.depth = 16;
  const DenseMatrix d = init_matrix(spec, 20, 10, 6);
  const DenseMatrix x = init_matrix({InitMethod::XavierNormal, 1.0}, 20, 10, 6);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d.data()[i], x.data()[i] / 4.0, 1e-16);
  spec.depth_rule = DepthRule::InvL;
  const DenseMatrix l = init_matrix(spec, 20, 10, 6);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(l.data()[i], x.data()[i] / 16.0, 1e-16);
}

TEST(Init, MarchenkoPasturEdges) {
  // Square: entries of variance 1/n put the spectrum on [0, 2].
  const Vector sq = full_singular_values(init_matrix({InitMethod::XavierNormal, 1.0}, 256, 256, 7));
  EXPECT_LT(sq.front(), 2.05);
  EXPECT_GT(sq.front(), 1.85);
  // n x 2n: edges sqrt(2/3n) (sqrt(2n) +- sqrt(n)) = 1.971 and 0.338.
  const Vector wide = full_singular_values(init_matrix({InitMethod::XavierNormal, 1.0}, 512, 256, 8));
  EXPECT_NEAR(wide.front(), 1.971, 0.06);
  EXPECT_NEAR(wide.back(), 0.338, 0.06);
}

TEST(Init, ValidationAndNames) {
  EXPECT_THROW(init_matrix({InitMethod::XavierNormal, 0.0}, 2, 2, 0), ValidationError);
  EXPECT_THROW(init_matrix({InitMethod::XavierNormal, 1.0}, 0, 2, 0), ValidationError);
  for (InitMethod m : {InitMethod::XavierUniform, InitMethod::XavierNormal, InitMethod::Kaiming, InitMethod::Orthogonal,
                       InitMethod::Spectral, InitMethod::DepthAware})
    EXPECT_EQ(init_method_from_string(to_string(m)), m);
}

TEST(Spectrum, HistogramCountsEveryValue) {
  const DenseMatrix w = DenseMatrix::diagonal(Vector{1.0, 2.0, 3.0, 4.0});
  const SpectrumReport r = spectrum_report(w, 3);
  EXPECT_EQ(r.max_value, 4.0);
  EXPECT_EQ(r.min_value, 1.0);
  ASSERT_EQ(r.bins.size(), 3u);
  EXPECT_EQ(r.bins[0].count, 1u);
  EXPECT_EQ(r.bins[1].count, 1u);
  EXPECT_EQ(r.bins[2].count, 2u);  // the maximum lands in the last bin
  EXPECT_EQ(r.bins[2].right, 4.0);
  EXPECT_EQ(r.to_csv().substr(0, 24), "bin_left,bin_right,count");
  EXPECT_EQ(spectrum_report(DenseMatrix::identity(3), 2).bins[0].left, 0.5);
}

}  // namespace
}  // namespace lipscope
