#include <gtest/gtest.h>

#include <cmath>

#include "lipscope/attention.hpp"
#include "lipscope/lipschitz.hpp"
#include "lipscope/rng.hpp"

namespace lipscope {
namespace {

DenseMatrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  DenseMatrix m(r, c);
  Rng(seed).fill_normal(m.data(), sd);
  return m;
}

AttentionParams params(AttentionKind kind, std::size_t dim, std::size_t heads, std::uint64_t seed) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  AttentionParams p;
  p.kind = kind;
  p.dim = dim;
  p.heads = heads;
  p.wq = gaussian(dim, dim, seed, sd);
  p.wk = gaussian(dim, dim, seed + 1, sd);
  p.wv = gaussian(dim, dim, seed + 2, sd);
  return p;
}

// Element-by-element reference for one head of DPA: S_ij = q_i . k_j / sqrt(dh),
// P = softmax over i for each j, Y_:j = sum_i v_i P_ij.
DenseMatrix reference_dpa(const AttentionParams& p, const DenseMatrix& x) {
  const std::size_t n = x.cols();
  const std::size_t dh = p.head_dim();
  const DenseMatrix q = matmul(p.wq, x), k = matmul(p.wk, x), v = matmul(p.wv, x);
  DenseMatrix y(p.dim, n);
  for (std::size_t h = 0; h < p.heads; ++h)
    for (std::size_t j = 0; j < n; ++j) {
      Vector w(n);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t r = 0; r < dh; ++r) s += q(h * dh + r, i) * k(h * dh + r, j);
        w[i] = std::exp(s / std::sqrt(static_cast<double>(dh)));
        total += w[i];
      }
      for (std::size_t r = 0; r < dh; ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += v(h * dh + r, i) * w[i] / total;
        y(h * dh + r, j) = acc;
      }
    }
  return y;
}

TEST(Attention, DpaMatchesElementwiseReference) {
  const AttentionParams p = params(AttentionKind::DPA, 8, 2, 3);
  const DenseMatrix x = gaussian(8, 5, 4);
  const DenseMatrix got = attn_forward(p, x).output;
  const DenseMatrix want = reference_dpa(p, x);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-13);
}

TEST(Attention, ProbabilityColumnsSumToOne) {
  for (AttentionKind kind : {AttentionKind::DPA, AttentionKind::L2A, AttentionKind::SCSA}) {
    AttentionOptions o;
    o.keep_probabilities = true;
    const AttentionResult r = attn_forward(params(kind, 6, 3, 1), gaussian(6, 4, 2), o);
    ASSERT_EQ(r.probabilities.size(), 3u);
    for (const auto& pr : r.probabilities)
      for (std::size_t c = 0; c < pr.cols(); ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < pr.rows(); ++i) s += pr(i, c);
        EXPECT_NEAR(s, 1.0, 1e-14);
      }
  }
}

TEST(Attention, ScsaOutputScaledByNu) {
  AttentionParams p = params(AttentionKind::SCSA, 4, 1, 5);
  const DenseMatrix x = gaussian(4, 3, 6);
  const DenseMatrix y1 = attn_forward(p, x).output;
  p.nu = 3.0;
  const DenseMatrix y3 = attn_forward(p, x).output;
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y3.data()[i], 3.0 * y1.data()[i], 1e-14);
}

TEST(Attention, BoundsByKind) {
  EXPECT_TRUE(attn_lip_bound(params(AttentionKind::DPA, 4, 1, 0), 4).is_infinite());
  EXPECT_TRUE(attn_lip_bound(params(AttentionKind::L2A, 4, 1, 0), 4).is_infinite());
  AttentionParams tied = params(AttentionKind::L2A, 4, 1, 0);
  tied.wk = tied.wq;
  EXPECT_FALSE(attn_lip_bound(tied, 4).is_infinite());
  EXPECT_FALSE(attn_lip_bound(params(AttentionKind::SCSA, 4, 2, 0), 4).is_infinite());
}

TEST(Attention, FiniteBoundsDominateSamples) {
  AttentionParams tied = params(AttentionKind::L2A, 4, 1, 7);
  tied.wk = tied.wq;
  for (const AttentionParams& p : {tied, params(AttentionKind::SCSA, 4, 1, 8)}) {
    const std::size_t n = 3;
    EstimatorOptions o;
    o.base_points = 5;
    o.perturbations = 20;
    o.epsilon = 1e-3;
    const MapFn f = [&](const DenseMatrix& x) { return MapOutput{attn_forward(p, x).output, false}; };
    const double ks = estimate_K(f, {4, n}, o).value;
    EXPECT_LE(ks, attn_lip_bound(p, n).value());
  }
}

TEST(Attention, DpaSensitivityGrowsWithInputScale) {
  const AttentionParams p = params(AttentionKind::DPA, 4, 1, 9);
  EstimatorOptions o;
  o.base_points = 1;
  o.perturbations = 20;
  const MapFn f = [&](const DenseMatrix& x) { return MapOutput{attn_forward(p, x).output, false}; };
  // One large token among zero tokens: the local gain grows with its size.
  auto at_scale = [&](double s) {
    EstimatorOptions so = o;
    DenseMatrix x(4, 4);
    const DenseMatrix g = gaussian(4, 1, 10);
    for (std::size_t r = 0; r < 4; ++r) x(r, 0) = s * g(r, 0);
    so.bases = {x};
    return estimate_K(f, {4, 4}, so).value;
  };
  EXPECT_GT(at_scale(8.0), 2.0 * at_scale(1.0));
  EXPECT_GT(at_scale(32.0), 10.0 * at_scale(4.0));
}

TEST(Attention, NumericJacobianMatchesJvp) {
  const AttentionParams p = params(AttentionKind::SCSA, 4, 2, 11);
  const DenseMatrix x = gaussian(4, 3, 12);
  const DenseMatrix j = attn_jacobian_numeric(p, x);
  const DenseMatrix z = gaussian(4, 3, 13);
  const Vector jvp = matvec_t(j, vec(z));
  const Vector direct = vec(attn_jvp_numeric(p, x, z, 1e-6));
  for (std::size_t i = 0; i < jvp.size(); ++i) EXPECT_NEAR(jvp[i], direct[i], 1e-7);
}

TEST(Attention, OverflowFlag) {
  const AttentionParams p = params(AttentionKind::DPA, 4, 1, 14);
  AttentionOptions o;
  o.overflow_range = 10.0;
  EXPECT_TRUE(attn_forward(p, gaussian(4, 3, 15) * 100.0, o).overflow);
  EXPECT_FALSE(attn_forward(p, gaussian(4, 3, 15) * 0.01, o).overflow);
}

TEST(Attention, Validation) {
  AttentionParams p = params(AttentionKind::SCSA, 6, 4, 0);
  p.tau = 0.0;
  try {
    validate_attention(p);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.violations().size(), 2u);
  }
  EXPECT_THROW(attn_forward(params(AttentionKind::DPA, 4, 1, 0), DenseMatrix(3, 2)), ShapeError);
  EXPECT_EQ(attention_kind_from_string("scsa"), AttentionKind::SCSA);
}

TEST(PhiInverse, SolvesDefiningEquation) {
  for (double y : {0.5, 1.0, 7.0, 1023.0}) {
    const double x = phi_inverse(y);
    EXPECT_NEAR(x * std::exp(x + 1.0), y, 1e-8 * std::max(1.0, y));
  }
  EXPECT_EQ(phi_inverse(0.0), 0.0);
  EXPECT_THROW(phi_inverse(-1.0), std::invalid_argument);
}

}  // namespace
}  // namespace lipscope
