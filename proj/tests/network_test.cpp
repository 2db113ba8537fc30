#include <gtest/gtest.h>

#include <cmath>

#include "lipscope/network.hpp"

namespace lipscope {
namespace {

NetworkSpec small(Family f, std::size_t depth = 2) {
  NetworkSpec s = desk_spec(f);
  s.depth = depth;
  s.width = 4;
  s.heads = 2;
  s.input_height = 2;
  s.input_width = 2;
  return s;
}

double max_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Full Jacobian (denominator layout) by central differences on every input coordinate.
DenseMatrix fd_jacobian(const Network& net, const DenseMatrix& x, double h = 1e-6) {
  const Vector base = vec(net_forward(net, x).output);
  DenseMatrix j(x.size(), base.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vector xp = vec(x), xm = vec(x);
    xp[i] += h;
    xm[i] -= h;
    const Vector fp = vec(net_forward(net, unvec(xp, x.rows(), x.cols())).output);
    const Vector fm = vec(net_forward(net, unvec(xm, x.rows(), x.cols())).output);
    for (std::size_t k = 0; k < fp.size(); ++k) j(i, k) = (fp[k] - fm[k]) / (2 * h);
  }
  return j;
}

TEST(Presets, PaperAndDeskValues) {
  const NetworkSpec p = paper_default_spec(Family::TransformerDPA);
  EXPECT_EQ(p.depth, 12u);
  EXPECT_EQ(p.width, 1024u);
  EXPECT_EQ(p.heads, 8u);
  EXPECT_EQ(p.tokens(), 1024u);
  EXPECT_EQ(p.init.gain, 2.0);
  const NetworkSpec d = desk_spec(Family::ResNetConv);
  EXPECT_EQ(d.width, 256u);
  EXPECT_EQ(d.tokens(), 256u);
  EXPECT_EQ(d.effective_norm(), NormLayerKind::BatchNorm);
  EXPECT_EQ(desk_spec(Family::TransformerSCSA).effective_norm(), NormLayerKind::LayerNorm);
}

TEST(Presets, FamilyNames) {
  for (Family f : {Family::ResNetConv, Family::TransformerDPA, Family::TransformerSCSA, Family::TransformerL2A})
    EXPECT_EQ(family_from_string(to_string(f)), f);
  EXPECT_EQ(family_from_string("dpa"), Family::TransformerDPA);
  EXPECT_THROW(family_from_string("mlp"), std::invalid_argument);
}

TEST(Build, TransformerLayerIsPostNormComposition) {
  const Network net = Network::build(small(Family::TransformerDPA, 1), 3);
  const DenseMatrix x = random_input(net, 3);
  const auto& layer = net.layers()[0];
  const auto& attn = std::get<AttentionParams>(layer[0].body);
  const auto& ffn = std::get<LayerChain>(layer[1].body);
  DenseMatrix y = x + attn_forward(attn, x).output;
  y = chain_forward(layer[0].post, y);
  DenseMatrix z = y + chain_forward(ffn, y);
  z = chain_forward(layer[1].post, z);
  EXPECT_LT(max_diff(net_forward(net, x).output, z), 1e-13);
}

TEST(Build, NormMatchesStandardizedColumns) {
  // Network LayerNorm is (x - mean) / sqrt(var + eps) per column.
  const Network net = Network::build(small(Family::TransformerSCSA, 1), 1);
  const DenseMatrix out = net_forward(net, random_input(net, 1)).output;
  for (std::size_t c = 0; c < out.cols(); ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < out.rows(); ++r) m += out(r, c);
    m /= static_cast<double>(out.rows());
    for (std::size_t r = 0; r < out.rows(); ++r) v += (out(r, c) - m) * (out(r, c) - m);
    v /= static_cast<double>(out.rows());
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(Build, ResNetLayerWithInferenceBatchNorm) {
  NetworkSpec s = small(Family::ResNetConv, 1);
  const Network net = Network::build(s, 5);
  const DenseMatrix x = random_input(net, 5);
  const auto& body = std::get<LayerChain>(net.layers()[0][0].body);
  ASSERT_EQ(body.size(), 5u);  // conv, bn, relu, conv, bn
  const DenseMatrix want = x + chain_forward(body, x);
  EXPECT_LT(max_diff(net_forward(net, x).output, want), 1e-13);
  s.use_residual = false;
  const Network plain = Network::build(s, 5);
  EXPECT_LT(max_diff(net_forward(plain, x).output, chain_forward(body, x)), 1e-13);
}

TEST(Build, DeterministicPerSeed) {
  const NetworkSpec s = small(Family::TransformerSCSA);
  const Network a = Network::build(s, 9), b = Network::build(s, 9), c = Network::build(s, 10);
  const DenseMatrix x = random_input(a, 1);
  EXPECT_EQ(net_forward(a, x).output, net_forward(b, x).output);
  EXPECT_NE(net_forward(a, x).output, net_forward(c, x).output);
  EXPECT_EQ(random_input(a, 1, 2), random_input(b, 1, 2));
  EXPECT_NE(random_input(a, 1, 2), random_input(a, 1, 3));
}

TEST(Build, DeeperNetworkSharesPrefixWeights) {
  const Network shallow = Network::build(small(Family::TransformerDPA, 2), 4);
  const Network deep = Network::build(small(Family::TransformerDPA, 5), 4);
  const DenseMatrix x = random_input(shallow, 0);
  ForwardOptions o;
  o.max_layers = 2;
  EXPECT_EQ(net_forward(deep, x, o).output, net_forward(shallow, x).output);
}

TEST(Build, WeightedResidualUsesNu) {
  NetworkSpec s = small(Family::TransformerDPA, 1);
  s.wrs_nu_init = 0.25;
  const Network net = Network::build(s, 1);
  EXPECT_EQ(net.layers()[0][0].shortcut, ShortcutKind::Weighted);
  EXPECT_EQ(net.layers()[0][0].nu, Vector(4, 0.25));
}

TEST(Forward, TapsAndOverflow) {
  NetworkSpec s = small(Family::TransformerDPA, 3);
  s.use_norm = false;
  const Network net = Network::build(s, 2);
  const DenseMatrix x = random_input(net, 2);
  ForwardOptions o;
  o.keep_taps = true;
  const ForwardResult r = net_forward(net, x, o);
  ASSERT_EQ(r.taps.size(), 4u);
  EXPECT_EQ(r.taps[0], x);
  EXPECT_EQ(r.taps[3], r.output);
  ASSERT_EQ(r.layer_max_abs.size(), 3u);

  ForwardOptions tight;
  tight.overflow_range = 1e-3;
  try {
    net_forward(net, x, tight);
    FAIL() << "expected OverflowError";
  } catch (const OverflowError& e) {
    EXPECT_EQ(e.layer_index(), 1u);
  }
  tight.probe_overflow = true;
  const ForwardResult flagged = net_forward(net, x, tight);
  EXPECT_TRUE(flagged.overflow);
  EXPECT_EQ(flagged.overflow_layer, std::optional<std::size_t>(1));
}

TEST(Jacobian, ProductMatchesFiniteDifferences) {
  for (Family f : {Family::TransformerDPA, Family::TransformerSCSA, Family::ResNetConv}) {
    const Network net = Network::build(small(f), 6);
    const DenseMatrix x = random_input(net, 6);
    const DenseMatrix j = net_jacobian_product(net, x);
    const DenseMatrix fd = fd_jacobian(net, x);
    ASSERT_EQ(j.rows(), fd.rows());
    double scale = 0.0;
    for (double v : fd.data()) scale = std::max(scale, std::abs(v));
    EXPECT_LT(max_diff(j, fd), 1e-5 * scale) << to_string(f);
    const auto layers = net_layer_jacobians(net, x);
    ASSERT_EQ(layers.size(), 2u);
    EXPECT_LT(max_diff(matmul(layers[0], layers[1]), j), 1e-12 * scale);
  }
}

TEST(Jacobian, ResourceGuard) {
  NetworkSpec s = small(Family::TransformerDPA, 1);
  s.width = 128;
  s.input_height = 8;
  s.input_width = 8;
  const Network net = Network::build(s, 0);
  EXPECT_THROW(net_jacobian_product(net, random_input(net, 0)), ResourceError);
}

TEST(Validation, SpecProblemsAreListed) {
  NetworkSpec s = small(Family::TransformerDPA);
  s.heads = 3;
  s.depth = 0;
  try {
    validate_spec(s);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_GE(e.violations().size(), 2u);
  }
  EXPECT_THROW(Network::build(s, 0), ValidationError);
}

}  // namespace
}  // namespace lipscope
