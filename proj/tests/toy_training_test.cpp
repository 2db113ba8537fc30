#include <gtest/gtest.h>

#include <cmath>

#include "lipscope/toy_training.hpp"

namespace lipscope {
namespace {

ToyTrainingConfig tiny() {
  ToyTrainingConfig c;
  c.net.depth = 2;
  c.steps = 5;
  return c;
}

TEST(ToyTraining, LossMatchesNetworkForward) {
  // The tape forward agrees with the library forward of the same network plus the head.
  const ToyTrainingConfig c = tiny();
  const ToyGradients g = toy_gradients(c, 1);
  const Network net = Network::build(c.net, c.seed);
  const DenseMatrix x = toy_batch(c, 1);
  const DenseMatrix pred = matmul(g.values.back(), net_forward(net, x).output);
  const DenseMatrix target = matmul(toy_teacher(c), x);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::pow(pred.data()[i] - target.data()[i], 2);
  EXPECT_NEAR(g.loss, s / static_cast<double>(pred.size()), 1e-12);
  EXPECT_EQ(g.ids.back(), "head");
  EXPECT_EQ(g.ids.front(), "l0.wq");
}

TEST(ToyTraining, GradientsMatchCentralDifferences) {
  const ToyTrainingConfig c = tiny();
  const ToyGradients g = toy_gradients(c, 2);
  const double h = 1e-6;
  for (std::size_t p = 0; p < g.values.size(); ++p) {
    // A handful of entries per weight keeps the test quick.
    for (std::size_t i = 0; i < g.values[p].size(); i += 1 + g.values[p].size() / 5) {
      auto plus = g.values, minus = g.values;
      plus[p].data()[i] += h;
      minus[p].data()[i] -= h;
      const double fd = (toy_loss(c, plus, 2) - toy_loss(c, minus, 2)) / (2 * h);
      const double an = g.grads[p].data()[i];
      EXPECT_NEAR(an, fd, 1e-6 * std::max(1.0, std::abs(fd))) << g.ids[p] << "[" << i << "]";
    }
  }
}

TEST(ToyTraining, TraceShapeAndDeterminism) {
  const ToyTrainingConfig c = tiny();
  const StepTrace a = run_toy_training(c);
  const StepTrace b = run_toy_training(c);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  EXPECT_FALSE(a.diverged);
  EXPECT_EQ(a.records.size(), c.steps * a.weight_ids.size());
  EXPECT_EQ(a.to_csv().substr(0, a.to_csv().find('\n')), "step,weight_id,sigma_max,max_update,loss");
}

TEST(ToyTraining, AdamStepsAreBoundedByLearningRate) {
  // With fixed correction the first AdamW update is lr * g / |g| per entry.
  ToyTrainingConfig c = tiny();
  c.steps = 1;
  c.adam_eps = 1e-30;
  for (const auto& r : run_toy_training(c).records) EXPECT_LE(r.max_update, c.lr * (1 + 1e-12));
}

TEST(ToyTraining, ZeroGradientDecayIsContraction) {
  ToyTrainingConfig c = tiny();
  c.zero_gradients = true;
  c.optimizer = OptimizerKind::SGD;
  c.lr = 0.1;
  c.weight_decay = 0.5;
  c.steps = 3;
  const StepTrace t = run_toy_training(c);
  const std::size_t n = t.weight_ids.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double s1 = t.records[i].sigma_max;
    const double s3 = t.records[2 * n + i].sigma_max;
    EXPECT_NEAR(s3, s1 * 0.95 * 0.95, 1e-9 * s1) << t.weight_ids[i];
  }
}

TEST(ToyTraining, SgdDivergesBeforeAdamW) {
  ToyTrainingConfig c;
  c.optimizer = OptimizerKind::SGD;
  const ThresholdResult sgd = divergence_threshold(c, 1e-3, 1e4, 8);
  c.optimizer = OptimizerKind::AdamW;
  const ThresholdResult adam = divergence_threshold(c, 1e-3, 1e4, 8);
  ASSERT_TRUE(sgd.found);
  EXPECT_LT(sgd.threshold, adam.threshold);
  c.optimizer = OptimizerKind::SGD;
  c.lr = sgd.threshold;
  EXPECT_TRUE(run_toy_training(c).diverged);
}

TEST(ToyTraining, Validation) {
  ToyTrainingConfig c = tiny();
  c.net.family = Family::TransformerSCSA;
  EXPECT_THROW(validate_toy(c), ValidationError);
  EXPECT_EQ(optimizer_kind_from_string("sgd"), OptimizerKind::SGD);
}

}  // namespace
}  // namespace lipscope
