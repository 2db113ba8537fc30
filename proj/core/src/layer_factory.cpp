#include "lipscope/layer_factory.hpp"

#include <algorithm>
#include <cmath>
#include <variant>

#include "lipscope/rng.hpp"

namespace lipscope {

namespace {

DenseMatrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed, std::uint64_t id) {
  DenseMatrix m(rows, cols);
  Rng(seed, {kStreamWeights, id}).fill_normal(m.data(), stddev);
  return m;
}

Vector gaussian_vec(std::size_t n, double mean, double stddev, std::uint64_t seed, std::uint64_t id) {
  Vector v(n);
  Rng(seed, {kStreamWeights, id}).fill_normal(v, stddev);
  for (double& a : v) a += mean;
  return v;
}

std::size_t square_side(std::size_t tokens) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(tokens))));
  if (side * side != tokens) throw ValidationError("random_layer: conv kinds need a square token count");
  return side;
}

LayerSpec conv(std::size_t tokens, std::size_t kernel, std::size_t stride, std::size_t padding, std::uint64_t seed) {
  const std::size_t side = square_side(tokens);
  constexpr std::size_t kIn = 2;
  constexpr std::size_t kOut = 3;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(kernel * kernel * kIn));
  Conv2D c{gaussian(kOut, kernel * kernel * kIn, stddev, seed, 0), gaussian_vec(kOut, 0.0, 0.1, seed, 1),
           kIn, kernel, stride, padding, side, side};
  return c;
}

}  // namespace

std::vector<std::string> random_layer_kinds() {
  return {"Linear",  "Conv2D",         "Conv2DDisjoint", "Sigmoid",    "Softmax",    "ReLU",
          "GELU",    "Swish",          "LayerNorm",      "BatchNormTrain", "BatchNormInfer", "RMSNorm",
          "CenterNorm", "WeightNorm",  "FFN",            "Residual",   "WeightedResidual", "MaxPool",
          "AvgPool"};
}

RandomLayer random_layer(const std::string& kind, std::size_t dim, std::size_t tokens, std::uint64_t seed) {
  if (dim == 0 || tokens == 0) throw ValidationError("random_layer: dim and tokens must be >= 1");
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  Shape in{dim, tokens};
  auto make = [&]() -> LayerSpec {
    if (kind == "Linear") return Linear{gaussian(dim, dim, s, seed, 0), gaussian_vec(dim, 0.0, 0.1, seed, 1)};
    if (kind == "Conv2D" || kind == "Conv2DDisjoint") {
      in = {2, tokens};
      if (kind == "Conv2D") return conv(tokens, 3, 1, 1, seed);
      if (square_side(tokens) % 2 != 0) throw ValidationError("random_layer: Conv2DDisjoint needs an even side");
      return conv(tokens, 2, 2, 0, seed);
    }
    if (kind == "Sigmoid") return Sigmoid{};
    if (kind == "Softmax") return Softmax{};
    if (kind == "ReLU") return ReLU{};
    if (kind == "GELU") return GELU{};
    if (kind == "Swish") return Swish{};
    if (kind == "LayerNorm")
      return LayerNorm{gaussian_vec(dim, 1.0, 0.2, seed, 0), gaussian_vec(dim, 0.0, 0.1, seed, 1), 1e-3};
    if (kind == "RMSNorm")
      return RMSNorm{gaussian_vec(dim, 1.0, 0.2, seed, 0), gaussian_vec(dim, 0.0, 0.1, seed, 1), 1e-3};
    if (kind == "CenterNorm") return CenterNorm{gaussian_vec(dim, 1.0, 0.2, seed, 0), gaussian_vec(dim, 0.0, 0.1, seed, 1)};
    if (kind == "BatchNormTrain" || kind == "BatchNormInfer") {
      const bool train = kind == "BatchNormTrain";
      if (train && tokens < 2) throw ValidationError("random_layer: BatchNormTrain needs >= 2 tokens");
      Vector var = gaussian_vec(dim, 0.0, 1.0, seed, 3);
      for (double& v : var) v = 0.5 + v * v;
      return BatchNorm{gaussian_vec(dim, 1.0, 0.2, seed, 0), gaussian_vec(dim, 0.0, 0.1, seed, 1),
                       gaussian_vec(dim, 0.0, 0.5, seed, 2), std::move(var), 1e-3,
                       train ? BatchNormMode::Training : BatchNormMode::Inference};
    }
    if (kind == "WeightNorm")
      return WeightNorm{gaussian(dim, dim, s, seed, 0), gaussian_vec(dim, 1.0, 0.2, seed, 1),
                        gaussian_vec(dim, 0.0, 0.1, seed, 2), 1e-5};
    if (kind == "FFN") {
      const double s2 = 1.0 / std::sqrt(static_cast<double>(2 * dim));
      return FFN{gaussian(2 * dim, dim, s, seed, 0), gaussian_vec(2 * dim, 0.0, 0.1, seed, 1),
                 gaussian(dim, 2 * dim, s2, seed, 2), gaussian_vec(dim, 0.0, 0.1, seed, 3)};
    }
    if (kind == "Residual")
      return make_residual({Linear{gaussian(dim, dim, s, seed, 0), gaussian_vec(dim, 0.0, 0.1, seed, 1)}, GELU{}}, 0.5);
    if (kind == "WeightedResidual") {
      Vector nu = gaussian_vec(dim, 0.0, 0.5, seed, 2);
      for (double& v : nu) v = std::clamp(v, -1.5, 1.5);
      return make_weighted_residual(
          {Linear{gaussian(dim, dim, s, seed, 0), gaussian_vec(dim, 0.0, 0.1, seed, 1)}, Swish{}}, std::move(nu));
    }
    if (kind == "MaxPool") return MaxPool{};
    if (kind == "AvgPool") return AvgPool{dim};
    throw ValidationError("random_layer: unknown kind '" + kind + "'");
  };
  LayerSpec layer = make();
  validate_layer(layer);
  (void)layer_output_shape(layer, in);
  return {kind, std::move(layer), in};
}

DenseMatrix random_layer_input(const RandomLayer& layer, std::uint64_t seed, std::uint64_t index, double kink_margin) {
  DenseMatrix x(layer.input.rows, layer.input.cols);
  Rng(seed, {kStreamData, index}).fill_normal(x.data());
  if (kink_margin <= 0.0) return x;
  if (layer.kind == "ReLU") {
    for (double& v : x.data()) v += v < 0.0 ? -kink_margin : kink_margin;
    return x;
  }
  if (layer.kind == "FFN") {
    const auto& f = std::get<FFN>(layer.layer.op);
    for (std::uint64_t attempt = 0; attempt < 10000; ++attempt) {
      Rng(seed, {kStreamData, index, attempt}).fill_normal(x.data());
      DenseMatrix pre = matmul(f.w1, x);
      bool ok = true;
      for (std::size_t r = 0; r < pre.rows() && ok; ++r)
        for (std::size_t c = 0; c < pre.cols() && ok; ++c)
          ok = std::abs(pre(r, c) + (f.b1.empty() ? 0.0 : f.b1[r])) >= kink_margin;
      if (ok) return x;
    }
    throw DegenerateInputError("random_layer_input: no FFN input clears the kink margin");
  }
  return x;
}

}  // namespace lipscope
