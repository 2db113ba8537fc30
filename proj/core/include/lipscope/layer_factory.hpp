#pragma once

// Randomly parameterized layers of every kind, for Jacobian probes, bound
// checks and the jacobian-check subcommand.

#include <cstdint>
#include <string>
#include <vector>

#include "lipscope/layers.hpp"

namespace lipscope {

struct RandomLayer {
  std::string kind;
  LayerSpec layer;
  Shape input;
};

/// Kind names accepted by random_layer: the layer kinds, with BatchNorm split
/// into BatchNormTrain / BatchNormInfer and Conv2D into Conv2D (3x3, stride 1,
/// padding 1) and Conv2DDisjoint (2x2, stride 2).
std::vector<std::string> random_layer_kinds();

/// Layer of `kind` acting on `dim` features and `tokens` columns; weights come
/// from substream (seed, weights, ...). Conv kinds use a 2-channel square image
/// with `tokens` pixels (tokens must be a perfect square, even for the
/// disjoint kind). Throws ValidationError for an unknown kind or bad sizes.
RandomLayer random_layer(const std::string& kind, std::size_t dim, std::size_t tokens, std::uint64_t seed);

/// Gaussian input of the layer's shape from substream (seed, data, index).
/// For ReLU and FFN, draws are redone until every pre-activation is at least
/// `kink_margin` away from zero.
DenseMatrix random_layer_input(const RandomLayer& layer, std::uint64_t seed, std::uint64_t index = 0,
                               double kink_margin = 0.0);

}  // namespace lipscope
