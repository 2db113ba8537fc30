#pragma once

// Seeded randomness with explicit stream splitting.
//
// Every random object (a weight matrix, a base point, a perturbation, a
// DropPath draw) gets its own substream: the engine is seeded with
// derive_seed(root, path), where path names the object, e.g.
// {kStreamWeights, layer, matrix_id}. Substreams do not depend on how many
// draws other objects made, so adding samples or layers never perturbs the
// existing ones. The engine is std::mt19937_64, whose output sequence is fixed
// by the standard; normal and uniform variates are produced here rather than
// by <random> distributions so results match across standard libraries.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace lipscope {

std::uint64_t splitmix64(std::uint64_t x);

/// Fold a path of identifiers into a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

// Stream tags for derive_seed paths.
inline constexpr std::uint64_t kStreamWeights = 0x57;
inline constexpr std::uint64_t kStreamBasePoint = 0x42;
inline constexpr std::uint64_t kStreamPerturbation = 0x50;
inline constexpr std::uint64_t kStreamDropPath = 0x44;
inline constexpr std::uint64_t kStreamData = 0x54;
inline constexpr std::uint64_t kStreamPowerIteration = 0x49;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, std::initializer_list<std::uint64_t> path)
      : engine_(derive_seed(root, path)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Marsaglia polar method).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  void fill_normal(std::span<double> out, double stddev = 1.0);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace lipscope
