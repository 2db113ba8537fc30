#pragma once

// Experiment networks: ResNet-style convolution stacks and post-norm
// Transformer stacks, plus hand-assembled stage lists.
//
// A network is a list of layers; each layer is a list of stages and each stage
// computes post(shortcut(x) + body(x)), where body is a layer chain or an
// attention block, the shortcut is absent, plain (x + body) or weighted
// (x + ν ⊙ body), and post is an optional chain (the post-norm).
//
//   ResNet layer:       x + BN(Conv(ReLU(BN(Conv(x)))))
//   Transformer layer:  y = LN(x + SA(x)),  out = LN(y + FFN(y))
//
// Inputs are D x N matrices: D channels over an H x W grid in raster order
// (N = H * W), which is also the token sequence a Transformer sees.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lipscope/attention.hpp"
#include "lipscope/init.hpp"
#include "lipscope/layers.hpp"

namespace lipscope {

enum class Family { ResNetConv, TransformerDPA, TransformerSCSA, TransformerL2A };
enum class NormLayerKind { LayerNorm, BatchNorm, RMSNorm, CenterNorm };

std::string to_string(Family family);
Family family_from_string(const std::string& text);
std::string to_string(NormLayerKind kind);
NormLayerKind norm_layer_kind_from_string(const std::string& text);
bool is_transformer(Family family);
AttentionKind attention_kind_of(Family family);

struct NetworkSpec {
  Family family = Family::TransformerDPA;
  std::size_t depth = 12;
  std::size_t width = 1024;
  std::size_t heads = 8;
  std::size_t ffn_expand = 4;
  bool use_residual = true;
  bool use_norm = true;
  /// Defaults to BatchNorm for ResNetConv and LayerNorm for Transformers.
  std::optional<NormLayerKind> norm_kind;
  double norm_eps = 1e-5;
  InitSpec init{InitMethod::XavierNormal, 2.0};
  double droppath_p = 0.0;
  /// When set, residual branches are scaled by ν (weighted residual shortcut).
  std::optional<double> wrs_nu_init;
  std::size_t conv_kernel = 3;
  std::size_t conv_stride = 1;
  std::size_t conv_padding = 1;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  double scsa_nu = 1.0;
  double scsa_tau = 5.0;
  double scsa_eps = 1e-5;

  std::size_t tokens() const { return input_height * input_width; }
  NormLayerKind effective_norm() const;
};

/// Full-size configuration: 12 layers, width 1024, 8 heads, 32 x 32 input.
NetworkSpec paper_default_spec(Family family);
/// Laptop-sized variant: width 256, 8 heads, 16 x 16 input.
NetworkSpec desk_spec(Family family);

/// Throws ValidationError listing every violated constraint.
void validate_spec(const NetworkSpec& spec);

enum class ShortcutKind { None, Identity, Weighted };

struct Stage {
  std::variant<LayerChain, AttentionParams> body;
  ShortcutKind shortcut = ShortcutKind::None;
  Vector nu;        ///< per-feature branch weights (Weighted)
  LayerChain post;  ///< applied after the sum

  bool has_shortcut() const { return shortcut != ShortcutKind::None; }
};

using NetLayer = std::vector<Stage>;

class Network {
 public:
  static Network build(const NetworkSpec& spec, std::uint64_t seed);
  /// Hand-assembled network; the input shape is checked on use.
  static Network from_layers(std::vector<NetLayer> layers, Shape input);

  const std::vector<NetLayer>& layers() const { return layers_; }
  std::size_t depth() const { return layers_.size(); }
  Shape input_shape() const { return input_; }
  const std::optional<NetworkSpec>& spec() const { return spec_; }

 private:
  std::vector<NetLayer> layers_;
  Shape input_;
  std::optional<NetworkSpec> spec_;
};

struct ForwardOptions {
  /// Values with magnitude above this count as overflow (simulated precision).
  double overflow_range = std::numeric_limits<double>::infinity();
  /// false: throw OverflowError at the first offending layer; true: flag and continue.
  bool probe_overflow = false;
  /// Enables DropPath on shortcut stages with the spec's probability.
  std::optional<std::uint64_t> droppath_seed;
  /// Run only the first `max_layers` layers (all when unset).
  std::optional<std::size_t> max_layers;
  /// Keep the output of every layer (index 0 is the input).
  bool keep_taps = false;
};

struct ForwardResult {
  DenseMatrix output;
  std::vector<DenseMatrix> taps;
  std::vector<double> layer_max_abs;  ///< per layer, max |activation| inside it
  bool overflow = false;
  std::optional<std::size_t> overflow_layer;  ///< 1-based layer index
};

ForwardResult net_forward(const Network& net, const DenseMatrix& x, const ForwardOptions& options = {});

/// Output of one stage.
DenseMatrix stage_forward(const Stage& stage, const DenseMatrix& x, const AttentionOptions& attn = {},
                          bool* overflow = nullptr, double* max_abs_seen = nullptr);

inline constexpr std::size_t kJacobianGuard = 4096;

/// Input-output Jacobian (denominator layout) as the ordered product of stage
/// Jacobians. Attention stages use numeric JVPs. Throws ResourceError when any
/// activation has more than kJacobianGuard entries.
DenseMatrix net_jacobian_product(const Network& net, const DenseMatrix& x);

/// Per-layer Jacobians J_l (d x^l / d x^{l-1}); same guard.
std::vector<DenseMatrix> net_layer_jacobians(const Network& net, const DenseMatrix& x);

/// Gaussian input of the network's input shape from substream (seed, data, index).
DenseMatrix random_input(const Network& net, std::uint64_t seed, std::uint64_t index = 0);

}  // namespace lipscope
