#include "lipscope/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "lipscope/rng.hpp"

namespace lipscope {

namespace {

std::string lower(const std::string& s) {
  std::string t;
  for (char c : s) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return t;
}

// Matrix ids inside a layer's weight substream.
enum : std::uint64_t { kWq = 0, kWk = 1, kWv = 2, kW1 = 3, kW2 = 4, kConv1 = 0, kConv2 = 1 };

std::uint64_t weight_seed(std::uint64_t seed, std::size_t layer, std::uint64_t id) {
  return derive_seed(seed, {kStreamWeights, layer, id});
}

// Normalizations inside experiment networks keep unit-scale activations:
// LayerNorm and RMSNorm use gamma = sqrt(D) with eps scaled by D, which is the
// usual per-coordinate (x - mean) / sqrt(var + eps) form.
LayerSpec make_net_norm(NormLayerKind kind, std::size_t d, double eps) {
  const double dd = static_cast<double>(d);
  switch (kind) {
    case NormLayerKind::LayerNorm:
      return LayerNorm{Vector(d, std::sqrt(dd)), Vector(d, 0.0), dd * eps};
    case NormLayerKind::RMSNorm:
      return RMSNorm{Vector(d, std::sqrt(dd)), Vector(d, 0.0), dd * eps};
    case NormLayerKind::BatchNorm:
      return make_batch_norm(d, BatchNormMode::Inference, eps);
    case NormLayerKind::CenterNorm:
      return make_center_norm(d);
  }
  throw std::logic_error("unreachable");
}

void track(double* seen, const DenseMatrix& m) {
  if (seen) *seen = std::max(*seen, max_abs(m.data()));
}

bool exceeds(const DenseMatrix& m, double range) {
  for (double v : m.data())
    if (!(std::abs(v) <= range)) return true;
  return false;
}

DenseMatrix body_forward(const Stage& stage, const DenseMatrix& x, const AttentionOptions& attn, bool* overflow) {
  if (const auto* chain = std::get_if<LayerChain>(&stage.body)) return chain_forward(*chain, x);
  AttentionResult r = attn_forward(std::get<AttentionParams>(stage.body), x, attn);
  if (overflow && r.overflow) *overflow = true;
  return std::move(r.output);
}

DenseMatrix combine(const Stage& stage, const DenseMatrix& x, DenseMatrix branch) {
  if (stage.shortcut == ShortcutKind::Weighted) {
    for (std::size_t r = 0; r < branch.rows(); ++r)
      for (double& v : branch.row(r)) v *= stage.nu[r];
  }
  if (stage.has_shortcut()) branch += x;
  return branch;
}

DenseMatrix stage_jacobian(const Stage& stage, const DenseMatrix& x) {
  DenseMatrix j;
  if (const auto* chain = std::get_if<LayerChain>(&stage.body)) {
    j = chain_jacobian(*chain, x).matrix;
  } else {
    j = attn_jacobian_numeric(std::get<AttentionParams>(stage.body), x);
  }
  if (stage.has_shortcut()) {
    if (j.rows() != j.cols()) throw ShapeError("shortcut stage must preserve shape");
    const std::size_t d = x.rows();
    for (std::size_t i = 0; i < j.rows(); ++i) {
      if (stage.shortcut == ShortcutKind::Weighted) {
        auto row = j.row(i);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] *= stage.nu[c % d];
      }
      j(i, i) += 1.0;
    }
  }
  if (!stage.post.empty()) {
    const DenseMatrix sum = combine(stage, x, body_forward(stage, x, {}, nullptr));
    j = matmul(j, chain_jacobian(stage.post, sum).matrix);
  }
  return j;
}

void check_guard(const DenseMatrix& x) {
  if (x.size() > kJacobianGuard)
    throw ResourceError("Jacobian guard: activation with " + std::to_string(x.size()) + " entries exceeds " +
                        std::to_string(kJacobianGuard));
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::ResNetConv: return "resnet_conv";
    case Family::TransformerDPA: return "transformer_dpa";
    case Family::TransformerSCSA: return "transformer_scsa";
    case Family::TransformerL2A: return "transformer_l2a";
  }
  return "?";
}

Family family_from_string(const std::string& text) {
  const std::string t = lower(text);
  for (Family f : {Family::ResNetConv, Family::TransformerDPA, Family::TransformerSCSA, Family::TransformerL2A})
    if (t == to_string(f)) return f;
  if (t == "resnet") return Family::ResNetConv;
  if (t == "dpa") return Family::TransformerDPA;
  if (t == "scsa") return Family::TransformerSCSA;
  if (t == "l2a") return Family::TransformerL2A;
  throw std::invalid_argument("unknown family '" + text + "'");
}

std::string to_string(NormLayerKind k) {
  switch (k) {
    case NormLayerKind::LayerNorm: return "ln";
    case NormLayerKind::BatchNorm: return "bn";
    case NormLayerKind::RMSNorm: return "rmsnorm";
    case NormLayerKind::CenterNorm: return "centernorm";
  }
  return "?";
}

NormLayerKind norm_layer_kind_from_string(const std::string& text) {
  const std::string t = lower(text);
  for (NormLayerKind k : {NormLayerKind::LayerNorm, NormLayerKind::BatchNorm, NormLayerKind::RMSNorm,
                          NormLayerKind::CenterNorm})
    if (t == to_string(k)) return k;
  if (t == "layernorm") return NormLayerKind::LayerNorm;
  if (t == "batchnorm") return NormLayerKind::BatchNorm;
  throw std::invalid_argument("unknown norm kind '" + text + "'");
}

bool is_transformer(Family f) { return f != Family::ResNetConv; }

AttentionKind attention_kind_of(Family f) {
  switch (f) {
    case Family::TransformerSCSA: return AttentionKind::SCSA;
    case Family::TransformerL2A: return AttentionKind::L2A;
    default: return AttentionKind::DPA;
  }
}

NormLayerKind NetworkSpec::effective_norm() const {
  if (norm_kind) return *norm_kind;
  return family == Family::ResNetConv ? NormLayerKind::BatchNorm : NormLayerKind::LayerNorm;
}

NetworkSpec paper_default_spec(Family family) {
  NetworkSpec s;
  s.family = family;
  return s;
}

NetworkSpec desk_spec(Family family) {
  NetworkSpec s;
  s.family = family;
  s.width = 256;
  s.input_height = 16;
  s.input_width = 16;
  return s;
}

void validate_spec(const NetworkSpec& s) {
  std::vector<std::string> v;
  if (s.depth == 0) v.push_back("depth must be >= 1");
  if (s.width == 0) v.push_back("width must be >= 1");
  if (s.input_height == 0 || s.input_width == 0) v.push_back("input height and width must be >= 1");
  if (is_transformer(s.family)) {
    if (s.heads == 0 || s.heads > s.width) v.push_back("heads must satisfy 1 <= heads <= width");
    else if (s.width % s.heads != 0) v.push_back("width must be divisible by heads");
    if (s.ffn_expand == 0) v.push_back("ffn_expand must be >= 1");
    if (s.family == Family::TransformerSCSA && !(s.scsa_nu > 0.0 && s.scsa_tau > 0.0 && s.scsa_eps > 0.0))
      v.push_back("scsa nu, tau and eps must be > 0");
  } else {
    if (s.conv_kernel == 0 || s.conv_stride == 0) v.push_back("conv kernel and stride must be >= 1");
    // Shortcuts and stacking need every block to keep the spatial shape.
    const std::size_t h = s.input_height + 2 * s.conv_padding;
    const std::size_t w = s.input_width + 2 * s.conv_padding;
    if (s.conv_kernel > h || s.conv_kernel > w || (h - s.conv_kernel) / s.conv_stride + 1 != s.input_height ||
        (w - s.conv_kernel) / s.conv_stride + 1 != s.input_width)
      v.push_back("conv kernel/stride/padding must preserve the input height and width");
  }
  if (!(s.droppath_p >= 0.0 && s.droppath_p <= 1.0)) v.push_back("droppath_p must be in [0, 1]");
  if (!(s.norm_eps > 0.0)) v.push_back("norm_eps must be > 0");
  if (s.wrs_nu_init) {
    if (!s.use_residual) v.push_back("wrs_nu_init requires use_residual");
    if (!(std::abs(*s.wrs_nu_init) <= kDefaultResidualClamp)) v.push_back("|wrs_nu_init| must be <= 2");
  }
  if (!(s.init.gain > 0.0)) v.push_back("init gain must be > 0");
  if (!v.empty()) throw ValidationError(std::move(v));
}

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  Network net;
  net.spec_ = spec;
  const std::size_t d = spec.width;
  net.input_ = Shape{d, spec.tokens()};

  InitSpec init = spec.init;
  init.depth = spec.depth;
  const ShortcutKind shortcut = !spec.use_residual ? ShortcutKind::None
                                : spec.wrs_nu_init ? ShortcutKind::Weighted
                                                   : ShortcutKind::Identity;
  const Vector nu = spec.wrs_nu_init ? Vector(d, *spec.wrs_nu_init) : Vector{};
  const NormLayerKind norm = spec.effective_norm();

  for (std::size_t l = 0; l < spec.depth; ++l) {
    NetLayer layer;
    if (is_transformer(spec.family)) {
      AttentionParams attn;
      attn.kind = attention_kind_of(spec.family);
      attn.dim = d;
      attn.heads = spec.heads;
      attn.wq = init_matrix(init, d, d, weight_seed(seed, l, kWq));
      attn.wk = init_matrix(init, d, d, weight_seed(seed, l, kWk));
      attn.wv = init_matrix(init, d, d, weight_seed(seed, l, kWv));
      attn.nu = spec.scsa_nu;
      attn.tau = spec.scsa_tau;
      attn.eps = spec.scsa_eps;

      const std::size_t hidden = d * spec.ffn_expand;
      FFN ffn{init_matrix(init, d, hidden, weight_seed(seed, l, kW1)), Vector(hidden, 0.0),
              init_matrix(init, hidden, d, weight_seed(seed, l, kW2)), Vector(d, 0.0)};

      Stage sa{std::move(attn), shortcut, nu, {}};
      Stage ff{LayerChain{std::move(ffn)}, shortcut, nu, {}};
      if (spec.use_norm) {
        sa.post.push_back(make_net_norm(norm, d, spec.norm_eps));
        ff.post.push_back(make_net_norm(norm, d, spec.norm_eps));
      }
      layer.push_back(std::move(sa));
      layer.push_back(std::move(ff));
    } else {
      const std::size_t k = spec.conv_kernel;
      const std::size_t fan = d * k * k;
      auto conv = [&](std::uint64_t id) {
        Conv2D c;
        c.kernel = init_matrix_shaped(init, d, fan, fan, fan, weight_seed(seed, l, id));
        c.bias = Vector(d, 0.0);
        c.in_channels = d;
        c.kernel_size = k;
        c.stride = spec.conv_stride;
        c.padding = spec.conv_padding;
        c.height = spec.input_height;
        c.width = spec.input_width;
        return c;
      };
      LayerChain body;
      body.push_back(conv(kConv1));
      if (spec.use_norm) body.push_back(make_net_norm(norm, d, spec.norm_eps));
      body.push_back(ReLU{});
      body.push_back(conv(kConv2));
      if (spec.use_norm) body.push_back(make_net_norm(norm, d, spec.norm_eps));
      layer.push_back(Stage{std::move(body), shortcut, nu, {}});
    }
    net.layers_.push_back(std::move(layer));
  }
  return net;
}

Network Network::from_layers(std::vector<NetLayer> layers, Shape input) {
  Network net;
  for (const auto& layer : layers)
    for (const auto& stage : layer) {
      if (stage.shortcut == ShortcutKind::Weighted) {
        for (double v : stage.nu)
          if (!(std::abs(v) <= kDefaultResidualClamp)) throw ValidationError("stage nu exceeds clamp 2");
      }
      if (const auto* a = std::get_if<AttentionParams>(&stage.body)) validate_attention(*a);
      if (const auto* c = std::get_if<LayerChain>(&stage.body))
        for (const auto& l : *c) validate_layer(l);
    }
  net.layers_ = std::move(layers);
  net.input_ = input;
  return net;
}

DenseMatrix stage_forward(const Stage& stage, const DenseMatrix& x, const AttentionOptions& attn, bool* overflow,
                          double* max_abs_seen) {
  DenseMatrix branch = body_forward(stage, x, attn, overflow);
  track(max_abs_seen, branch);
  if (overflow && exceeds(branch, attn.overflow_range)) *overflow = true;
  DenseMatrix y = combine(stage, x, std::move(branch));
  if (!stage.post.empty()) {
    track(max_abs_seen, y);
    if (overflow && exceeds(y, attn.overflow_range)) *overflow = true;
    y = chain_forward(stage.post, y);
  }
  track(max_abs_seen, y);
  if (overflow && exceeds(y, attn.overflow_range)) *overflow = true;
  return y;
}

ForwardResult net_forward(const Network& net, const DenseMatrix& x, const ForwardOptions& options) {
  if (x.rows() != net.input_shape().rows || x.cols() != net.input_shape().cols)
    throw ShapeError("network input must be " + std::to_string(net.input_shape().rows) + "x" +
                     std::to_string(net.input_shape().cols));
  const std::size_t layers = std::min(net.depth(), options.max_layers.value_or(net.depth()));
  const double drop_p = net.spec() ? net.spec()->droppath_p : 0.0;
  AttentionOptions attn;
  attn.overflow_range = options.overflow_range;

  ForwardResult result;
  result.layer_max_abs.reserve(layers);
  if (options.keep_taps) result.taps.push_back(x);
  DenseMatrix h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    bool overflow = false;
    double seen = 0.0;
    const auto& stages = net.layers()[l];
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const Stage& stage = stages[s];
      if (options.droppath_seed && stage.has_shortcut() && drop_p > 0.0) {
        Rng rng(*options.droppath_seed, {kStreamDropPath, l, s});
        if (rng.bernoulli(drop_p)) {
          // Dropped branch: only the post chain remains.
          h = stage.post.empty() ? h : chain_forward(stage.post, h);
          track(&seen, h);
          continue;
        }
      }
      h = stage_forward(stage, h, attn, &overflow, &seen);
    }
    result.layer_max_abs.push_back(seen);
    if (overflow) {
      if (!options.probe_overflow) {
        throw OverflowError("non-finite or out-of-range activation in layer " + std::to_string(l + 1), l + 1);
      }
      result.overflow = true;
      if (!result.overflow_layer) result.overflow_layer = l + 1;
    }
    if (options.keep_taps) result.taps.push_back(h);
  }
  result.output = std::move(h);
  return result;
}

std::vector<DenseMatrix> net_layer_jacobians(const Network& net, const DenseMatrix& x) {
  check_guard(x);
  std::vector<DenseMatrix> out;
  DenseMatrix h = x;
  for (const auto& layer : net.layers()) {
    DenseMatrix j = DenseMatrix::identity(h.size());
    for (const auto& stage : layer) {
      j = matmul(j, stage_jacobian(stage, h));
      h = stage_forward(stage, h);
      check_guard(h);
    }
    out.push_back(std::move(j));
  }
  return out;
}

DenseMatrix net_jacobian_product(const Network& net, const DenseMatrix& x) {
  check_guard(x);
  DenseMatrix total = DenseMatrix::identity(x.size());
  for (const auto& j : net_layer_jacobians(net, x)) total = matmul(total, j);
  return total;
}

DenseMatrix random_input(const Network& net, std::uint64_t seed, std::uint64_t index) {
  DenseMatrix x(net.input_shape().rows, net.input_shape().cols);
  Rng rng(seed, {kStreamData, index});
  rng.fill_normal(x.data());
  return x;
}

}  // namespace lipscope
