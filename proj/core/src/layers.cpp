#include "lipscope/layers.hpp"

#include <algorithm>
#include <cmath>

#include "lipscope/rng.hpp"

namespace lipscope {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string dims(Shape s) { return std::to_string(s.rows) + "x" + std::to_string(s.cols); }

void add_bias(DenseMatrix& y, const Vector& b) {
  if (b.empty()) return;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (double& v : y.row(r)) v += b[r];
}

double max_abs_or_zero(const Vector& v) { return v.empty() ? 0.0 : max_abs(v); }

// gamma/beta lookups tolerate empty vectors as 1 and 0.
double gamma_at(const Vector& g, std::size_t i) { return g.empty() ? 1.0 : g[i]; }
double beta_at(const Vector& b, std::size_t i) { return b.empty() ? 0.0 : b[i]; }

void check_affine(std::vector<std::string>& out, const char* name, const Vector& g, const Vector& b) {
  if (g.empty()) out.push_back(std::string(name) + ": gamma is empty");
  if (!b.empty() && b.size() != g.size()) out.push_back(std::string(name) + ": beta length differs from gamma");
}

void check_eps(std::vector<std::string>& out, const char* name, double eps) {
  if (!(eps > 0.0)) out.push_back(std::string(name) + ": eps must be > 0");
}

DenseMatrix elementwise(const DenseMatrix& x, double (*f)(double)) {
  DenseMatrix y = x;
  for (double& v : y.data()) v = f(v);
  return y;
}

double relu(double v) { return v > 0.0 ? v : 0.0; }
double gelu(double v) { return v * sigmoid(1.702 * v); }
double swish(double v) { return v * sigmoid(v); }

DenseMatrix batch_norm_forward(const BatchNorm& bn, const DenseMatrix& x) {
  const std::size_t d = x.rows();
  const std::size_t n = x.cols();
  DenseMatrix y(d, n);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    double var = 0.0;
    const auto row = x.row(j);
    if (bn.mode == BatchNormMode::Training) {
      for (double v : row) mean += v;
      mean /= static_cast<double>(n);
      for (double v : row) var += (v - mean) * (v - mean);
      var /= static_cast<double>(n);
    } else {
      mean = bn.running_mean.empty() ? 0.0 : bn.running_mean[j];
      var = bn.running_var.empty() ? 1.0 : bn.running_var[j];
    }
    const double inv = 1.0 / std::sqrt(var + bn.eps);
    for (std::size_t i = 0; i < n; ++i) y(j, i) = gamma_at(bn.gamma, j) * (row[i] - mean) * inv + beta_at(bn.beta, j);
  }
  return y;
}

DenseMatrix conv_forward(const Conv2D& conv, const DenseMatrix& x) {
  // Column-major flattening of a C x (H*W) matrix is exactly the HWC image.
  ImageTensor image{conv.height, conv.width, conv.in_channels, vec(x)};
  const DenseMatrix cols = im2col(image, conv.kernel_size, conv.stride, conv.padding);
  DenseMatrix y = matmul_nt(conv.kernel, cols);
  add_bias(y, conv.bias);
  return y;
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

DenseMatrix WeightNorm::effective_weight() const {
  DenseMatrix w = v;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double n2 = 0.0;
    for (double a : w.row(i)) n2 += a * a;
    const double s = gamma[i] / std::sqrt(n2 + eps);
    for (double& a : w.row(i)) a *= s;
  }
  return w;
}

std::string layer_kind_name(const LayerSpec& layer) {
  static constexpr const char* kNames[] = {"Linear",   "Conv2D",   "Sigmoid",    "Softmax",    "ReLU",
                                           "GELU",     "Swish",    "LayerNorm",  "BatchNorm",  "RMSNorm",
                                           "CenterNorm", "WeightNorm", "FFN",     "Residual",   "WeightedResidual",
                                           "MaxPool",  "AvgPool"};
  return kNames[layer.op.index()];
}

void validate_layer(const LayerSpec& layer) {
  std::vector<std::string> v;
  std::visit(
      overloaded{
          [&](const Linear& l) {
            if (l.w.empty()) v.push_back("Linear: empty weight");
            if (!l.b.empty() && l.b.size() != l.w.rows()) v.push_back("Linear: bias length differs from output dim");
          },
          [&](const Conv2D& c) {
            if (c.kernel.cols() != c.kernel_size * c.kernel_size * c.in_channels)
              v.push_back("Conv2D: kernel must have kernel_size^2 * in_channels columns");
            if (c.stride == 0) v.push_back("Conv2D: stride must be >= 1");
            if (c.kernel_size == 0) v.push_back("Conv2D: kernel_size must be >= 1");
            if (!c.bias.empty() && c.bias.size() != c.kernel.rows()) v.push_back("Conv2D: bias length differs");
          },
          [&](const LayerNorm& n) { check_affine(v, "LayerNorm", n.gamma, n.beta); check_eps(v, "LayerNorm", n.eps); },
          [&](const RMSNorm& n) { check_affine(v, "RMSNorm", n.gamma, n.beta); check_eps(v, "RMSNorm", n.eps); },
          [&](const BatchNorm& n) {
            check_affine(v, "BatchNorm", n.gamma, n.beta);
            check_eps(v, "BatchNorm", n.eps);
            if (!n.running_mean.empty() && n.running_mean.size() != n.gamma.size())
              v.push_back("BatchNorm: running_mean length differs");
            if (!n.running_var.empty() && n.running_var.size() != n.gamma.size())
              v.push_back("BatchNorm: running_var length differs");
            for (double s : n.running_var)
              if (s < 0.0) { v.push_back("BatchNorm: negative running variance"); break; }
          },
          [&](const CenterNorm& n) {
            check_affine(v, "CenterNorm", n.gamma, n.beta);
            if (n.gamma.size() < 2) v.push_back("CenterNorm: needs D >= 2");
          },
          [&](const WeightNorm& n) {
            check_eps(v, "WeightNorm", n.eps);
            if (n.gamma.size() != n.v.rows()) v.push_back("WeightNorm: gamma length differs from rows of v");
            if (!n.b.empty() && n.b.size() != n.v.rows()) v.push_back("WeightNorm: bias length differs");
          },
          [&](const FFN& f) {
            if (f.w1.rows() != f.w2.cols()) v.push_back("FFN: W1 rows must equal W2 cols");
            if (!f.b1.empty() && f.b1.size() != f.w1.rows()) v.push_back("FFN: b1 length differs");
            if (!f.b2.empty() && f.b2.size() != f.w2.rows()) v.push_back("FFN: b2 length differs");
          },
          [&](const Residual& r) {
            if (!r.branch) v.push_back("Residual: missing branch");
          },
          [&](const WeightedResidual& r) {
            if (!r.branch) v.push_back("WeightedResidual: missing branch");
            if (!(r.clamp > 0.0)) v.push_back("WeightedResidual: clamp must be > 0");
            for (double nu : r.nu)
              if (!(std::abs(nu) <= r.clamp)) {
                v.push_back("WeightedResidual: |nu| exceeds clamp " + std::to_string(r.clamp));
                break;
              }
          },
          [](const auto&) {},
      },
      layer.op);
  if (!v.empty()) throw ValidationError(std::move(v));
}

LayerSpec make_layer_norm(std::size_t dim, double eps) {
  LayerSpec l = LayerNorm{Vector(dim, 1.0), Vector(dim, 0.0), eps};
  validate_layer(l);
  return l;
}

LayerSpec make_rms_norm(std::size_t dim, double eps) {
  LayerSpec l = RMSNorm{Vector(dim, 1.0), Vector(dim, 0.0), eps};
  validate_layer(l);
  return l;
}

LayerSpec make_center_norm(std::size_t dim) {
  LayerSpec l = CenterNorm{Vector(dim, 1.0), Vector(dim, 0.0)};
  validate_layer(l);
  return l;
}

LayerSpec make_batch_norm(std::size_t dim, BatchNormMode mode, double eps) {
  LayerSpec l = BatchNorm{Vector(dim, 1.0), Vector(dim, 0.0), Vector(dim, 0.0), Vector(dim, 1.0), eps, mode};
  validate_layer(l);
  return l;
}

LayerSpec make_residual(LayerChain branch, double scale) {
  LayerSpec l = Residual{std::make_shared<const LayerChain>(std::move(branch)), scale};
  validate_layer(l);
  return l;
}

LayerSpec make_weighted_residual(LayerChain branch, Vector nu, double clamp) {
  LayerSpec l = WeightedResidual{std::make_shared<const LayerChain>(std::move(branch)), std::move(nu), clamp};
  validate_layer(l);
  return l;
}

Shape layer_output_shape(const LayerSpec& layer, Shape in) {
  auto need_rows = [&](std::size_t d, const char* what) {
    if (in.rows != d)
      throw ShapeError(std::string(what) + ": expected " + std::to_string(d) + " input rows, got " + dims(in));
  };
  return std::visit(
      overloaded{
          [&](const Linear& l) { need_rows(l.w.cols(), "Linear"); return Shape{l.w.rows(), in.cols}; },
          [&](const Conv2D& c) {
            need_rows(c.in_channels, "Conv2D");
            if (in.cols != c.height * c.width) throw ShapeError("Conv2D: expected height*width columns, got " + dims(in));
            const ConvGeometry g = conv_geometry(c.height, c.width, c.kernel_size, c.stride, c.padding);
            return Shape{c.out_channels(), g.out_height * g.out_width};
          },
          [&](const LayerNorm& n) { need_rows(n.gamma.size(), "LayerNorm"); return in; },
          [&](const RMSNorm& n) { need_rows(n.gamma.size(), "RMSNorm"); return in; },
          [&](const BatchNorm& n) { need_rows(n.gamma.size(), "BatchNorm"); return in; },
          [&](const CenterNorm& n) { need_rows(n.gamma.size(), "CenterNorm"); return in; },
          [&](const WeightNorm& n) { need_rows(n.v.cols(), "WeightNorm"); return Shape{n.v.rows(), in.cols}; },
          [&](const FFN& f) {
            need_rows(f.w1.cols(), "FFN");
            return Shape{f.w2.rows(), in.cols};
          },
          [&](const Residual& r) {
            Shape s = in;
            for (const auto& l : *r.branch) s = layer_output_shape(l, s);
            if (!(s == in)) throw ShapeError("Residual: branch maps " + dims(in) + " to " + dims(s));
            return in;
          },
          [&](const WeightedResidual& r) {
            Shape s = in;
            for (const auto& l : *r.branch) s = layer_output_shape(l, s);
            if (!(s == in)) throw ShapeError("WeightedResidual: branch maps " + dims(in) + " to " + dims(s));
            need_rows(r.nu.size(), "WeightedResidual");
            return in;
          },
          [&](const AvgPool& p) {
            if (p.dim != 0) need_rows(p.dim, "AvgPool");
            if (in.rows == 0) throw ShapeError("AvgPool: empty input");
            return Shape{1, in.cols};
          },
          [&](const MaxPool&) {
            if (in.rows == 0) throw ShapeError("MaxPool: empty input");
            return Shape{1, in.cols};
          },
          [&](const auto&) { return in; },
      },
      layer.op);
}

DenseMatrix layer_forward(const LayerSpec& layer, const DenseMatrix& x) {
  validate_layer(layer);
  (void)layer_output_shape(layer, {x.rows(), x.cols()});
  const std::size_t d = x.rows();
  const std::size_t n = x.cols();

  return std::visit(
      overloaded{
          [&](const Linear& l) {
            DenseMatrix y = matmul(l.w, x);
            add_bias(y, l.b);
            return y;
          },
          [&](const Conv2D& c) { return conv_forward(c, x); },
          [&](const Sigmoid&) { return elementwise(x, sigmoid); },
          [&](const ReLU&) { return elementwise(x, relu); },
          [&](const GELU&) { return elementwise(x, gelu); },
          [&](const Swish&) { return elementwise(x, swish); },
          [&](const Softmax&) {
            DenseMatrix y(d, n);
            for (std::size_t i = 0; i < n; ++i) {
              double m = -std::numeric_limits<double>::infinity();
              for (std::size_t r = 0; r < d; ++r) m = std::max(m, x(r, i));
              double s = 0.0;
              for (std::size_t r = 0; r < d; ++r) s += (y(r, i) = std::exp(x(r, i) - m));
              for (std::size_t r = 0; r < d; ++r) y(r, i) /= s;
            }
            return y;
          },
          [&](const LayerNorm& ln) {
            DenseMatrix y(d, n);
            for (std::size_t i = 0; i < n; ++i) {
              double mean = 0.0;
              for (std::size_t r = 0; r < d; ++r) mean += x(r, i);
              mean /= static_cast<double>(d);
              double s = 0.0;
              for (std::size_t r = 0; r < d; ++r) s += (x(r, i) - mean) * (x(r, i) - mean);
              const double inv = 1.0 / std::sqrt(s + ln.eps);
              for (std::size_t r = 0; r < d; ++r)
                y(r, i) = gamma_at(ln.gamma, r) * (x(r, i) - mean) * inv + beta_at(ln.beta, r);
            }
            return y;
          },
          [&](const RMSNorm& rms) {
            DenseMatrix y(d, n);
            for (std::size_t i = 0; i < n; ++i) {
              double s = 0.0;
              for (std::size_t r = 0; r < d; ++r) s += x(r, i) * x(r, i);
              const double inv = 1.0 / std::sqrt(s + rms.eps);
              for (std::size_t r = 0; r < d; ++r) y(r, i) = gamma_at(rms.gamma, r) * x(r, i) * inv + beta_at(rms.beta, r);
            }
            return y;
          },
          [&](const CenterNorm& cn) {
            DenseMatrix y(d, n);
            const double k = static_cast<double>(d) / static_cast<double>(d - 1);
            for (std::size_t i = 0; i < n; ++i) {
              double mean = 0.0;
              for (std::size_t r = 0; r < d; ++r) mean += x(r, i);
              mean /= static_cast<double>(d);
              for (std::size_t r = 0; r < d; ++r) y(r, i) = k * gamma_at(cn.gamma, r) * (x(r, i) - mean) + beta_at(cn.beta, r);
            }
            return y;
          },
          [&](const BatchNorm& bn) { return batch_norm_forward(bn, x); },
          [&](const WeightNorm& wn) {
            DenseMatrix y = matmul(wn.effective_weight(), x);
            add_bias(y, wn.b);
            return y;
          },
          [&](const FFN& f) {
            DenseMatrix h = matmul(f.w1, x);
            add_bias(h, f.b1);
            for (double& v : h.data()) v = relu(v);
            DenseMatrix y = matmul(f.w2, h);
            add_bias(y, f.b2);
            return y;
          },
          [&](const Residual& r) {
            DenseMatrix y = chain_forward(*r.branch, x);
            y *= r.scale;
            y += x;
            return y;
          },
          [&](const WeightedResidual& r) {
            DenseMatrix y = chain_forward(*r.branch, x);
            for (std::size_t row = 0; row < d; ++row)
              for (double& v : y.row(row)) v *= r.nu[row];
            y += x;
            return y;
          },
          [&](const MaxPool&) {
            DenseMatrix y(1, n);
            for (std::size_t i = 0; i < n; ++i) {
              double m = x(0, i);
              for (std::size_t r = 1; r < d; ++r) m = std::max(m, x(r, i));
              y(0, i) = m;
            }
            return y;
          },
          [&](const AvgPool&) {
            DenseMatrix y(1, n);
            for (std::size_t i = 0; i < n; ++i) {
              double s = 0.0;
              for (std::size_t r = 0; r < d; ++r) s += x(r, i);
              y(0, i) = s / static_cast<double>(d);
            }
            return y;
          },
      },
      layer.op);
}

DenseMatrix chain_forward(const LayerChain& chain, const DenseMatrix& x) {
  DenseMatrix y = x;
  for (const auto& layer : chain) y = layer_forward(layer, y);
  return y;
}

ExtendedReal layer_lip_bound(const LayerSpec& layer) {
  return std::visit(
      overloaded{
          [](const Linear& l) { return ExtendedReal(spectral_norm_robust(l.w)); },
          [](const Conv2D& c) { return ExtendedReal(spectral_norm_robust(c.kernel)); },
          [](const Sigmoid&) { return ExtendedReal(0.25); },
          [](const Softmax&) { return ExtendedReal(1.0); },
          [](const ReLU&) { return ExtendedReal(1.0); },
          [](const GELU&) { return ExtendedReal(1.1); },
          [](const Swish&) { return ExtendedReal(1.1); },
          [](const LayerNorm& n) { return ExtendedReal(max_abs_or_zero(n.gamma) / std::sqrt(n.eps)); },
          [](const RMSNorm& n) { return ExtendedReal(max_abs_or_zero(n.gamma) / std::sqrt(n.eps)); },
          [](const BatchNorm& n) {
            if (n.mode == BatchNormMode::Training) {
              // Each feature row is a centered rescaling over the batch, which
              // is 1/sqrt(eps)-Lipschitz by the same argument as LayerNorm.
              return ExtendedReal(max_abs_or_zero(n.gamma) / std::sqrt(n.eps));
            }
            double m = 0.0;
            for (std::size_t j = 0; j < n.gamma.size(); ++j) {
              const double var = n.running_var.empty() ? 1.0 : n.running_var[j];
              m = std::max(m, std::abs(n.gamma[j]) / std::sqrt(var + n.eps));
            }
            return ExtendedReal(m);
          },
          [](const CenterNorm& n) {
            const double d = static_cast<double>(n.gamma.size());
            return ExtendedReal(d / (d - 1.0) * max_abs_or_zero(n.gamma));
          },
          [](const WeightNorm& n) {
            double s = 0.0;
            for (double g : n.gamma) s += g * g;
            return ExtendedReal(std::sqrt(s));
          },
          [](const FFN& f) { return ExtendedReal(spectral_norm_robust(f.w1)) * ExtendedReal(spectral_norm_robust(f.w2)); },
          [](const Residual& r) { return ExtendedReal(1.0) + ExtendedReal(std::abs(r.scale)) * chain_lip_bound(*r.branch); },
          [](const WeightedResidual& r) {
            return ExtendedReal(1.0) + ExtendedReal(max_abs_or_zero(r.nu)) * chain_lip_bound(*r.branch);
          },
          [](const MaxPool&) { return ExtendedReal(1.0); },
          [](const AvgPool& p) {
            return ExtendedReal(p.dim == 0 ? 1.0 : 1.0 / std::sqrt(static_cast<double>(p.dim)));
          },
      },
      layer.op);
}

ExtendedReal chain_lip_bound(const LayerChain& chain) {
  ExtendedReal k(1.0);
  for (const auto& layer : chain) k *= layer_lip_bound(layer);
  return k;
}

bool has_conv_overlap(const LayerSpec& layer) {
  return std::visit(
      overloaded{
          [](const Conv2D& c) { return c.stride < c.kernel_size; },
          [](const Residual& r) {
            return std::any_of(r.branch->begin(), r.branch->end(), [](const LayerSpec& l) { return has_conv_overlap(l); });
          },
          [](const WeightedResidual& r) {
            return std::any_of(r.branch->begin(), r.branch->end(), [](const LayerSpec& l) { return has_conv_overlap(l); });
          },
          [](const auto&) { return false; },
      },
      layer.op);
}

DenseMatrix droppath_apply(const LayerChain& branch, double p, std::uint64_t seed, const DenseMatrix& x,
                           double rho) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("droppath: p must be in [0, 1]");
  Rng rng(seed, {kStreamDropPath});
  if (rng.bernoulli(p)) return x;
  DenseMatrix y = chain_forward(branch, x);
  y *= rho;
  y += x;
  return y;
}

}  // namespace lipscope
