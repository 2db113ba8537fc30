#include <algorithm>
#include <cmath>
#include <functional>

#include "lipscope/layers.hpp"
#include "lipscope/rng.hpp"

namespace lipscope {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Block-diagonal Jacobian of a column-wise map. `block` fills the
// d_in x d_out Jacobian of one column.
DenseMatrix columnwise(const DenseMatrix& x, std::size_t d_out,
                       const std::function<void(const Vector& col, DenseMatrix& block)>& block) {
  const std::size_t d = x.rows();
  const std::size_t n = x.cols();
  DenseMatrix j(d * n, d_out * n);
  DenseMatrix b(d, d_out);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(b.data().begin(), b.data().end(), 0.0);
    block(x.col(i), b);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d_out; ++c) j(r + d * i, c + d_out * i) = b(r, c);
  }
  return j;
}

DenseMatrix diagonal_jacobian(const DenseMatrix& x, const std::function<double(double)>& deriv) {
  const Vector v = vec(x);
  DenseMatrix j(v.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) j(i, i) = deriv(v[i]);
  return j;
}

double gamma_at(const Vector& g, std::size_t i) { return g.empty() ? 1.0 : g[i]; }

// d/dx [x * sigmoid(a x)].
double gated_deriv(double x, double a) {
  const double s = sigmoid(a * x);
  return s + a * x * s * (1.0 - s);
}

DenseMatrix batch_norm_training_jacobian(const BatchNorm& bn, const DenseMatrix& x) {
  const std::size_t d = x.rows();
  const std::size_t n = x.cols();
  const double nn = static_cast<double>(n);
  DenseMatrix j(d * n, d * n);
  for (std::size_t f = 0; f < d; ++f) {
    const auto row = x.row(f);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= nn;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= nn;
    const double s2 = var + bn.eps;
    const double s = std::sqrt(s2);
    const double g = gamma_at(bn.gamma, f);
    // d xhat_{f,i} / d x_{f,l} = ((δ_il - 1/N) s - c_i c_l / (N s)) / s².
    for (std::size_t l = 0; l < n; ++l) {
      const double cl = row[l] - mean;
      for (std::size_t i = 0; i < n; ++i) {
        const double ci = row[i] - mean;
        const double delta = i == l ? 1.0 : 0.0;
        j(f + d * l, f + d * i) = g * ((delta - 1.0 / nn) * s - ci * cl / (nn * s)) / s2;
      }
    }
  }
  return j;
}

DenseMatrix conv_jacobian(const Conv2D& c, const DenseMatrix& x) {
  const ConvGeometry g = conv_geometry(c.height, c.width, c.kernel_size, c.stride, c.padding);
  const std::size_t cin = c.in_channels;
  const std::size_t cout = c.out_channels();
  const std::size_t k = c.kernel_size;
  DenseMatrix j(x.size(), cout * g.out_height * g.out_width);
  for (std::size_t oy = 0; oy < g.out_height; ++oy) {
    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
      const std::size_t opix = oy * g.out_width + ox;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t y = std::ptrdiff_t(oy * c.stride + ky) - std::ptrdiff_t(c.padding);
        if (y < 0 || y >= std::ptrdiff_t(c.height)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t xx = std::ptrdiff_t(ox * c.stride + kx) - std::ptrdiff_t(c.padding);
          if (xx < 0 || xx >= std::ptrdiff_t(c.width)) continue;
          const std::size_t ipix = std::size_t(y) * c.width + std::size_t(xx);
          for (std::size_t ch = 0; ch < cin; ++ch) {
            const std::size_t kcol = (ky * k + kx) * cin + ch;
            for (std::size_t o = 0; o < cout; ++o) j(ch + cin * ipix, o + cout * opix) += c.kernel(o, kcol);
          }
        }
      }
    }
  }
  return j;
}

}  // namespace

LayerJacobian layer_jacobian(const LayerSpec& layer, const DenseMatrix& x) {
  validate_layer(layer);
  const Shape out = layer_output_shape(layer, {x.rows(), x.cols()});
  const std::size_t d = x.rows();
  bool nonsmooth = false;

  DenseMatrix j = std::visit(
      overloaded{
          [&](const Linear& l) {
            const DenseMatrix wt = l.w.transposed();
            return columnwise(x, out.rows, [&](const Vector&, DenseMatrix& b) { b = wt; });
          },
          [&](const Conv2D& c) { return conv_jacobian(c, x); },
          [&](const Sigmoid&) {
            return diagonal_jacobian(x, [](double v) {
              const double s = sigmoid(v);
              return s * (1.0 - s);
            });
          },
          [&](const ReLU&) {
            for (double v : x.data()) nonsmooth = nonsmooth || v == 0.0;
            return diagonal_jacobian(x, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
          },
          [&](const GELU&) { return diagonal_jacobian(x, [](double v) { return gated_deriv(v, 1.702); }); },
          [&](const Swish&) { return diagonal_jacobian(x, [](double v) { return gated_deriv(v, 1.0); }); },
          [&](const Softmax&) {
            return columnwise(x, d, [&](const Vector& col, DenseMatrix& b) {
              const double m = *std::max_element(col.begin(), col.end());
              Vector y(d);
              double s = 0.0;
              for (std::size_t r = 0; r < d; ++r) s += (y[r] = std::exp(col[r] - m));
              for (double& v : y) v /= s;
              for (std::size_t r = 0; r < d; ++r)
                for (std::size_t c = 0; c < d; ++c) b(r, c) = y[r] * ((r == c ? 1.0 : 0.0) - y[c]);
            });
          },
          [&](const LayerNorm& ln) {
            // (1/r) P (I - y yᵀ / r²) diag(γ) = (1/r) (P - y yᵀ / r²) diag(γ) since P y = y.
            return columnwise(x, d, [&](const Vector& col, DenseMatrix& b) {
              double mean = 0.0;
              for (double v : col) mean += v;
              mean /= static_cast<double>(d);
              Vector y(d);
              double s = 0.0;
              for (std::size_t r = 0; r < d; ++r) {
                y[r] = col[r] - mean;
                s += y[r] * y[r];
              }
              const double r2 = s + ln.eps;
              const double inv_r = 1.0 / std::sqrt(r2);
              for (std::size_t a = 0; a < d; ++a)
                for (std::size_t c = 0; c < d; ++c) {
                  const double p = (a == c ? 1.0 : 0.0) - 1.0 / static_cast<double>(d);
                  b(a, c) = inv_r * (p - y[a] * y[c] / r2) * gamma_at(ln.gamma, c);
                }
            });
          },
          [&](const RMSNorm& rms) {
            return columnwise(x, d, [&](const Vector& col, DenseMatrix& b) {
              double s = 0.0;
              for (double v : col) s += v * v;
              const double r2 = s + rms.eps;
              const double inv_r = 1.0 / std::sqrt(r2);
              for (std::size_t a = 0; a < d; ++a)
                for (std::size_t c = 0; c < d; ++c)
                  b(a, c) = inv_r * ((a == c ? 1.0 : 0.0) - col[a] * col[c] / r2) * gamma_at(rms.gamma, c);
            });
          },
          [&](const CenterNorm& cn) {
            const double k = static_cast<double>(d) / static_cast<double>(d - 1);
            return columnwise(x, d, [&](const Vector&, DenseMatrix& b) {
              for (std::size_t a = 0; a < d; ++a)
                for (std::size_t c = 0; c < d; ++c)
                  b(a, c) = k * ((a == c ? 1.0 : 0.0) - 1.0 / static_cast<double>(d)) * gamma_at(cn.gamma, c);
            });
          },
          [&](const BatchNorm& bn) {
            if (bn.mode == BatchNormMode::Training) return batch_norm_training_jacobian(bn, x);
            return columnwise(x, d, [&](const Vector&, DenseMatrix& b) {
              for (std::size_t a = 0; a < d; ++a) {
                const double var = bn.running_var.empty() ? 1.0 : bn.running_var[a];
                b(a, a) = gamma_at(bn.gamma, a) / std::sqrt(var + bn.eps);
              }
            });
          },
          [&](const WeightNorm& wn) {
            const DenseMatrix wt = wn.effective_weight().transposed();
            return columnwise(x, out.rows, [&](const Vector&, DenseMatrix& b) { b = wt; });
          },
          [&](const FFN& f) {
            const std::size_t h = f.w1.rows();
            return columnwise(x, out.rows, [&](const Vector& col, DenseMatrix& b) {
              Vector pre = matvec(f.w1, col);
              DenseMatrix masked_w2t(h, f.w2.rows());
              for (std::size_t k = 0; k < h; ++k) {
                if (!f.b1.empty()) pre[k] += f.b1[k];
                if (pre[k] == 0.0) nonsmooth = true;
                if (pre[k] > 0.0)
                  for (std::size_t o = 0; o < f.w2.rows(); ++o) masked_w2t(k, o) = f.w2(o, k);
              }
              b = matmul_tn(f.w1, masked_w2t);
            });
          },
          [&](const Residual& r) {
            LayerJacobian inner = chain_jacobian(*r.branch, x);
            nonsmooth = inner.nonsmooth;
            inner.matrix *= r.scale;
            for (std::size_t i = 0; i < inner.matrix.rows(); ++i) inner.matrix(i, i) += 1.0;
            return inner.matrix;
          },
          [&](const WeightedResidual& r) {
            LayerJacobian inner = chain_jacobian(*r.branch, x);
            nonsmooth = inner.nonsmooth;
            DenseMatrix& m = inner.matrix;
            for (std::size_t i = 0; i < m.rows(); ++i) {
              auto row = m.row(i);
              for (std::size_t c = 0; c < row.size(); ++c) row[c] *= r.nu[c % d];
              m(i, i) += 1.0;
            }
            return m;
          },
          [&](const MaxPool&) {
            return columnwise(x, 1, [&](const Vector& col, DenseMatrix& b) {
              const auto it = std::max_element(col.begin(), col.end());
              if (std::count(col.begin(), col.end(), *it) > 1) nonsmooth = true;
              b(static_cast<std::size_t>(it - col.begin()), 0) = 1.0;
            });
          },
          [&](const AvgPool&) {
            return columnwise(x, 1, [&](const Vector&, DenseMatrix& b) {
              for (std::size_t a = 0; a < d; ++a) b(a, 0) = 1.0 / static_cast<double>(d);
            });
          },
      },
      layer.op);
  return {std::move(j), nonsmooth};
}

LayerJacobian chain_jacobian(const LayerChain& chain, const DenseMatrix& x) {
  LayerJacobian total{DenseMatrix::identity(x.size()), false};
  DenseMatrix h = x;
  for (const auto& layer : chain) {
    LayerJacobian j = layer_jacobian(layer, h);
    total.matrix = matmul(total.matrix, j.matrix);
    total.nonsmooth = total.nonsmooth || j.nonsmooth;
    h = layer_forward(layer, h);
  }
  return total;
}

JacobianReport check_jacobian_fd(const LayerSpec& layer, const DenseMatrix& x, std::size_t probes, double step,
                                 std::uint64_t seed) {
  if (!(step > 0.0)) throw ValidationError("check_jacobian_fd: step must be > 0");
  const LayerJacobian j = layer_jacobian(layer, x);
  JacobianReport report;
  report.nonsmooth = j.nonsmooth;
  for (std::size_t k = 0; k < probes; ++k) {
    Rng rng(seed, {kStreamPerturbation, k});
    DenseMatrix z(x.rows(), x.cols());
    rng.fill_normal(z.data());

    DenseMatrix plus = x;
    DenseMatrix minus = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      plus.data()[i] += step * z.data()[i];
      minus.data()[i] -= step * z.data()[i];
    }
    const Vector fp = vec(layer_forward(layer, plus));
    const Vector fm = vec(layer_forward(layer, minus));
    const Vector jvp = matvec_t(j.matrix, vec(z));

    Vector diff(jvp.size());
    Vector fd(jvp.size());
    for (std::size_t i = 0; i < jvp.size(); ++i) {
      fd[i] = (fp[i] - fm[i]) / (2.0 * step);
      diff[i] = jvp[i] - fd[i];
    }
    const double abs_err = vector_norm(diff, NormKind::L2);
    const double scale = std::max(vector_norm(jvp, NormKind::L2), vector_norm(fd, NormKind::L2));
    const double rel_err = scale > 1e-12 ? abs_err / scale : abs_err;
    report.max_abs_err = std::max(report.max_abs_err, max_abs(diff));
    report.max_rel_err = std::max(report.max_rel_err, rel_err);
    ++report.probe_count;
  }
  return report;
}

}  // namespace lipscope
