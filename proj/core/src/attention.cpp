#include "lipscope/attention.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace lipscope {

namespace {

void normalize_columns(DenseMatrix& m, double eps) {
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, c) * m(r, c);
    const double inv = 1.0 / std::sqrt(s + eps);
    for (std::size_t r = 0; r < m.rows(); ++r) m(r, c) *= inv;
  }
}

// Softmax down each column, max-subtracted. Returns false on non-finite scores.
bool column_softmax(DenseMatrix& s) {
  bool finite = true;
  for (std::size_t c = 0; c < s.cols(); ++c) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < s.rows(); ++r) {
      if (!std::isfinite(s(r, c))) finite = false;
      m = std::max(m, s(r, c));
    }
    double sum = 0.0;
    for (std::size_t r = 0; r < s.rows(); ++r) sum += (s(r, c) = std::exp(s(r, c) - m));
    for (std::size_t r = 0; r < s.rows(); ++r) s(r, c) /= sum;
  }
  return finite;
}

bool out_of_range(std::span<const double> v, double range) {
  for (double x : v)
    if (!std::isfinite(x) || std::abs(x) > range) return true;
  return false;
}

}  // namespace

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::DPA: return "DPA";
    case AttentionKind::L2A: return "L2A";
    case AttentionKind::SCSA: return "SCSA";
  }
  return "?";
}

AttentionKind attention_kind_from_string(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (t == "DPA") return AttentionKind::DPA;
  if (t == "L2A") return AttentionKind::L2A;
  if (t == "SCSA") return AttentionKind::SCSA;
  throw std::invalid_argument("unknown attention kind '" + text + "'");
}

void validate_attention(const AttentionParams& p) {
  std::vector<std::string> v;
  if (p.heads == 0) v.push_back("attention: heads must be >= 1");
  if (p.dim == 0) v.push_back("attention: dim must be >= 1");
  if (p.heads != 0 && p.dim % p.heads != 0) v.push_back("attention: dim must be divisible by heads");
  for (const DenseMatrix* w : {&p.wq, &p.wk, &p.wv})
    if (w->rows() != p.dim || w->cols() != p.dim) {
      v.push_back("attention: projections must be dim x dim");
      break;
    }
  if (p.kind == AttentionKind::SCSA) {
    if (!(p.nu > 0.0)) v.push_back("attention: nu must be > 0");
    if (!(p.tau > 0.0)) v.push_back("attention: tau must be > 0");
    if (!(p.eps > 0.0)) v.push_back("attention: eps must be > 0");
  }
  if (!v.empty()) throw ValidationError(std::move(v));
}

AttentionResult attn_forward(const AttentionParams& p, const DenseMatrix& x, const AttentionOptions& options) {
  validate_attention(p);
  if (x.rows() != p.dim || x.cols() == 0)
    throw ShapeError("attention: expected " + std::to_string(p.dim) + " x N input, got " +
                     std::to_string(x.rows()) + "x" + std::to_string(x.cols()));

  const std::size_t n = x.cols();
  const std::size_t dh = p.head_dim();
  const DenseMatrix q_all = matmul(p.wq, x);
  const DenseMatrix k_all = matmul(p.wk, x);
  const DenseMatrix v_all = matmul(p.wv, x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionResult result;
  result.output = DenseMatrix(p.dim, n);
  for (std::size_t h = 0; h < p.heads; ++h) {
    DenseMatrix q = q_all.row_block(h * dh, dh);
    DenseMatrix k = k_all.row_block(h * dh, dh);
    DenseMatrix v = v_all.row_block(h * dh, dh);

    DenseMatrix s;
    switch (p.kind) {
      case AttentionKind::DPA:
        s = matmul_tn(q, k);
        s *= scale;
        break;
      case AttentionKind::L2A:
        s = DenseMatrix(n, n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t r = 0; r < dh; ++r) {
              const double diff = q(r, i) - k(r, j);
              d2 += diff * diff;
            }
            s(i, j) = -d2 * scale;
          }
        break;
      case AttentionKind::SCSA:
        normalize_columns(q, p.eps);
        normalize_columns(k, p.eps);
        normalize_columns(v, p.eps);
        s = matmul_tn(q, k);
        s *= p.tau;
        break;
    }

    if (out_of_range(s.data(), options.overflow_range)) result.overflow = true;
    if (!column_softmax(s)) result.overflow = true;
    DenseMatrix y = matmul(v, s);
    if (p.kind == AttentionKind::SCSA) y *= p.nu;
    result.output.set_row_block(h * dh, y);
    if (options.keep_probabilities) result.probabilities.push_back(std::move(s));
  }
  if (out_of_range(result.output.data(), options.overflow_range)) result.overflow = true;
  return result;
}

double phi_inverse(double y, double tol) {
  if (y < 0.0 || std::isnan(y)) throw std::invalid_argument("phi_inverse: argument must be >= 0");
  if (y == 0.0) return 0.0;
  auto phi = [](double t) { return t * std::exp(t + 1.0); };
  double lo = 1e-12;
  double hi = 50.0;
  if (phi(lo) >= y) return lo;
  if (phi(hi) < y) throw ConvergenceError("phi_inverse: root outside [1e-12, 50]", {lo, hi}, hi);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (phi(mid) < y) lo = mid;
    else hi = mid;
    if (hi - lo <= tol) return 0.5 * (lo + hi);
  }
  throw ConvergenceError("phi_inverse: bisection did not converge", {lo, hi}, 0.5 * (lo + hi));
}

ExtendedReal attn_lip_bound(const AttentionParams& p, std::size_t tokens) {
  validate_attention(p);
  if (tokens == 0) throw ValidationError("attention bound: tokens must be >= 1");
  if (p.kind == AttentionKind::DPA) return ExtendedReal::infinity();
  if (p.kind == AttentionKind::L2A && !(p.wq == p.wk)) return ExtendedReal::infinity();

  const double nn = static_cast<double>(tokens);
  const std::size_t dh = p.head_dim();
  double worst = 0.0;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const double sq = spectral_norm_robust(p.wq.row_block(h * dh, dh));
    const double sv = spectral_norm_robust(p.wv.row_block(h * dh, dh));
    double b = 0.0;
    if (p.kind == AttentionKind::L2A) {
      b = std::sqrt(nn) / std::sqrt(static_cast<double>(dh)) * (4.0 * phi_inverse(nn - 1.0) + 1.0) * sq * sv;
    } else {
      const double sk = spectral_norm_robust(p.wk.row_block(h * dh, dh));
      const double r = 1.0 / std::sqrt(p.eps);
      b = 2.0 * nn * (nn - 1.0) * p.nu * p.tau * r * sk + 2.0 * (nn - 1.0) * p.nu * p.tau * r * sq +
          2.0 * nn * p.nu * r * sv;
    }
    worst = std::max(worst, b);
  }
  return ExtendedReal(std::sqrt(static_cast<double>(p.heads)) * worst);
}

DenseMatrix attn_jvp_numeric(const AttentionParams& p, const DenseMatrix& x, const DenseMatrix& direction,
                             double step) {
  if (!(step > 0.0)) throw ValidationError("attn_jvp_numeric: step must be > 0");
  if (direction.rows() != x.rows() || direction.cols() != x.cols()) throw ShapeError("attn_jvp_numeric: direction shape");
  DenseMatrix plus = x;
  DenseMatrix minus = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    plus.data()[i] += step * direction.data()[i];
    minus.data()[i] -= step * direction.data()[i];
  }
  DenseMatrix out = attn_forward(p, plus).output;
  out -= attn_forward(p, minus).output;
  out *= 1.0 / (2.0 * step);
  return out;
}

DenseMatrix attn_jacobian_numeric(const AttentionParams& p, const DenseMatrix& x, double step) {
  const std::size_t total = x.size();
  DenseMatrix j(total, total);
  DenseMatrix e(x.rows(), x.cols());
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t r = i % x.rows();
    const std::size_t c = i / x.rows();
    e(r, c) = 1.0;
    const Vector row = vec(attn_jvp_numeric(p, x, e, step));
    std::copy(row.begin(), row.end(), j.row(i).begin());
    e(r, c) = 0.0;
  }
  return j;
}

}  // namespace lipscope
