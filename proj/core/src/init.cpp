#include "lipscope/init.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "lipscope/rng.hpp"

namespace lipscope {

namespace {

std::string lower(const std::string& s) {
  std::string t;
  for (char c : s) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return t;
}

DenseMatrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed) {
  DenseMatrix w(rows, cols);
  Rng rng(seed);
  rng.fill_normal(w.data(), stddev);
  return w;
}

DenseMatrix xavier_normal(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                          std::uint64_t seed) {
  return gaussian(rows, cols, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)), seed);
}

}  // namespace

std::string to_string(InitMethod m) {
  switch (m) {
    case InitMethod::XavierUniform: return "xavier_uniform";
    case InitMethod::XavierNormal: return "xavier_normal";
    case InitMethod::Kaiming: return "kaiming";
    case InitMethod::Orthogonal: return "orthogonal";
    case InitMethod::Spectral: return "spectral";
    case InitMethod::DepthAware: return "depth_aware";
  }
  return "?";
}

InitMethod init_method_from_string(const std::string& text) {
  const std::string t = lower(text);
  for (InitMethod m : {InitMethod::XavierUniform, InitMethod::XavierNormal, InitMethod::Kaiming,
                       InitMethod::Orthogonal, InitMethod::Spectral, InitMethod::DepthAware})
    if (t == to_string(m)) return m;
  throw std::invalid_argument("unknown init method '" + text + "'");
}

std::string to_string(DepthRule r) { return r == DepthRule::InvSqrtL ? "inv_sqrt_l" : "inv_l"; }

DepthRule depth_rule_from_string(const std::string& text) {
  const std::string t = lower(text);
  if (t == "inv_sqrt_l") return DepthRule::InvSqrtL;
  if (t == "inv_l") return DepthRule::InvL;
  throw std::invalid_argument("unknown depth rule '" + text + "' (expected inv_sqrt_l or inv_l)");
}

void validate_init(const InitSpec& spec) {
  std::vector<std::string> v;
  if (!(spec.gain > 0.0)) v.push_back("init: gain must be > 0");
  if (spec.method == InitMethod::DepthAware && spec.depth == 0) v.push_back("init: depth must be >= 1");
  if (!v.empty()) throw ValidationError(std::move(v));
}

DenseMatrix init_matrix(const InitSpec& spec, std::size_t n_in, std::size_t n_out, std::uint64_t seed) {
  return init_matrix_shaped(spec, n_out, n_in, n_in, n_out, seed);
}

DenseMatrix init_matrix_shaped(const InitSpec& spec, std::size_t rows, std::size_t cols, std::size_t fan_in,
                               std::size_t fan_out, std::uint64_t seed) {
  validate_init(spec);
  if (rows == 0 || cols == 0 || fan_in == 0 || fan_out == 0) throw ValidationError("init: dimensions must be >= 1");

  DenseMatrix w;
  switch (spec.method) {
    case InitMethod::XavierUniform: {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      w = DenseMatrix(rows, cols);
      Rng rng(seed);
      for (double& x : w.data()) x = rng.uniform(-a, a);
      break;
    }
    case InitMethod::XavierNormal:
      w = xavier_normal(rows, cols, fan_in, fan_out, seed);
      break;
    case InitMethod::Kaiming:
      w = gaussian(rows, cols,
                   std::sqrt(2.0 / ((1.0 + spec.kaiming_a * spec.kaiming_a) * static_cast<double>(fan_in))), seed);
      break;
    case InitMethod::Orthogonal: {
      // QR needs a tall matrix; wide shapes orthonormalize the transpose.
      if (rows >= cols) {
        w = qr_orthonormalize(gaussian(rows, cols, 1.0, seed));
      } else {
        w = qr_orthonormalize(gaussian(cols, rows, 1.0, seed)).transposed();
      }
      break;
    }
    case InitMethod::Spectral: {
      w = xavier_normal(rows, cols, fan_in, fan_out, seed);
      const double top = full_singular_values(w).front();
      w *= 1.0 / top;
      break;
    }
    case InitMethod::DepthAware: {
      w = xavier_normal(rows, cols, fan_in, fan_out, seed);
      const double l = static_cast<double>(spec.depth);
      w *= spec.depth_rule == DepthRule::InvSqrtL ? 1.0 / std::sqrt(l) : 1.0 / l;
      break;
    }
  }
  if (spec.gain != 1.0) w *= spec.gain;
  return w;
}

SpectrumReport spectrum_report(const DenseMatrix& w, std::size_t bins) {
  if (bins == 0) throw ValidationError("spectrum_report: bins must be >= 1");
  SpectrumReport report;
  report.singular_values = full_singular_values(w);
  report.max_value = report.singular_values.front();
  report.min_value = report.singular_values.back();

  double lo = report.min_value;
  double hi = report.max_value;
  if (hi - lo <= 0.0) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  report.bins.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    report.bins[b].left = lo + width * static_cast<double>(b);
    report.bins[b].right = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (double s : report.singular_values) {
    auto b = static_cast<std::size_t>((s - lo) / width);
    report.bins[std::min(b, bins - 1)].count++;
  }
  return report;
}

std::string SpectrumReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "bin_left,bin_right,count\n";
  for (const auto& b : bins) os << b.left << ',' << b.right << ',' << b.count << '\n';
  return os.str();
}

}  // namespace lipscope
