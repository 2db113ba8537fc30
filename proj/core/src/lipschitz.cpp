#include "lipscope/lipschitz.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "lipscope/parallel.hpp"
#include "lipscope/rng.hpp"

namespace lipscope {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

DenseMatrix gaussian_like(Shape s, std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  DenseMatrix m(s.rows, s.cols);
  Rng rng(seed, path);
  rng.fill_normal(m.data());
  return m;
}

DenseMatrix base_point(const EstimatorOptions& o, Shape s, std::size_t b) {
  if (!o.bases.empty()) return o.bases[b];
  return gaussian_like(s, o.seed, {kStreamBasePoint, b});
}

DenseMatrix direction(const EstimatorOptions& o, Shape s, std::size_t b, std::size_t k) {
  if (!o.directions.empty()) return o.directions[k];
  return gaussian_like(s, o.seed, {kStreamPerturbation, b, k});
}

DenseMatrix step(const DenseMatrix& x, const DenseMatrix& z, double eps) {
  DenseMatrix y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += eps * z.data()[i];
  return y;
}

double diff_norm(const DenseMatrix& a, const DenseMatrix& b, NormKind kind) {
  Vector d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.data()[i] - b.data()[i];
  return vector_norm(d, kind);
}

std::size_t base_count(const EstimatorOptions& o) { return o.bases.empty() ? o.base_points : o.bases.size(); }
std::size_t pert_count(const EstimatorOptions& o) {
  return o.directions.empty() ? o.perturbations : o.directions.size();
}

LipschitzEstimate blank_estimate(const EstimatorOptions& o) {
  LipschitzEstimate e;
  e.norm = o.norm;
  e.epsilon = o.epsilon;
  e.num_base_points = base_count(o);
  e.num_perturbations = pert_count(o);
  e.seed = o.seed;
  return e;
}

ForwardOptions probing(const EstimatorOptions& o) {
  ForwardOptions f;
  f.probe_overflow = true;
  f.overflow_range = o.overflow_range;
  return f;
}

ExtendedReal body_bound(const Stage& stage, Shape in, std::vector<Caveat>& caveats) {
  if (const auto* chain = std::get_if<LayerChain>(&stage.body)) {
    for (const auto& l : *chain)
      if (has_conv_overlap(l) &&
          std::find(caveats.begin(), caveats.end(), Caveat::ConvOverlap) == caveats.end())
        caveats.push_back(Caveat::ConvOverlap);
    return chain_lip_bound(*chain);
  }
  const auto& attn = std::get<AttentionParams>(stage.body);
  if (attn.kind == AttentionKind::DPA &&
      std::find(caveats.begin(), caveats.end(), Caveat::DpaUnbounded) == caveats.end())
    caveats.push_back(Caveat::DpaUnbounded);
  if (attn.heads > 1 && std::find(caveats.begin(), caveats.end(), Caveat::MultiheadHeuristic) == caveats.end())
    caveats.push_back(Caveat::MultiheadHeuristic);
  return attn_lip_bound(attn, in.cols);
}

Shape stage_output_shape(const Stage& stage, Shape in) {
  Shape s = in;
  if (const auto* chain = std::get_if<LayerChain>(&stage.body))
    for (const auto& l : *chain) s = layer_output_shape(l, s);
  for (const auto& l : stage.post) s = layer_output_shape(l, s);
  return s;
}

}  // namespace

void validate_estimator(const EstimatorOptions& o) {
  std::vector<std::string> v;
  if (!(o.epsilon > 0.0)) v.push_back("epsilon must be > 0");
  if (base_count(o) == 0) v.push_back("base_points must be >= 1");
  if (pert_count(o) == 0) v.push_back("perturbations must be >= 1");
  if (!v.empty()) throw ValidationError(std::move(v));
}

LipschitzEstimate estimate_K(const MapFn& f, Shape input, const EstimatorOptions& o) {
  validate_estimator(o);
  const std::size_t nb = base_count(o);
  const std::size_t np = pert_count(o);

  struct Cell {
    double ratio = 0.0;
    bool overflow = false;
  };
  std::vector<Cell> cells(nb * np);
  parallel_for(nb, [&](std::size_t b) {
    const DenseMatrix x = base_point(o, input, b);
    const MapOutput fx = f(x);
    for (std::size_t k = 0; k < np; ++k) {
      Cell& c = cells[b * np + k];
      const DenseMatrix xp = step(x, direction(o, input, b, k), o.epsilon);
      const MapOutput fxp = f(xp);
      const double den = diff_norm(xp, x, o.norm);
      if (fx.overflow || fxp.overflow) {
        c.overflow = true;
        continue;
      }
      const double num = diff_norm(fxp.value, fx.value, o.norm);
      if (!std::isfinite(num)) {
        c.overflow = true;
        continue;
      }
      c.ratio = den > 0.0 ? num / den : 0.0;
    }
  });

  LipschitzEstimate e = blank_estimate(o);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const SampleIndex idx{i / np, i % np};
    if (cells[i].overflow) {
      if (!e.overflow) e.overflow_sample = idx;
      e.overflow = true;
    } else if (cells[i].ratio > e.value || i == 0) {
      e.value = cells[i].ratio;
      e.argmax_sample = idx;
    }
  }
  if (e.overflow) {
    e.value = kInf;
    e.argmax_sample = *e.overflow_sample;
  }
  return e;
}

LipschitzEstimate estimate_K(const LayerSpec& layer, Shape input, const EstimatorOptions& o) {
  validate_layer(layer);
  (void)layer_output_shape(layer, input);
  return estimate_K(
      [&](const DenseMatrix& x) {
        MapOutput out{layer_forward(layer, x), false};
        out.overflow = !all_finite(out.value.data());
        return out;
      },
      input, o);
}

LipschitzEstimate estimate_K(const Network& net, const EstimatorOptions& o) {
  const ForwardOptions fo = probing(o);
  return estimate_K(
      [&](const DenseMatrix& x) {
        ForwardResult r = net_forward(net, x, fo);
        return MapOutput{std::move(r.output), r.overflow};
      },
      net.input_shape(), o);
}

TapEstimate estimate_K_taps(const Network& net, const std::vector<std::size_t>& taps,
                            const std::vector<NormKind>& norms, const EstimatorOptions& o) {
  validate_estimator(o);
  if (taps.empty() || norms.empty()) throw ValidationError("estimate_K_taps: taps and norms must be nonempty");
  for (std::size_t t : taps)
    if (t == 0 || t > net.depth()) throw ValidationError("estimate_K_taps: tap outside [1, depth]");

  const std::size_t nb = base_count(o);
  const std::size_t np = pert_count(o);
  const std::size_t nt = taps.size();
  const std::size_t nn = norms.size();
  ForwardOptions fo = probing(o);
  fo.keep_taps = true;
  fo.max_layers = *std::max_element(taps.begin(), taps.end());
  const Shape in = net.input_shape();

  // ratio[(b * np + k) * nt * nn + t * nn + n]; NaN marks overflow.
  std::vector<double> ratio(nb * np * nt * nn, 0.0);
  parallel_for(nb, [&](std::size_t b) {
    const DenseMatrix x = base_point(o, in, b);
    const ForwardResult fx = net_forward(net, x, fo);
    for (std::size_t k = 0; k < np; ++k) {
      const DenseMatrix xp = step(x, direction(o, in, b, k), o.epsilon);
      const ForwardResult fxp = net_forward(net, xp, fo);
      const std::size_t first_bad =
          std::min(fx.overflow_layer.value_or(SIZE_MAX), fxp.overflow_layer.value_or(SIZE_MAX));
      for (std::size_t n = 0; n < nn; ++n) {
        const double den = diff_norm(xp, x, norms[n]);
        for (std::size_t t = 0; t < nt; ++t) {
          double& slot = ratio[(b * np + k) * nt * nn + t * nn + n];
          if (taps[t] >= first_bad) {
            slot = std::numeric_limits<double>::quiet_NaN();
            continue;
          }
          const double num = diff_norm(fxp.taps[taps[t]], fx.taps[taps[t]], norms[n]);
          slot = std::isfinite(num) ? (den > 0.0 ? num / den : 0.0) : std::numeric_limits<double>::quiet_NaN();
        }
      }
    }
  });

  TapEstimate out{taps, norms, std::vector<std::vector<double>>(nt, std::vector<double>(nn, 0.0)),
                  std::vector<bool>(nt, false)};
  for (std::size_t s = 0; s < nb * np; ++s)
    for (std::size_t t = 0; t < nt; ++t)
      for (std::size_t n = 0; n < nn; ++n) {
        const double r = ratio[s * nt * nn + t * nn + n];
        if (std::isnan(r)) out.overflow[t] = true;
        else out.value[t][n] = std::max(out.value[t][n], r);
      }
  for (std::size_t t = 0; t < nt; ++t)
    if (out.overflow[t]) std::fill(out.value[t].begin(), out.value[t].end(), kInf);
  return out;
}

LayerwiseProfile estimate_layerwise(const Network& net, const DenseMatrix& x, const EstimatorOptions& o) {
  validate_estimator(o);
  const std::size_t depth = net.depth();
  ForwardOptions fo = probing(o);
  fo.keep_taps = true;
  const ForwardResult fx = net_forward(net, x, fo);
  const Shape in{x.rows(), x.cols()};

  LayerwiseProfile p{std::vector<double>(depth + 1, 0.0), std::vector<double>(depth + 1, 0.0),
                     std::vector<bool>(depth + 1, true)};
  const std::size_t np = pert_count(o);
  for (std::size_t k = 0; k < np; ++k) {
    const DenseMatrix xp = step(x, direction(o, in, 0, k), o.epsilon);
    const ForwardResult fxp = net_forward(net, xp, fo);
    std::vector<double> d(depth + 1);
    for (std::size_t l = 0; l <= depth; ++l) d[l] = diff_norm(fxp.taps[l], fx.taps[l], o.norm);
    const double den = d[0];
    for (std::size_t l = 0; l <= depth; ++l) {
      const double a = den > 0.0 ? d[l] / den : 0.0;
      p.k_l0[l] = std::max(p.k_l0[l], std::isnan(a) ? kInf : a);
      if (d[l] > 0.0) {
        const double r = d[depth] / d[l];
        p.k_Ll[l] = std::max(p.k_Ll[l], std::isnan(r) ? kInf : r);
        p.k_Ll_undefined[l] = false;
      }
    }
  }
  return p;
}

std::string to_string(Caveat c) {
  switch (c) {
    case Caveat::ConvOverlap: return "conv_overlap";
    case Caveat::MultiheadHeuristic: return "multihead_heuristic";
    case Caveat::DpaUnbounded: return "dpa_unbounded";
  }
  return "?";
}

BoundReport compose_network_bound(const Network& net) {
  BoundReport report;
  report.product = ExtendedReal(1.0);
  Shape shape = net.input_shape();
  for (std::size_t l = 0; l < net.depth(); ++l) {
    ExtendedReal layer_bound(1.0);
    for (const Stage& stage : net.layers()[l]) {
      const ExtendedReal body = body_bound(stage, shape, report.caveats);
      ExtendedReal f = body;
      if (stage.shortcut == ShortcutKind::Identity) {
        f = ExtendedReal(1.0) + body;
      } else if (stage.shortcut == ShortcutKind::Weighted) {
        const double m = stage.nu.empty() ? 0.0 : max_abs(stage.nu);
        f = ExtendedReal(1.0) + ExtendedReal(m) * body;
      }
      report.factors.push_back({f, stage.has_shortcut(), l + 1});
      layer_bound *= f;
      if (!stage.post.empty()) {
        const ExtendedReal post = chain_lip_bound(stage.post);
        report.factors.push_back({post, false, l + 1});
        layer_bound *= post;
      }
      shape = stage_output_shape(stage, shape);
    }
    report.per_layer.push_back(layer_bound);
    report.product *= layer_bound;
  }
  return report;
}

BoundReport compose_layer_bound(const LayerSpec& layer) {
  BoundReport report;
  report.product = layer_lip_bound(layer);
  report.per_layer = {report.product};
  const bool droppable = std::holds_alternative<Residual>(layer.op) || std::holds_alternative<WeightedResidual>(layer.op);
  report.factors = {{report.product, droppable, 1}};
  if (has_conv_overlap(layer)) report.caveats.push_back(Caveat::ConvOverlap);
  return report;
}

ExtendedReal droppath_bound(const BoundReport& report, double p, DropPathMode mode, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("droppath p must be in [0, 1]");
  if (mode == DropPathMode::Deterministic) return report.product;
  ExtendedReal k(1.0);
  for (std::size_t i = 0; i < report.factors.size(); ++i) {
    const BoundFactor& f = report.factors[i];
    if (f.droppable) {
      Rng rng(seed, {kStreamDropPath, i});
      if (rng.bernoulli(p)) continue;
    }
    k *= f.value;
  }
  return k;
}

double precision_range(Precision p) { return p == Precision::FP16 ? 65504.0 : 3.4028234663852886e38; }

std::string to_string(Precision p) { return p == Precision::FP16 ? "fp16" : "fp32"; }

Precision precision_from_string(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "fp16") return Precision::FP16;
  if (t == "fp32") return Precision::FP32;
  throw std::invalid_argument("unknown precision '" + text + "' (expected fp16 or fp32)");
}

PrincipleReport check_principles(const Network& net, const DenseMatrix& x, Precision precision) {
  PrincipleReport r;
  r.precision = precision;
  r.range = precision_range(precision);

  ForwardOptions fo;
  fo.probe_overflow = true;
  const ForwardResult fwd = net_forward(net, x, fo);
  r.max_abs_activation = fwd.layer_max_abs;
  for (std::size_t l = 0; l < r.max_abs_activation.size(); ++l)
    if (!(r.max_abs_activation[l] <= r.range)) r.forward_violations.push_back(l + 1);

  try {
    const std::vector<DenseMatrix> js = net_layer_jacobians(net, x);
    // G_l = d x^L / d x^l = J_{l+1} ... J_L, built from the output backwards.
    r.max_abs_gradient.assign(js.size(), 0.0);
    DenseMatrix g;
    for (std::size_t l = js.size(); l-- > 0;) {
      g = g.empty() ? js[l] : matmul(js[l], g);
      r.max_abs_gradient[l] = max_abs(g.data());
    }
    for (std::size_t l = 0; l < r.max_abs_gradient.size(); ++l)
      if (!(r.max_abs_gradient[l] <= r.range)) r.backward_violations.push_back(l);
    r.backward_checked = true;
  } catch (const ResourceError&) {
    r.backward_checked = false;
  }
  return r;
}

bool sandwich_check(const LipschitzEstimate& estimate, const BoundReport& report) {
  if (report.product.is_infinite()) return true;
  return estimate.value <= report.product.value() + 1e-9;
}

}  // namespace lipscope
