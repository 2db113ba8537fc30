#include "lipscope/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "lipscope/init.hpp"
#include "lipscope/report_io.hpp"
#include "lipscope/rng.hpp"

namespace lipscope {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ExperimentName {
  Experiment e;
  const char* name;
  const char* grid;
};

constexpr ExperimentName kExperiments[] = {
    {Experiment::DepthResidual, "depth_residual", "depth"}, {Experiment::DepthNorm, "depth_norm", "depth"},
    {Experiment::Gain, "gain", "gain"},                     {Experiment::Epsilon, "epsilon", "epsilon"},
    {Experiment::Hidden, "hidden", "hidden"},               {Experiment::Input, "input", "input_size"},
    {Experiment::Layerwise, "layerwise", "layer"},          {Experiment::Norms, "norms", "depth"},
    {Experiment::InitSpectrum, "init_spectrum", "seed"},
};

bool uses_taps(Experiment e) {
  return e == Experiment::DepthResidual || e == Experiment::DepthNorm || e == Experiment::Norms;
}

std::size_t as_count(double v) { return static_cast<std::size_t>(std::llround(v)); }

NetworkSpec cell_spec(const SweepConfig& cfg, Family family, const std::string& toggle) {
  NetworkSpec s = cfg.base;
  s.family = family;
  s.norm_kind.reset();
  if (toggle == "no_residual") s.use_residual = false;
  if (toggle == "residual") s.use_residual = true;
  if (toggle == "no_norm") s.use_norm = false;
  if (toggle == "norm") s.use_norm = true;
  return s;
}

void apply_grid(Experiment e, double v, NetworkSpec& s, EstimatorOptions& o) {
  switch (e) {
    case Experiment::Gain: s.init.gain = v; break;
    case Experiment::Epsilon: o.epsilon = v; break;
    case Experiment::Hidden: s.width = as_count(v); break;
    case Experiment::Input:
      s.input_height = as_count(v);
      s.input_width = as_count(v);
      break;
    default: s.depth = as_count(v); break;
  }
}

std::vector<ExtendedReal> prefix_bounds(const BoundReport& report) {
  std::vector<ExtendedReal> out{ExtendedReal(1.0)};
  for (const auto& b : report.per_layer) out.push_back(out.back() * b);
  return out;
}

void push_rows(SweepTable& table, const std::string& family, const std::string& toggle, const std::string& grid,
               double value, std::uint64_t seed, const std::vector<NormKind>& norms, const std::vector<double>& k_s,
               double k_u, bool overflow) {
  for (std::size_t n = 0; n < norms.size(); ++n)
    table.rows.push_back(SweepRow{family, toggle, grid, value, seed, norms[n], k_s[n], k_u, overflow});
}

// Depth-like sweeps: one deepest network per (family, toggle, seed), every
// depth read from its taps. The prefix of a deeper network is the shallower
// network unless the initializer depends on depth.
void run_tap_cells(const SweepConfig& cfg, Family family, const std::string& toggle, std::uint64_t seed,
                   SweepTable& table) {
  const std::string gname = grid_name(cfg.experiment);
  std::vector<std::size_t> depths;
  for (double v : cfg.grid) depths.push_back(as_count(v));

  auto run_group = [&](const std::vector<std::size_t>& taps, std::size_t depth) {
    NetworkSpec s = cell_spec(cfg, family, toggle);
    s.depth = depth;
    const Network net = Network::build(s, seed);
    EstimatorOptions o = cfg.estimator;
    o.seed = seed;
    o.overflow_range = cfg.overflow_range;
    const TapEstimate est = estimate_K_taps(net, taps, cfg.norms, o);
    std::vector<ExtendedReal> bounds;
    if (cfg.compute_bound) bounds = prefix_bounds(compose_network_bound(net));
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const double k_u = cfg.compute_bound ? bounds[taps[t]].value() : std::numeric_limits<double>::quiet_NaN();
      push_rows(table, to_string(family), toggle, gname, static_cast<double>(taps[t]), seed, cfg.norms, est.value[t],
                k_u, est.overflow[t]);
    }
  };

  if (cfg.base.init.method == InitMethod::DepthAware) {
    for (std::size_t d : depths) run_group({d}, d);
  } else {
    run_group(depths, *std::max_element(depths.begin(), depths.end()));
  }
}

void run_grid_cell(const SweepConfig& cfg, Family family, const std::string& toggle, double value, std::uint64_t seed,
                   SweepTable& table) {
  NetworkSpec s = cell_spec(cfg, family, toggle);
  EstimatorOptions o = cfg.estimator;
  apply_grid(cfg.experiment, value, s, o);
  o.seed = seed;
  o.overflow_range = cfg.overflow_range;
  const Network net = Network::build(s, seed);
  const TapEstimate est = estimate_K_taps(net, {net.depth()}, cfg.norms, o);
  const double k_u = cfg.compute_bound ? compose_network_bound(net).product.value()
                                       : std::numeric_limits<double>::quiet_NaN();
  push_rows(table, to_string(family), toggle, grid_name(cfg.experiment), value, seed, cfg.norms, est.value[0], k_u,
            est.overflow[0]);
}

void run_layerwise_cells(const SweepConfig& cfg, Family family, std::uint64_t seed, SweepTable& table) {
  NetworkSpec s = cell_spec(cfg, family, "default");
  const Network net = Network::build(s, seed);
  const DenseMatrix x = random_input(net, seed, 0);
  std::vector<ExtendedReal> prefix;
  std::vector<ExtendedReal> per_layer;
  if (cfg.compute_bound) {
    const BoundReport report = compose_network_bound(net);
    prefix = prefix_bounds(report);
    per_layer = report.per_layer;
  }
  auto want = [&](const std::string& t) {
    return cfg.toggles.empty() || std::find(cfg.toggles.begin(), cfg.toggles.end(), t) != cfg.toggles.end();
  };
  for (NormKind norm : cfg.norms) {
    EstimatorOptions o = cfg.estimator;
    o.seed = seed;
    o.norm = norm;
    o.overflow_range = cfg.overflow_range;
    const LayerwiseProfile p = estimate_layerwise(net, x, o);
    const std::size_t depth = net.depth();
    for (std::size_t l = 0; l <= depth; ++l) {
      if (!want("k_l0")) break;
      const double k_u = cfg.compute_bound ? prefix[l].value() : std::numeric_limits<double>::quiet_NaN();
      table.rows.push_back(SweepRow{to_string(family), "k_l0", "layer", static_cast<double>(l), seed, norm, p.k_l0[l],
                                    k_u, std::isinf(p.k_l0[l])});
    }
    for (std::size_t l = 0; l <= depth; ++l) {
      if (!want("k_Ll")) break;
      double k_u = std::numeric_limits<double>::quiet_NaN();
      if (cfg.compute_bound) {
        ExtendedReal suffix(1.0);
        for (std::size_t j = l; j < depth; ++j) suffix *= per_layer[j];
        k_u = suffix.value();
      }
      const double k_s = p.k_Ll_undefined[l] ? std::numeric_limits<double>::quiet_NaN() : p.k_Ll[l];
      table.rows.push_back(
          SweepRow{to_string(family), "k_Ll", "layer", static_cast<double>(l), seed, norm, k_s, k_u, std::isinf(k_s)});
    }
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ValidationError("csv: bad number '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << content;
  os.close();
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace

EstimatorOptions desk_estimator() {
  EstimatorOptions o;
  o.base_points = 5;
  o.perturbations = 5;
  return o;
}

std::string to_string(Experiment e) {
  for (const auto& x : kExperiments)
    if (x.e == e) return x.name;
  throw std::logic_error("unreachable");
}

Experiment experiment_from_string(const std::string& text) {
  for (const auto& x : kExperiments)
    if (text == x.name) return x.e;
  throw ValidationError("unknown experiment '" + text + "'");
}

std::string grid_name(Experiment e) {
  for (const auto& x : kExperiments)
    if (x.e == e) return x.grid;
  throw std::logic_error("unreachable");
}

std::vector<std::string> experiment_toggles(Experiment e) {
  switch (e) {
    case Experiment::DepthResidual: return {"residual", "no_residual"};
    case Experiment::DepthNorm: return {"norm", "no_norm"};
    case Experiment::Layerwise: return {"k_l0", "k_Ll"};
    default: return {"default"};
  }
}

void validate_sweep(const SweepConfig& cfg) {
  std::vector<std::string> v;
  if (cfg.experiment == Experiment::InitSpectrum) v.push_back("init_spectrum runs through run_init_spectrum");
  if (cfg.families.empty()) v.push_back("families must be nonempty");
  if (cfg.seeds.empty()) v.push_back("seeds must be nonempty");
  if (cfg.norms.empty()) v.push_back("norms must be nonempty");
  if (cfg.experiment != Experiment::Layerwise && cfg.grid.empty()) v.push_back("grid must be nonempty");
  const auto all = experiment_toggles(cfg.experiment);
  for (const auto& t : cfg.toggles)
    if (std::find(all.begin(), all.end(), t) == all.end())
      v.push_back("toggle '" + t + "' does not belong to " + to_string(cfg.experiment));
  for (double g : cfg.grid) {
    if (!(g > 0.0) || !std::isfinite(g)) {
      v.push_back("grid values must be finite and > 0");
      break;
    }
    const bool integral = cfg.experiment != Experiment::Gain && cfg.experiment != Experiment::Epsilon;
    if (integral && std::abs(g - std::round(g)) > 0.0) {
      v.push_back(grid_name(cfg.experiment) + " grid values must be integers");
      break;
    }
  }
  if (!v.empty()) throw ValidationError(std::move(v));

  // Every cell spec must be valid too.
  for (Family f : cfg.families)
    for (const auto& t : all) {
      NetworkSpec s = cell_spec(cfg, f, t);
      EstimatorOptions o = cfg.estimator;
      if (cfg.experiment != Experiment::Layerwise)
        for (double g : cfg.grid) {
          apply_grid(cfg.experiment, g, s, o);
          validate_spec(s);
          validate_estimator(o);
        }
      else {
        validate_spec(s);
        validate_estimator(o);
      }
    }
}

SweepTable run_sweep(const SweepConfig& cfg) {
  validate_sweep(cfg);
  std::vector<std::string> toggles = cfg.toggles.empty() ? experiment_toggles(cfg.experiment) : cfg.toggles;
  SweepTable table;
  for (Family family : cfg.families) {
    if (cfg.experiment == Experiment::Layerwise) {
      SweepTable part;
      for (std::uint64_t seed : cfg.seeds) run_layerwise_cells(cfg, family, seed, part);
      // Order rows by toggle, layer, seed, norm.
      std::stable_sort(part.rows.begin(), part.rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.toggle != b.toggle) return a.toggle == "k_l0";
        if (a.grid_value != b.grid_value) return a.grid_value < b.grid_value;
        return a.seed < b.seed;
      });
      table.rows.insert(table.rows.end(), part.rows.begin(), part.rows.end());
      continue;
    }
    for (const auto& toggle : toggles) {
      SweepTable part;
      if (uses_taps(cfg.experiment)) {
        for (std::uint64_t seed : cfg.seeds) run_tap_cells(cfg, family, toggle, seed, part);
      } else {
        for (std::uint64_t seed : cfg.seeds)
          for (double g : cfg.grid) run_grid_cell(cfg, family, toggle, g, seed, part);
      }
      // Configuration order: grid value, then seed, then norm.
      std::vector<SweepRow> ordered;
      for (double g : cfg.grid)
        for (std::uint64_t seed : cfg.seeds)
          for (const auto& r : part.rows)
            if (r.grid_value == g && r.seed == seed) ordered.push_back(r);
      table.rows.insert(table.rows.end(), ordered.begin(), ordered.end());
    }
  }
  return table;
}

std::string to_csv(const SweepTable& table) {
  std::string out = "family,toggle,grid_name,grid_value,seed,norm,K_s,K_u,overflow_flag\n";
  for (const auto& r : table.rows) {
    out += r.family + ',' + r.toggle + ',' + r.grid_name + ',' + fmt(r.grid_value) + ',' + std::to_string(r.seed) +
           ',' + to_string(r.norm) + ',' + fmt(r.k_s) + ',' + fmt(r.k_u) + ',' + (r.overflow ? "1" : "0") + '\n';
  }
  return out;
}

SweepTable parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "family,toggle,grid_name,grid_value,seed,norm,K_s,K_u,overflow_flag")
    throw ValidationError("csv: unexpected header");
  SweepTable table;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const auto f = split(line, ',');
    if (f.size() != 9) throw ValidationError("csv line " + std::to_string(line_no) + ": expected 9 fields");
    SweepRow r;
    r.family = f[0];
    r.toggle = f[1];
    r.grid_name = f[2];
    r.grid_value = parse_double(f[3]);
    r.seed = std::stoull(f[4]);
    r.norm = norm_kind_from_string(f[5]);
    r.k_s = parse_double(f[6]);
    r.k_u = parse_double(f[7]);
    if (f[8] != "0" && f[8] != "1") throw ValidationError("csv line " + std::to_string(line_no) + ": bad flag");
    r.overflow = f[8] == "1";
    table.rows.push_back(std::move(r));
  }
  return table;
}

void emit_csv(const SweepTable& table, const std::filesystem::path& path) {
  if (table.rows.empty()) throw ValidationError("emit_csv: table is empty");
  write_file(path, to_csv(table));
}

std::vector<SpectrumRow> run_init_spectrum(const SpectrumConfig& cfg) {
  if (cfg.shapes.empty() || cfg.seeds.empty()) throw ValidationError("init spectrum: shapes and seeds must be nonempty");
  if (cfg.bins == 0) throw ValidationError("init spectrum: bins must be >= 1");
  const InitSpec spec{InitMethod::XavierNormal, cfg.gain};
  validate_init(spec);
  std::vector<SpectrumRow> rows;
  for (const auto& [r, c] : cfg.shapes) {
    if (r == 0 || c == 0) throw ValidationError("init spectrum: shapes must be nonempty");
    for (std::uint64_t seed : cfg.seeds) {
      const DenseMatrix w = init_matrix(spec, c, r, derive_seed(seed, {kStreamWeights, r, c}));
      const SpectrumReport rep = spectrum_report(w, cfg.bins);
      for (const auto& b : rep.bins)
        rows.push_back(SpectrumRow{r, c, seed, b.left, b.right, b.count, rep.max_value, rep.min_value});
    }
  }
  return rows;
}

std::string spectrum_csv(const std::vector<SpectrumRow>& rows) {
  std::string out = "rows,cols,seed,bin_left,bin_right,count,max_singular_value,min_singular_value\n";
  for (const auto& r : rows)
    out += std::to_string(r.rows) + ',' + std::to_string(r.cols) + ',' + std::to_string(r.seed) + ',' +
           fmt(r.bin_left) + ',' + fmt(r.bin_right) + ',' + std::to_string(r.count) + ',' +
           fmt(r.max_singular_value) + ',' + fmt(r.min_singular_value) + '\n';
  return out;
}

std::string to_string(Scale s) {
  switch (s) {
    case Scale::Tiny: return "tiny";
    case Scale::Desk: return "desk";
    case Scale::Paper: return "paper";
  }
  throw std::logic_error("unreachable");
}

Scale scale_from_string(const std::string& text) {
  if (text == "tiny") return Scale::Tiny;
  if (text == "desk") return Scale::Desk;
  if (text == "paper") return Scale::Paper;
  throw ValidationError("unknown scale '" + text + "' (expected tiny|desk|paper)");
}

FigurePlan figure_plan(Scale scale, std::optional<std::uint64_t> seed) {
  FigurePlan plan;
  SweepConfig base;
  std::size_t fig6_depth = 4;
  std::size_t fig6_outer_depth = 4;  // gain and epsilon panels
  switch (scale) {
    case Scale::Tiny:
      base.base = desk_spec(Family::TransformerDPA);
      base.base.width = 16;
      base.base.heads = 2;
      base.base.input_height = 4;
      base.base.input_width = 4;
      base.grid = {1, 2, 4};
      base.estimator.base_points = 2;
      base.estimator.perturbations = 2;
      base.seeds = {0};
      plan.fig3.shapes = {{64, 64}, {64, 128}};
      plan.fig3.seeds = {0};
      plan.fig3.bins = 16;
      fig6_depth = fig6_outer_depth = 2;
      break;
    case Scale::Desk:
      base.base = desk_spec(Family::TransformerDPA);
      break;
    case Scale::Paper:
      base.base = paper_default_spec(Family::TransformerDPA);
      base.grid = {1, 2, 4, 8, 12, 16, 24, 32, 48, 64};
      base.estimator.base_points = 10;
      base.estimator.perturbations = 10;
      fig6_outer_depth = 12;
      break;
  }
  if (seed) {
    base.seeds = {*seed};
    plan.fig3.seeds = {*seed};
  }

  plan.depth_residual = base;
  plan.depth_residual.experiment = Experiment::DepthResidual;
  plan.depth_residual.norms = {NormKind::L1, NormKind::L2, NormKind::LInf};

  plan.depth_norm = base;
  plan.depth_norm.experiment = Experiment::DepthNorm;
  plan.depth_norm.toggles = {"no_norm"};

  struct Panel {
    Experiment e;
    std::vector<double> tiny, desk, paper;
  };
  const Panel panels[] = {
      {Experiment::Gain, {0.5, 1, 2, 4}, {0.5, 1, 2, 4}, {0.25, 0.5, 1, 2, 4, 8, 16, 32, 64, 128}},
      {Experiment::Epsilon, {0.25, 1, 4}, {0.25, 0.5, 1, 4}, {0.25, 0.5, 1, 4, 16, 64, 128, 256, 512, 1024}},
      {Experiment::Hidden, {8, 16, 32}, {64, 128, 256, 512}, {128, 256, 512, 768, 1024, 2048, 3072, 4096, 6144, 8192}},
      {Experiment::Input, {2, 4, 6}, {8, 12, 16, 24}, {8, 16, 24, 32, 48, 64}},
  };
  for (const auto& p : panels) {
    SweepConfig c = base;
    c.experiment = p.e;
    c.grid = scale == Scale::Tiny ? p.tiny : scale == Scale::Desk ? p.desk : p.paper;
    const bool outer = p.e == Experiment::Gain || p.e == Experiment::Epsilon;
    c.base.depth = outer ? fig6_outer_depth : fig6_depth;
    plan.fig6.push_back(std::move(c));
  }

  plan.layerwise = base;
  plan.layerwise.experiment = Experiment::Layerwise;
  plan.layerwise.base.depth = scale == Scale::Tiny ? 4 : 12;
  plan.layerwise.estimator.perturbations = base.estimator.base_points * base.estimator.perturbations;
  return plan;
}

FiguresResult run_figures(const FigurePlan& plan, const std::string& scale_name, const std::filesystem::path& out_dir,
                          bool record_wall_time) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);
  FiguresResult result;
  auto emit = [&](const std::string& name, const std::string& content) {
    const auto path = out_dir / name;
    write_file(path, content);
    result.files.push_back(path);
  };
  auto filter = [](const SweepTable& t, auto pred) {
    SweepTable out;
    std::copy_if(t.rows.begin(), t.rows.end(), std::back_inserter(out.rows), pred);
    if (out.rows.empty()) throw ValidationError("figure table is empty");
    return out;
  };

  emit("fig3.csv", spectrum_csv(run_init_spectrum(plan.fig3)));

  const SweepTable depth = run_sweep(plan.depth_residual);
  emit("fig4.csv", to_csv(filter(depth, [](const SweepRow& r) { return r.norm == NormKind::L2; })));

  const SweepTable no_norm = run_sweep(plan.depth_norm);
  SweepTable fig5;
  for (Family f : plan.depth_norm.families) {
    const std::string name = to_string(f);
    for (const auto& r : depth.rows)
      if (r.family == name && r.toggle == "residual" && r.norm == NormKind::L2) {
        SweepRow copy = r;
        copy.toggle = "norm";
        fig5.rows.push_back(copy);
      }
    for (const auto& r : no_norm.rows)
      if (r.family == name) fig5.rows.push_back(r);
  }
  emit("fig5.csv", to_csv(fig5));

  SweepTable fig6;
  for (const auto& c : plan.fig6) {
    const SweepTable t = run_sweep(c);
    fig6.rows.insert(fig6.rows.end(), t.rows.begin(), t.rows.end());
  }
  emit("fig6.csv", to_csv(fig6));

  const SweepTable layerwise = run_sweep(plan.layerwise);
  emit("fig7.csv", to_csv(filter(layerwise, [](const SweepRow& r) { return r.toggle == "k_l0"; })));
  emit("fig8.csv", to_csv(filter(layerwise, [](const SweepRow& r) { return r.toggle == "k_Ll"; })));
  emit("fig9.csv", to_csv(filter(depth, [](const SweepRow& r) { return r.toggle == "residual"; })));

  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  emit("manifest.json", figures_manifest_json(plan, scale_name, result.files,
                                              record_wall_time ? std::optional<double>(result.wall_time_s)
                                                               : std::nullopt));
  return result;
}

FiguresResult run_all_paper_figures(Scale scale, const std::filesystem::path& out_dir,
                                    std::optional<std::uint64_t> seed, bool record_wall_time) {
  return run_figures(figure_plan(scale, seed), to_string(scale), out_dir, record_wall_time);
}

}  // namespace lipscope
