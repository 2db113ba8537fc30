#include "cli/app.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "CLI11.hpp"
#include "cli/config.hpp"
#include "lipscope/layer_factory.hpp"
#include "lipscope/report_io.hpp"
#include "lipscope/rng.hpp"

namespace lipscope::cli {

namespace {

struct Invocation {
  std::string subcommand;
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool json_errors = false;
  bool lenient = false;
  bool record_time = false;
  bool print_config = false;
  std::string scale;
};

struct Subcommand {
  const char* name;
  const char* description;
  bool needs_config;
};

constexpr Subcommand kSubcommands[] = {
    {"estimate", "sampled Lipschitz estimate K_s of the configured network (JSON)", true},
    {"bound", "analytic upper bound K_u of the configured network", true},
    {"jacobian-check", "analytic vs finite-difference Jacobian of a random layer (JSON)", false},
    {"sweep", "experiment sweep table (CSV)", true},
    {"figures", "every figure table of a preset into the --out directory", false},
    {"init-stats", "singular-value histogram of one initialized matrix (JSON)", false},
    {"optim-sim", "toy training trace (CSV) or divergence thresholds (JSON)", false},
    {"principles", "forward/backward floating-point range check (JSON)", true},
};

const std::vector<std::string> kFlags = {"--config", "--set",     "--out",          "--seed",
                                         "--json-errors", "--lenient", "--record-time", "--scale",
                                         "--print-config", "--help", "-h"};

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void emit(const Invocation& inv, const std::string& content, std::ostream& out) {
  if (inv.out.empty()) {
    out << content;
    return;
  }
  std::ofstream file(inv.out, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write '" + inv.out + "'");
  file << content;
  if (!file.flush()) throw std::runtime_error("write failed for '" + inv.out + "'");
}

std::string run_estimate(const Invocation& inv, const Settings& s) {
  const Network net = Network::build(s.net, inv.seed);
  EstimatorOptions o = s.estimator;
  o.seed = inv.seed;
  return to_json(estimate_K(net, o));
}

std::string run_jacobian(const Invocation& inv, const Settings& s) {
  const JacobianSettings& j = s.jacobian;
  const RandomLayer layer = random_layer(j.kind, j.dim, j.tokens, inv.seed);
  const DenseMatrix x = random_layer_input(layer, inv.seed, 0, j.kink_margin);
  return to_json(check_jacobian_fd(layer.layer, x, j.probes, j.step, inv.seed));
}

std::string run_sweep_cmd(const Invocation& inv, const Settings& s) {
  SweepConfig c = s.sweep;
  c.base = s.net;
  c.estimator = s.estimator;
  if (inv.seed_given) c.seeds = {inv.seed};
  if (c.experiment == Experiment::InitSpectrum) {
    SpectrumConfig sc;
    sc.shapes = {{s.init_stats.rows, s.init_stats.cols}};
    sc.seeds = c.seeds;
    sc.bins = s.init_stats.bins;
    sc.gain = s.init_stats.gain;
    return spectrum_csv(run_init_spectrum(sc));
  }
  return to_csv(run_sweep(c));
}

std::string run_init_stats(const Invocation& inv, const Settings& s) {
  const InitStatsSettings& i = s.init_stats;
  InitSpec spec{i.method, i.gain};
  spec.depth = s.net.depth;
  const DenseMatrix w = init_matrix(spec, i.cols, i.rows, derive_seed(inv.seed, {kStreamWeights, i.rows, i.cols}));
  return to_json(spectrum_report(w, i.bins));
}

std::string run_optim(const Invocation& inv, const Settings& s) {
  ToyTrainingConfig toy = s.optim.toy;
  toy.seed = inv.seed;
  if (s.optim.mode == OptimMode::Trace) return run_toy_training(toy).to_csv();
  ThresholdReport report;
  report.lo = s.optim.lr_lo;
  report.hi = s.optim.lr_hi;
  toy.optimizer = OptimizerKind::SGD;
  report.sgd = divergence_threshold(toy, report.lo, report.hi, s.optim.iterations);
  toy.optimizer = OptimizerKind::AdamW;
  report.adamw = divergence_threshold(toy, report.lo, report.hi, s.optim.iterations);
  return to_json(report);
}

std::string run_principles(const Invocation& inv, const Settings& s) {
  const Network net = Network::build(s.net, inv.seed);
  return to_json(check_principles(net, random_input(net, inv.seed, 0), s.precision));
}

int dispatch(const Invocation& inv, std::ostream& out) {
  Settings s;
  if (!inv.config.empty()) load_config_file(inv.config, s, inv.lenient);
  for (const auto& a : inv.sets) apply_override(a, s, inv.lenient);
  if (!inv.scale.empty()) s.scale = scale_from_string(inv.scale);
  validate_settings(s);
  if (inv.print_config) {
    out << serialize_config(s);
    return kExitOk;
  }
  const auto* sub = std::find_if(std::begin(kSubcommands), std::end(kSubcommands),
                                 [&](const Subcommand& c) { return inv.subcommand == c.name; });
  if (sub->needs_config && inv.config.empty())
    throw ValidationError(inv.subcommand + " requires --config");

  if (inv.subcommand == "estimate") emit(inv, run_estimate(inv, s), out);
  else if (inv.subcommand == "bound") {
    const BoundReport report = compose_network_bound(Network::build(s.net, inv.seed));
    std::string caveats;
    for (Caveat c : report.caveats) caveats += (caveats.empty() ? "" : ",") + to_string(c);
    std::string text = "K_u = " + fmt(report.product.value()) + "\n";
    text += "caveats: " + (caveats.empty() ? std::string("none") : caveats) + "\n";
    if (!inv.out.empty()) emit(inv, to_json(report), out);
    out << text;
  } else if (inv.subcommand == "jacobian-check") emit(inv, run_jacobian(inv, s), out);
  else if (inv.subcommand == "sweep") emit(inv, run_sweep_cmd(inv, s), out);
  else if (inv.subcommand == "figures") {
    if (inv.out.empty()) throw ValidationError("figures requires --out DIR");
    const auto start = std::chrono::steady_clock::now();
    const FiguresResult r = run_all_paper_figures(s.scale, inv.out, inv.seed_given ? std::optional(inv.seed) : std::nullopt,
                                                  inv.record_time);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& f : r.files) out << f.string() << "\n";
    out << "wall_time_s = " << fmt(std::round(wall * 1000.0) / 1000.0) << "\n";
  } else if (inv.subcommand == "init-stats") emit(inv, run_init_stats(inv, s), out);
  else if (inv.subcommand == "optim-sim") emit(inv, run_optim(inv, s), out);
  else if (inv.subcommand == "principles") emit(inv, run_principles(inv, s), out);
  return kExitOk;
}

void report_error(const Invocation& inv, const std::string& kind, const std::string& message,
                  const std::vector<std::string>& violations, std::ostream& err) {
  if (inv.json_errors) {
    err << error_json(kind, message, violations);
    return;
  }
  err << "error: " << message << "\n";
  for (const auto& v : violations)
    if (v != message) err << "  " << v << "\n";
}

// Flags and subcommands are checked up front so that a typo gets a suggestion.
std::optional<std::string> check_words(const std::vector<std::string>& args) {
  bool have_sub = false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("-", 0) == 0) {
      const std::string flag = a.substr(0, a.find('='));
      if (std::find(kFlags.begin(), kFlags.end(), flag) == kFlags.end()) {
        const std::string near = nearest(flag, kFlags);
        return "unknown flag '" + flag + "'" + (near.empty() ? "" : "; did you mean '" + near + "'?");
      }
      const bool takes_value = flag == "--config" || flag == "--set" || flag == "--out" || flag == "--seed" ||
                               flag == "--scale";
      if (takes_value && a.find('=') == std::string::npos) ++i;
    } else if (!have_sub) {
      if (std::find(subcommands().begin(), subcommands().end(), a) == subcommands().end()) {
        const std::string near = nearest(a, subcommands());
        return "unknown subcommand '" + a + "'" + (near.empty() ? "" : "; did you mean '" + near + "'?");
      }
      have_sub = true;
    } else {
      return "unexpected argument '" + a + "'";
    }
  }
  return std::nullopt;
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& c : kSubcommands) n.emplace_back(c.name);
    return n;
  }();
  return names;
}

std::string nearest(const std::string& word, const std::vector<std::string>& candidates) {
  std::string best;
  std::size_t best_d = 4;
  for (const auto& c : candidates) {
    std::vector<std::size_t> prev(c.size() + 1), cur(c.size() + 1);
    for (std::size_t j = 0; j <= c.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= word.size(); ++i) {
      cur[0] = i;
      for (std::size_t j = 1; j <= c.size(); ++j)
        cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (word[i - 1] == c[j - 1] ? 0 : 1)});
      std::swap(prev, cur);
    }
    if (prev[c.size()] < best_d) {
      best_d = prev[c.size()];
      best = c;
    }
  }
  return best;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Invocation inv;
  inv.json_errors = std::find(args.begin(), args.end(), "--json-errors") != args.end();

  CLI::App app{"lipscope: sampled and analytic Lipschitz constants of neural networks", "lipscope"};
  app.require_subcommand(1);
  app.footer("\n" + config_help());
  app.add_option("--config", inv.config, "config file (key=value with [section] headers)");
  app.add_option("--set", inv.sets, "override one config key, e.g. --set depth=4 or --set sweep.grid=1,2");
  app.add_option("--out", inv.out, "output file (output directory for figures); stdout when omitted");
  CLI::Option* seed = app.add_option("--seed", inv.seed, "root seed (default 0)");
  app.add_flag("--json-errors", inv.json_errors, "errors as JSON on stderr");
  app.add_flag("--lenient", inv.lenient, "ignore unknown config keys");
  app.add_flag("--record-time", inv.record_time, "figures: record wall time in manifest.json");
  app.add_option("--scale", inv.scale, "figures preset: tiny|desk|paper (default desk)");
  app.add_flag("--print-config", inv.print_config, "print the resolved config in canonical form and exit");
  for (const auto& c : kSubcommands) app.add_subcommand(c.name, c.description)->fallthrough()->footer("\n" + config_help());

  if (auto problem = check_words(args)) {
    report_error(inv, "validation", *problem, {}, err);
    return kExitValidation;
  }

  std::vector<const char*> argv{"lipscope"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(inv, "validation", e.what(), {}, err);
    return kExitValidation;
  }
  inv.subcommand = app.get_subcommands().front()->get_name();
  inv.seed_given = seed->count() > 0;

  try {
    return dispatch(inv, out);
  } catch (const ValidationError& e) {
    const auto& v = e.violations();
    const std::string message = v.size() == 1 ? v.front() : std::to_string(v.size()) + " validation problems";
    report_error(inv, "validation", message, v, err);
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    report_error(inv, "validation", e.what(), {}, err);
    return kExitValidation;
  } catch (const std::exception& e) {
    report_error(inv, "runtime", e.what(), {}, err);
    return kExitRuntime;
  }
}

}  // namespace lipscope::cli
