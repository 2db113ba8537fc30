#include "cli/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "lipscope/errors.hpp"

namespace lipscope::cli {

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

double parse_double(const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc() || r.ptr != end || std::isnan(v))
    throw std::invalid_argument("expects a number, got '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const char* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc() || r.ptr != end)
    throw std::invalid_argument("expects a non-negative integer, got '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s) { return static_cast<std::size_t>(parse_u64(s)); }

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("expects true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (item.empty()) throw std::invalid_argument("has an empty list item in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& to_text) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += to_text(items[i]);
  }
  return out;
}

// Wraps an enum parser so its message names the accepted values.
template <typename F>
auto parse_enum(F&& from_string, const std::string& s, const char* expected) {
  try {
    return from_string(s);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument(std::string("expects one of ") + expected + ", got '" + s + "'");
  }
}

constexpr const char* kFamilies = "resnet_conv|transformer_dpa|transformer_scsa|transformer_l2a";

#define KEY_SIZE(sec, key, field, help)                                                        \
  ConfigKey{sec, key, help, [](Settings& c, const std::string& v) { c.field = parse_size(v); }, \
            [](const Settings& c) { return std::to_string(c.field); }}
#define KEY_DOUBLE(sec, key, field, help)                                                        \
  ConfigKey{sec, key, help, [](Settings& c, const std::string& v) { c.field = parse_double(v); }, \
            [](const Settings& c) { return fmt(c.field); }}
#define KEY_BOOL(sec, key, field, help)                                                        \
  ConfigKey{sec, key, help, [](Settings& c, const std::string& v) { c.field = parse_bool(v); }, \
            [](const Settings& c) { return fmt(c.field); }}
#define KEY_ENUM(sec, key, field, from, expected, help)                                                  \
  ConfigKey{sec, key, help, [](Settings& c, const std::string& v) { c.field = parse_enum(from, v, expected); }, \
            [](const Settings& c) { return to_string(c.field); }}

std::vector<ConfigKey> make_keys() {
  return {
      KEY_ENUM("network", "family", net.family, family_from_string, kFamilies, "network family"),
      KEY_SIZE("network", "depth", net.depth, "number of layers L"),
      KEY_SIZE("network", "width", net.width, "hidden dimension D (channels for resnet_conv)"),
      KEY_SIZE("network", "heads", net.heads, "attention heads"),
      KEY_SIZE("network", "ffn_expand", net.ffn_expand, "FFN hidden size as a multiple of D"),
      KEY_BOOL("network", "use_residual", net.use_residual, "residual shortcuts"),
      KEY_BOOL("network", "use_norm", net.use_norm, "normalization layers"),
      ConfigKey{"network", "norm_kind", "auto (bn for resnet_conv, ln otherwise)|ln|bn|rmsnorm|centernorm",
                [](Settings& c, const std::string& v) {
                  if (v == "auto") c.net.norm_kind.reset();
                  else c.net.norm_kind = parse_enum(norm_layer_kind_from_string, v, "auto|ln|bn|rmsnorm|centernorm");
                },
                [](const Settings& c) { return c.net.norm_kind ? to_string(*c.net.norm_kind) : std::string("auto"); }},
      KEY_DOUBLE("network", "norm_eps", net.norm_eps, "normalization epsilon"),
      KEY_ENUM("network", "init", net.init.method, init_method_from_string,
               "xavier_uniform|xavier_normal|kaiming|orthogonal|spectral|depth_aware", "weight initializer"),
      KEY_DOUBLE("network", "gain", net.init.gain, "initializer gain"),
      KEY_DOUBLE("network", "droppath_p", net.droppath_p, "DropPath probability"),
      ConfigKey{"network", "wrs_nu_init", "weighted-residual nu at init; none disables it",
                [](Settings& c, const std::string& v) {
                  if (v == "none") c.net.wrs_nu_init.reset();
                  else c.net.wrs_nu_init = parse_double(v);
                },
                [](const Settings& c) { return c.net.wrs_nu_init ? fmt(*c.net.wrs_nu_init) : std::string("none"); }},
      KEY_SIZE("network", "conv_kernel", net.conv_kernel, "resnet_conv kernel size"),
      KEY_SIZE("network", "conv_stride", net.conv_stride, "resnet_conv stride"),
      KEY_SIZE("network", "conv_padding", net.conv_padding, "resnet_conv padding"),
      KEY_SIZE("network", "input_height", net.input_height, "input grid height"),
      KEY_SIZE("network", "input_width", net.input_width, "input grid width"),
      KEY_DOUBLE("network", "scsa_nu", net.scsa_nu, "SCSA nu"),
      KEY_DOUBLE("network", "scsa_tau", net.scsa_tau, "SCSA tau"),
      KEY_DOUBLE("network", "scsa_eps", net.scsa_eps, "SCSA epsilon"),

      KEY_SIZE("estimator", "base_points", estimator.base_points, "base points sampled"),
      KEY_SIZE("estimator", "perturbations", estimator.perturbations, "directions per base point"),
      KEY_DOUBLE("estimator", "epsilon", estimator.epsilon, "perturbation size (> 0)"),
      KEY_ENUM("estimator", "norm", estimator.norm, norm_kind_from_string, "L1|L2|LInf", "norm of K_s"),
      KEY_DOUBLE("estimator", "overflow_range", estimator.overflow_range, "activation magnitude counted as overflow"),

      KEY_ENUM("sweep", "experiment", sweep.experiment, experiment_from_string,
               "depth_residual|depth_norm|gain|epsilon|hidden|input|layerwise|norms|init_spectrum", "experiment"),
      ConfigKey{"sweep", "families", "comma list of families",
                [](Settings& c, const std::string& v) {
                  std::vector<Family> out;
                  for (const auto& s : split_list(v))
                    out.push_back(parse_enum(family_from_string, s, kFamilies));
                  c.sweep.families = out;
                },
                [](const Settings& c) { return join(c.sweep.families, [](Family f) { return to_string(f); }); }},
      ConfigKey{"sweep", "grid", "comma list of grid values",
                [](Settings& c, const std::string& v) {
                  std::vector<double> out;
                  for (const auto& s : split_list(v)) out.push_back(parse_double(s));
                  c.sweep.grid = out;
                },
                [](const Settings& c) { return join(c.sweep.grid, [](double g) { return fmt(g); }); }},
      ConfigKey{"sweep", "seeds", "comma list of seeds (--seed replaces it with one seed)",
                [](Settings& c, const std::string& v) {
                  std::vector<std::uint64_t> out;
                  for (const auto& s : split_list(v)) out.push_back(parse_u64(s));
                  c.sweep.seeds = out;
                },
                [](const Settings& c) { return join(c.sweep.seeds, [](std::uint64_t s) { return std::to_string(s); }); }},
      ConfigKey{"sweep", "norms", "comma list of norms",
                [](Settings& c, const std::string& v) {
                  std::vector<NormKind> out;
                  for (const auto& s : split_list(v)) out.push_back(parse_enum(norm_kind_from_string, s, "L1|L2|LInf"));
                  c.sweep.norms = out;
                },
                [](const Settings& c) { return join(c.sweep.norms, [](NormKind n) { return to_string(n); }); }},
      ConfigKey{"sweep", "toggles", "comma list of toggles to run; all when empty",
                [](Settings& c, const std::string& v) { c.sweep.toggles = split_list(v == "all" ? "" : v); },
                [](const Settings& c) {
                  return c.sweep.toggles.empty() ? std::string("all")
                                                 : join(c.sweep.toggles, [](const std::string& s) { return s; });
                }},
      KEY_DOUBLE("sweep", "overflow_range", sweep.overflow_range, "activation magnitude counted as overflow"),
      KEY_BOOL("sweep", "compute_bound", sweep.compute_bound, "compose K_u per cell"),

      ConfigKey{"jacobian", "kind", "layer kind for jacobian-check",
                [](Settings& c, const std::string& v) { c.jacobian.kind = v; },
                [](const Settings& c) { return c.jacobian.kind; }},
      KEY_SIZE("jacobian", "dim", jacobian.dim, "feature dimension"),
      KEY_SIZE("jacobian", "tokens", jacobian.tokens, "columns (pixels for conv kinds)"),
      KEY_SIZE("jacobian", "probes", jacobian.probes, "finite-difference directions"),
      KEY_DOUBLE("jacobian", "step", jacobian.step, "central-difference step"),
      KEY_DOUBLE("jacobian", "kink_margin", jacobian.kink_margin, "ReLU/FFN pre-activation margin"),

      KEY_ENUM("init_stats", "method", init_stats.method, init_method_from_string,
               "xavier_uniform|xavier_normal|kaiming|orthogonal|spectral|depth_aware", "initializer"),
      KEY_DOUBLE("init_stats", "gain", init_stats.gain, "initializer gain"),
      KEY_SIZE("init_stats", "rows", init_stats.rows, "matrix rows (fan out)"),
      KEY_SIZE("init_stats", "cols", init_stats.cols, "matrix columns (fan in)"),
      KEY_SIZE("init_stats", "bins", init_stats.bins, "histogram bins"),

      ConfigKey{"optim", "mode", "trace|threshold",
                [](Settings& c, const std::string& v) {
                  if (v == "trace") c.optim.mode = OptimMode::Trace;
                  else if (v == "threshold") c.optim.mode = OptimMode::Threshold;
                  else throw std::invalid_argument("expects one of trace|threshold, got '" + v + "'");
                },
                [](const Settings& c) {
                  return std::string(c.optim.mode == OptimMode::Trace ? "trace" : "threshold");
                }},
      KEY_ENUM("optim", "optimizer", optim.toy.optimizer, optimizer_kind_from_string, "sgd|adamw", "optimizer"),
      KEY_SIZE("optim", "steps", optim.toy.steps, "training steps"),
      KEY_DOUBLE("optim", "lr", optim.toy.lr, "learning rate"),
      KEY_DOUBLE("optim", "weight_decay", optim.toy.weight_decay, "decoupled weight decay"),
      KEY_DOUBLE("optim", "momentum", optim.toy.momentum, "SGD momentum"),
      KEY_DOUBLE("optim", "beta1", optim.toy.beta1, "AdamW beta1"),
      KEY_DOUBLE("optim", "beta2", optim.toy.beta2, "AdamW beta2"),
      KEY_DOUBLE("optim", "adam_eps", optim.toy.adam_eps, "AdamW epsilon"),
      KEY_ENUM("optim", "bias_correction", optim.toy.bias_correction, bias_correction_from_string, "fixed|stepwise",
               "AdamW bias correction"),
      KEY_ENUM("optim", "update_form", optim.toy.update_form, adam_update_form_from_string, "sqrt|as_printed",
               "AdamW update form"),
      KEY_DOUBLE("optim", "clip_norm", optim.toy.clip_norm, "global gradient clipping; 0 disables"),
      KEY_BOOL("optim", "zero_gradients", optim.toy.zero_gradients, "apply weight decay only"),
      KEY_SIZE("optim", "head_out", optim.toy.head_out, "toy head outputs"),
      KEY_DOUBLE("optim", "lr_lo", optim.lr_lo, "threshold search lower learning rate"),
      KEY_DOUBLE("optim", "lr_hi", optim.lr_hi, "threshold search upper learning rate"),
      KEY_SIZE("optim", "iterations", optim.iterations, "threshold bisection steps"),

      KEY_ENUM("principles", "precision", precision, precision_from_string, "fp16|fp32", "simulated precision"),
      KEY_ENUM("figures", "scale", scale, scale_from_string, "tiny|desk|paper", "figure preset"),
  };
}

#undef KEY_SIZE
#undef KEY_DOUBLE
#undef KEY_BOOL
#undef KEY_ENUM

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Returns the matching key or nullptr; `error` is set for ambiguous names.
const ConfigKey* find_key(const std::string& section, const std::string& name, std::string& error) {
  const ConfigKey* found = nullptr;
  for (const auto& k : config_keys()) {
    if (k.name != name || (!section.empty() && k.section != section)) continue;
    if (found) {
      error = "key '" + name + "' is ambiguous (in [" + found->section + "] and [" + k.section +
              "]); put it under a section";
      return nullptr;
    }
    found = &k;
  }
  return found;
}

void assign(const std::string& section, const std::string& name, const std::string& value, Settings& settings,
            bool lenient, const std::string& where, std::vector<std::string>& errors) {
  std::string ambiguity;
  const ConfigKey* key = find_key(section, name, ambiguity);
  if (!key) {
    if (!ambiguity.empty()) errors.push_back(where + ambiguity);
    else if (!lenient)
      errors.push_back(where + "unknown key '" + (section.empty() ? name : section + "." + name) + "'");
    return;
  }
  try {
    key->set(settings, value);
  } catch (const std::invalid_argument& e) {
    errors.push_back(where + "key '" + key->name + "' " + e.what());
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

void load_config_text(const std::string& text, Settings& settings, bool lenient) {
  std::vector<std::string> errors;
  std::istringstream in(text);
  std::string line;
  std::string section;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const std::string where = "line " + std::to_string(number) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back(where + "malformed section header '" + line + "'");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& k : config_keys()) known = known || k.section == section;
      if (!known && !lenient) errors.push_back(where + "unknown section [" + section + "]");
      continue;
    }
    std::istringstream tokens(line);
    std::string token;
    while (tokens >> token) {
      const auto eq = token.find('=');
      if (eq == std::string::npos || eq == 0) {
        errors.push_back(where + "expected key=value, got '" + token + "'");
        continue;
      }
      assign(section, token.substr(0, eq), token.substr(eq + 1), settings, lenient, where, errors);
    }
  }
  if (!errors.empty()) throw ValidationError(std::move(errors));
  validate_settings(settings);
}

void load_config_file(const std::string& path, Settings& settings, bool lenient) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  load_config_text(text.str(), settings, lenient);
}

void apply_override(const std::string& assignment, Settings& settings, bool lenient) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + assignment + "'");
  std::string name = assignment.substr(0, eq);
  std::string section;
  if (const auto dot = name.find('.'); dot != std::string::npos) {
    section = name.substr(0, dot);
    name = name.substr(dot + 1);
  }
  std::vector<std::string> errors;
  assign(section, name, assignment.substr(eq + 1), settings, lenient, "--set: ", errors);
  if (!errors.empty()) throw ValidationError(std::move(errors));
}

void validate_settings(const Settings& s) {
  std::vector<std::string> v;
  auto collect = [&](auto&& check) {
    try {
      check();
    } catch (const ValidationError& e) {
      v.insert(v.end(), e.violations().begin(), e.violations().end());
    }
  };
  collect([&] { validate_spec(s.net); });
  collect([&] { validate_estimator(s.estimator); });
  if (s.jacobian.probes == 0) v.push_back("jacobian.probes must be >= 1");
  if (!(s.jacobian.step > 0.0)) v.push_back("jacobian.step must be > 0");
  if (s.init_stats.rows == 0 || s.init_stats.cols == 0) v.push_back("init_stats rows and cols must be >= 1");
  if (s.init_stats.bins == 0) v.push_back("init_stats.bins must be >= 1");
  collect([&] { validate_init(InitSpec{s.init_stats.method, s.init_stats.gain}); });
  if (!(s.optim.lr_lo > 0.0 && s.optim.lr_lo < s.optim.lr_hi)) v.push_back("optim: need 0 < lr_lo < lr_hi");
  if (!v.empty()) throw ValidationError(std::move(v));
}

std::string serialize_config(const Settings& settings) {
  std::string out;
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      if (!section.empty()) out += '\n';
      section = k.section;
      out += "[" + section + "]\n";
    }
    out += k.name + "=" + k.get(settings) + "\n";
  }
  return out;
}

std::string config_help() {
  std::string out = "Config keys ([section] key=default):\n";
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      section = k.section;
      out += "  [" + section + "]\n";
    }
    std::string line = "    " + k.name + "=" + k.default_value();
    if (line.size() < 40) line.resize(40, ' ');
    else line += "  ";
    out += line + k.help + "\n";
  }
  return out;
}

}  // namespace lipscope::cli
