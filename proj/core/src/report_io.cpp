#include "lipscope/report_io.hpp"

#include <cmath>

#include "json.hpp"

namespace lipscope {

namespace {

using Json = nlohmann::ordered_json;

Json num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

Json num(const ExtendedReal& v) { return num(v.value()); }

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json caveats_json(const std::vector<Caveat>& caveats) {
  Json out = Json::array();
  for (Caveat c : caveats) out.push_back(to_string(c));
  return out;
}

Json spec_json(const NetworkSpec& s) {
  Json j;
  j["family"] = to_string(s.family);
  j["depth"] = s.depth;
  j["width"] = s.width;
  j["heads"] = s.heads;
  j["ffn_expand"] = s.ffn_expand;
  j["use_residual"] = s.use_residual;
  j["use_norm"] = s.use_norm;
  j["norm_kind"] = to_string(s.effective_norm());
  j["norm_eps"] = num(s.norm_eps);
  j["init"] = {{"method", to_string(s.init.method)}, {"gain", num(s.init.gain)}};
  j["droppath_p"] = num(s.droppath_p);
  j["wrs_nu_init"] = s.wrs_nu_init ? num(*s.wrs_nu_init) : Json(nullptr);
  j["conv_kernel"] = s.conv_kernel;
  j["conv_stride"] = s.conv_stride;
  j["conv_padding"] = s.conv_padding;
  j["input_height"] = s.input_height;
  j["input_width"] = s.input_width;
  j["scsa_nu"] = num(s.scsa_nu);
  j["scsa_tau"] = num(s.scsa_tau);
  j["scsa_eps"] = num(s.scsa_eps);
  return j;
}

Json sweep_json(const SweepConfig& c) {
  Json j;
  j["experiment"] = to_string(c.experiment);
  Json fams = Json::array();
  for (Family f : c.families) fams.push_back(to_string(f));
  j["families"] = fams;
  Json grid = Json::array();
  for (double g : c.grid) grid.push_back(num(g));
  j["grid_name"] = grid_name(c.experiment);
  j["grid"] = grid;
  j["base"] = spec_json(c.base);
  j["estimator"] = {{"base_points", c.estimator.base_points},
                    {"perturbations", c.estimator.perturbations},
                    {"epsilon", num(c.estimator.epsilon)}};
  j["seeds"] = c.seeds;
  Json norms = Json::array();
  for (NormKind n : c.norms) norms.push_back(to_string(n));
  j["norms"] = norms;
  j["toggles"] = c.toggles.empty() ? experiment_toggles(c.experiment) : c.toggles;
  j["overflow_range"] = num(c.overflow_range);
  j["compute_bound"] = c.compute_bound;
  return j;
}

Json threshold_json(const ThresholdResult& r) {
  return Json{{"threshold", num(r.threshold)}, {"found", r.found}, {"probes", r.probes}};
}

}  // namespace

std::string to_json(const LipschitzEstimate& e) {
  Json j;
  j["value"] = num(e.value);
  j["norm"] = to_string(e.norm);
  j["epsilon"] = num(e.epsilon);
  j["num_base_points"] = e.num_base_points;
  j["num_perturbations"] = e.num_perturbations;
  j["seed"] = e.seed;
  j["argmax_sample"] = {{"base", e.argmax_sample.base}, {"perturbation", e.argmax_sample.perturbation}};
  j["overflow"] = e.overflow;
  j["overflow_sample"] = e.overflow_sample ? Json{{"base", e.overflow_sample->base},
                                                  {"perturbation", e.overflow_sample->perturbation}}
                                           : Json(nullptr);
  return dump(j);
}

std::string to_json(const BoundReport& r) {
  Json j;
  Json per = Json::array();
  for (const auto& b : r.per_layer) per.push_back(num(b));
  j["per_layer"] = per;
  j["product"] = num(r.product);
  Json factors = Json::array();
  for (const auto& f : r.factors)
    factors.push_back({{"value", num(f.value)}, {"droppable", f.droppable}, {"layer", f.layer}});
  j["factors"] = factors;
  j["caveats"] = caveats_json(r.caveats);
  return dump(j);
}

std::string to_json(const PrincipleReport& r) {
  Json j;
  j["precision"] = to_string(r.precision);
  j["range"] = num(r.range);
  Json act = Json::array();
  for (double v : r.max_abs_activation) act.push_back(num(v));
  Json grad = Json::array();
  for (double v : r.max_abs_gradient) grad.push_back(num(v));
  j["max_abs_activation"] = act;
  j["max_abs_gradient"] = grad;
  j["forward_violations"] = r.forward_violations;
  j["backward_violations"] = r.backward_violations;
  j["backward_checked"] = r.backward_checked;
  return dump(j);
}

std::string to_json(const LayerwiseProfile& p) {
  Json j;
  Json a = Json::array();
  for (double v : p.k_l0) a.push_back(num(v));
  Json b = Json::array();
  for (std::size_t l = 0; l < p.k_Ll.size(); ++l)
    b.push_back(p.k_Ll_undefined[l] ? Json(nullptr) : num(p.k_Ll[l]));
  j["k_l0"] = a;
  j["k_Ll"] = b;
  return dump(j);
}

std::string to_json(const JacobianReport& r) {
  Json j;
  j["max_abs_err"] = num(r.max_abs_err);
  j["max_rel_err"] = num(r.max_rel_err);
  j["probe_count"] = r.probe_count;
  j["nonsmooth"] = r.nonsmooth;
  return dump(j);
}

std::string to_json(const SpectrumReport& r) {
  Json j;
  j["max_value"] = num(r.max_value);
  j["min_value"] = num(r.min_value);
  Json bins = Json::array();
  for (const auto& b : r.bins) bins.push_back({{"left", num(b.left)}, {"right", num(b.right)}, {"count", b.count}});
  j["bins"] = bins;
  return dump(j);
}

std::string to_json(const NetworkSpec& spec) { return dump(spec_json(spec)); }

std::string to_json(const SweepConfig& config) { return dump(sweep_json(config)); }

std::string to_json(const ThresholdReport& r) {
  Json j;
  j["lo"] = num(r.lo);
  j["hi"] = num(r.hi);
  j["sgd"] = threshold_json(r.sgd);
  j["adamw"] = threshold_json(r.adamw);
  return dump(j);
}

std::string figures_manifest_json(const FigurePlan& plan, const std::string& scale,
                                  const std::vector<std::filesystem::path>& files, std::optional<double> wall_time_s) {
  Json j;
  j["tool"] = "lipscope";
  j["version"] = kToolVersion;
  j["scale"] = scale;
  j["seeds"] = plan.depth_residual.seeds;
  Json config;
  config["fig3"] = {{"shapes", plan.fig3.shapes}, {"seeds", plan.fig3.seeds}, {"bins", plan.fig3.bins},
                    {"gain", num(plan.fig3.gain)}};
  config["depth_residual"] = sweep_json(plan.depth_residual);
  config["depth_norm"] = sweep_json(plan.depth_norm);
  Json fig6 = Json::array();
  for (const auto& c : plan.fig6) fig6.push_back(sweep_json(c));
  config["fig6"] = fig6;
  config["layerwise"] = sweep_json(plan.layerwise);
  j["config"] = config;
  Json names = Json::array();
  for (const auto& f : files) names.push_back(f.filename().string());
  j["files"] = names;
  j["wall_time_s"] = wall_time_s ? num(*wall_time_s) : Json(nullptr);
  return dump(j);
}

std::string error_json(const std::string& kind, const std::string& message, const std::vector<std::string>& violations) {
  Json j;
  j["error"] = {{"kind", kind}, {"message", message}, {"violations", violations}};
  return j.dump() + "\n";
}

}  // namespace lipscope
