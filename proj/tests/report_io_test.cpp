#include <gtest/gtest.h>

#include <limits>

#include "json.hpp"
#include "lipscope/report_io.hpp"

namespace lipscope {
namespace {

using Json = nlohmann::json;

constexpr double kInfD = std::numeric_limits<double>::infinity();

TEST(ReportJson, EstimateFields) {
  LipschitzEstimate e;
  e.value = kInfD;
  e.norm = NormKind::L1;
  e.epsilon = 1e-7;
  e.num_base_points = 3;
  e.num_perturbations = 4;
  e.seed = 9;
  e.argmax_sample = {1, 2};
  e.overflow = true;
  e.overflow_sample = SampleIndex{1, 2};
  const std::string text = to_json(e);
  EXPECT_EQ(text.back(), '\n');
  const Json j = Json::parse(text);
  EXPECT_EQ(j["value"], "inf");
  EXPECT_EQ(j["norm"], to_string(NormKind::L1));
  EXPECT_EQ(j["epsilon"].get<double>(), 1e-7);
  EXPECT_EQ(j["num_base_points"], 3);
  EXPECT_EQ(j["seed"], 9);
  EXPECT_EQ(j["argmax_sample"]["perturbation"], 2);
  EXPECT_EQ(j["overflow_sample"]["base"], 1);
  e.overflow_sample.reset();
  EXPECT_TRUE(Json::parse(to_json(e))["overflow_sample"].is_null());
}

TEST(ReportJson, BoundWithCaveats) {
  BoundReport r;
  r.per_layer = {ExtendedReal(2.0), ExtendedReal::infinity()};
  r.product = ExtendedReal::infinity();
  r.factors = {{ExtendedReal(2.0), true, 1}};
  r.caveats = {Caveat::DpaUnbounded};
  const Json j = Json::parse(to_json(r));
  EXPECT_EQ(j["per_layer"][0].get<double>(), 2.0);
  EXPECT_EQ(j["per_layer"][1], "inf");
  EXPECT_EQ(j["product"], "inf");
  EXPECT_EQ(j["factors"][0]["droppable"], true);
  EXPECT_EQ(j["caveats"][0], "dpa_unbounded");
}

TEST(ReportJson, LayerwiseUndefinedIsNull) {
  LayerwiseProfile p;
  p.k_l0 = {1.0, 2.0};
  p.k_Ll = {0.0, 1.0};
  p.k_Ll_undefined = {true, false};
  const Json j = Json::parse(to_json(p));
  EXPECT_TRUE(j["k_Ll"][0].is_null());
  EXPECT_EQ(j["k_Ll"][1].get<double>(), 1.0);
  EXPECT_EQ(j["k_l0"].size(), 2u);
}

TEST(ReportJson, ManifestWallTimeIsOptIn) {
  const FigurePlan plan = figure_plan(Scale::Tiny);
  const std::vector<std::filesystem::path> files{"out/fig3.csv", "out/fig4.csv"};
  const Json a = Json::parse(figures_manifest_json(plan, "tiny", files, std::nullopt));
  EXPECT_TRUE(a["wall_time_s"].is_null());
  EXPECT_EQ(a["tool"], "lipscope");
  EXPECT_EQ(a["version"], kToolVersion);
  EXPECT_EQ(a["files"], (Json{"fig3.csv", "fig4.csv"}));
  EXPECT_EQ(a["config"]["fig6"].size(), 4u);
  const Json b = Json::parse(figures_manifest_json(plan, "tiny", files, 1.5));
  EXPECT_EQ(b["wall_time_s"].get<double>(), 1.5);
}

TEST(ReportJson, ErrorShape) {
  const Json j = Json::parse(error_json("validation", "2 validation problems", {"a", "b"}));
  EXPECT_EQ(j["error"]["kind"], "validation");
  EXPECT_EQ(j["error"]["message"], "2 validation problems");
  EXPECT_EQ(j["error"]["violations"], (Json{"a", "b"}));
}

TEST(ReportJson, SpecRoundTripsFields) {
  const NetworkSpec s = paper_default_spec(Family::TransformerDPA);
  const Json j = Json::parse(to_json(s));
  EXPECT_EQ(j["family"], "transformer_dpa");
  EXPECT_EQ(j["depth"], 12);
  EXPECT_EQ(j["width"], 1024);
  EXPECT_EQ(j["heads"], 8);
  EXPECT_TRUE(j["wrs_nu_init"].is_null());
}

TEST(ReportJson, ThresholdInfinite) {
  ThresholdReport r;
  r.sgd = {5000.0, true, 12};
  r.adamw = {kInfD, false, 12};
  r.lo = 1e-3;
  r.hi = 1e4;
  const Json j = Json::parse(to_json(r));
  EXPECT_EQ(j["adamw"]["threshold"], "inf");
  EXPECT_EQ(j["adamw"]["found"], false);
  EXPECT_EQ(j["sgd"]["threshold"].get<double>(), 5000.0);
}

}  // namespace
}  // namespace lipscope
