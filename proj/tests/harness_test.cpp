#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "lipscope/harness.hpp"

namespace lipscope {
namespace {

namespace fs = std::filesystem;

SweepConfig tiny_sweep(Experiment e) {
  SweepConfig c;
  c.experiment = e;
  c.base = desk_spec(Family::TransformerDPA);
  c.base.width = 8;
  c.base.heads = 2;
  c.base.input_height = 2;
  c.base.input_width = 2;
  c.grid = {1, 2, 3};
  c.seeds = {0, 1};
  c.estimator.base_points = 2;
  c.estimator.perturbations = 2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("lipscope_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  return d;
}

TEST(Sweep, GridCoverage) {
  const SweepConfig c = tiny_sweep(Experiment::DepthResidual);
  const SweepTable t = run_sweep(c);
  std::map<double, std::size_t> count;
  for (const auto& r : t.rows) count[r.grid_value]++;
  for (double g : c.grid) EXPECT_EQ(count[g], c.families.size() * 2 * c.seeds.size());
  EXPECT_EQ(t.rows.size(), c.grid.size() * c.families.size() * 2 * c.seeds.size());
}

TEST(Sweep, DepthCellsMatchDirectEstimates) {
  const SweepConfig c = tiny_sweep(Experiment::DepthResidual);
  const SweepTable t = run_sweep(c);
  for (const auto& r : t.rows) {
    NetworkSpec s = c.base;
    s.family = family_from_string(r.family);
    s.use_residual = r.toggle == "residual";
    s.depth = static_cast<std::size_t>(r.grid_value);
    const Network net = Network::build(s, r.seed);
    EstimatorOptions o = c.estimator;
    o.seed = r.seed;
    EXPECT_EQ(r.k_s, estimate_K(net, o).value) << r.family << " " << r.toggle << " " << r.grid_value;
    EXPECT_EQ(r.k_u, compose_network_bound(net).product.value());
  }
}

TEST(Sweep, GainCellsMatchDirectEstimates) {
  SweepConfig c = tiny_sweep(Experiment::Gain);
  c.grid = {0.5, 2.0};
  c.families = {Family::TransformerSCSA};
  c.seeds = {3};
  for (const auto& r : run_sweep(c).rows) {
    NetworkSpec s = c.base;
    s.family = Family::TransformerSCSA;
    s.init.gain = r.grid_value;
    EstimatorOptions o = c.estimator;
    o.seed = 3;
    EXPECT_EQ(r.k_s, estimate_K(Network::build(s, 3), o).value);
  }
}

TEST(Sweep, OverflowBecomesSentinel) {
  SweepConfig c = tiny_sweep(Experiment::DepthNorm);
  c.families = {Family::TransformerDPA};
  c.overflow_range = 1e-3;
  const SweepTable t = run_sweep(c);
  ASSERT_FALSE(t.rows.empty());
  for (const auto& r : t.rows) {
    EXPECT_TRUE(r.overflow);
    EXPECT_TRUE(std::isinf(r.k_s));
  }
}

TEST(Sweep, MoreDirectionsNeverLowerACell) {
  SweepConfig c = tiny_sweep(Experiment::DepthResidual);
  const SweepTable a = run_sweep(c);
  c.estimator.perturbations *= 2;
  const SweepTable b = run_sweep(c);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_GE(b.rows[i].k_s, a.rows[i].k_s);
}

TEST(Sweep, LayerwiseRows) {
  SweepConfig c = tiny_sweep(Experiment::Layerwise);
  c.families = {Family::TransformerDPA};
  c.seeds = {0};
  c.base.depth = 3;
  const SweepTable t = run_sweep(c);
  ASSERT_EQ(t.rows.size(), 8u);
  EXPECT_EQ(t.rows[0].toggle, "k_l0");
  EXPECT_NEAR(t.rows[0].k_s, 1.0, 1e-12);
  EXPECT_EQ(t.rows[7].toggle, "k_Ll");
  EXPECT_NEAR(t.rows[7].k_s, 1.0, 1e-12);
  EXPECT_EQ(t.rows[7].k_u, 1.0);
}

TEST(Sweep, Validation) {
  SweepConfig c = tiny_sweep(Experiment::Gain);
  c.grid.clear();
  c.seeds.clear();
  try {
    validate_sweep(c);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_GE(e.violations().size(), 2u);
  }
  EXPECT_THROW(experiment_from_string("fig4"), ValidationError);
  EXPECT_EQ(grid_name(Experiment::Input), "input_size");
  EXPECT_EQ(experiment_toggles(Experiment::DepthNorm), (std::vector<std::string>{"norm", "no_norm"}));
}

TEST(Csv, RoundTripAndFormat) {
  const SweepTable t = run_sweep(tiny_sweep(Experiment::DepthResidual));
  const std::string csv = to_csv(t);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "family,toggle,grid_name,grid_value,seed,norm,K_s,K_u,overflow_flag");
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  EXPECT_EQ(parse_csv(csv).rows, t.rows);
  SweepTable special;
  special.rows.push_back({"transformer_dpa", "k_Ll", "layer", 2, 0, NormKind::LInf,
                          std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity(), true});
  const std::string s = to_csv(special);
  EXPECT_NE(s.find(",nan,inf,1\n"), std::string::npos);
  EXPECT_EQ(to_csv(parse_csv(s)), s);
}

TEST(Csv, EmitContracts) {
  const fs::path dir = fresh_dir("emit");
  fs::create_directories(dir);
  EXPECT_THROW(emit_csv(SweepTable{}, dir / "empty.csv"), ValidationError);
  EXPECT_FALSE(fs::exists(dir / "empty.csv"));
  SweepTable one;
  one.rows.push_back({"resnet_conv", "residual", "depth", 4, 1, NormKind::L2, 2.5, 3.5, false});
  emit_csv(one, dir / "one.csv");
  const std::string text = slurp(dir / "one.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_THROW(emit_csv(one, dir / "missing" / "x.csv"), std::runtime_error);
  fs::remove_all(dir);
}

TEST(InitSpectrum, RowsPerShapeSeedAndBin) {
  SpectrumConfig c;
  c.shapes = {{32, 32}, {32, 64}};
  c.seeds = {0, 1};
  c.bins = 5;
  const auto rows = run_init_spectrum(c);
  ASSERT_EQ(rows.size(), 2u * 2u * 5u);
  std::size_t total = 0;
  for (std::size_t i = 0; i < 5; ++i) total += rows[i].count;
  EXPECT_EQ(total, 32u);
  EXPECT_EQ(spectrum_csv(rows).substr(0, 12), "rows,cols,se");
}

TEST(Figures, TinyPresetWritesEveryFileDeterministically) {
  const fs::path a = fresh_dir("fig_a"), b = fresh_dir("fig_b");
  const FiguresResult ra = run_all_paper_figures(Scale::Tiny, a);
  run_all_paper_figures(Scale::Tiny, b);
  ASSERT_EQ(ra.files.size(), 8u);
  for (const char* name : {"fig3.csv", "fig4.csv", "fig5.csv", "fig6.csv", "fig7.csv", "fig8.csv", "fig9.csv",
                           "manifest.json"}) {
    const std::string text = slurp(a / name);
    EXPECT_GT(std::count(text.begin(), text.end(), '\n'), 1) << name;
    EXPECT_EQ(text, slurp(b / name)) << name;
  }
  EXPECT_NE(slurp(a / "manifest.json").find("\"wall_time_s\": null"), std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Figures, PlanPresets) {
  const FigurePlan desk = figure_plan(Scale::Desk);
  EXPECT_EQ(desk.depth_residual.base.width, 256u);
  EXPECT_EQ(desk.depth_residual.grid, (std::vector<double>{1, 2, 4, 8, 12, 16}));
  EXPECT_EQ(desk.depth_residual.estimator.base_points, 5u);
  EXPECT_EQ(desk.depth_residual.base.init.gain, 2.0);
  const FigurePlan paper = figure_plan(Scale::Paper, 7);
  EXPECT_EQ(paper.depth_residual.base.width, 1024u);
  EXPECT_EQ(paper.depth_residual.base.tokens(), 1024u);
  EXPECT_EQ(paper.depth_residual.seeds, (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(scale_from_string(to_string(Scale::Tiny)), Scale::Tiny);
}

}  // namespace
}  // namespace lipscope
