#pragma once

// Experiment sweeps over network families, toggles and parameter grids, with
// CSV emission and whole-figure presets.
//
// Sweep table columns: family, toggle, grid_name, grid_value, seed, norm, K_s, K_u,
// overflow_flag. Infinite values are written as "inf"; an undefined layerwise
// entry is written as "nan".

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lipscope/lipschitz.hpp"
#include "lipscope/network.hpp"

namespace lipscope {

enum class Experiment { DepthResidual, DepthNorm, Gain, Epsilon, Hidden, Input, Layerwise, Norms, InitSpectrum };

std::string to_string(Experiment e);
Experiment experiment_from_string(const std::string& text);
/// Column label for the grid of an experiment ("depth", "gain", ...).
std::string grid_name(Experiment e);

/// 5 base points x 5 perturbations.
EstimatorOptions desk_estimator();

struct SweepConfig {
  Experiment experiment = Experiment::DepthResidual;
  std::vector<Family> families{Family::ResNetConv, Family::TransformerDPA, Family::TransformerSCSA};
  /// Depths, gains, epsilons, widths or input side lengths. Layerwise ignores it
  /// and reports every layer of a base.depth network.
  std::vector<double> grid{1, 2, 4, 8, 12, 16};
  /// Family is overwritten per cell; the rest is the base of every cell.
  NetworkSpec base = desk_spec(Family::TransformerDPA);
  EstimatorOptions estimator = desk_estimator();
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<NormKind> norms{NormKind::L2};
  /// Restricts the toggles that run (empty: all of the experiment's toggles).
  std::vector<std::string> toggles;
  /// Activations above this magnitude make a cell overflow (default: FP32).
  double overflow_range = precision_range(Precision::FP32);
  bool compute_bound = true;
};

/// Throws ValidationError listing every problem.
void validate_sweep(const SweepConfig& config);

/// Toggles an experiment runs: residual/no_residual, norm/no_norm, k_l0/k_Ll
/// or the single "default".
std::vector<std::string> experiment_toggles(Experiment e);

struct SweepRow {
  std::string family;
  std::string toggle;
  std::string grid_name;
  double grid_value = 0.0;
  std::uint64_t seed = 0;
  NormKind norm = NormKind::L2;
  double k_s = 0.0;
  double k_u = 0.0;
  bool overflow = false;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepTable {
  std::vector<SweepRow> rows;
};

/// Rows ordered by family, toggle, grid value, seed, norm (configuration order).
/// Overflowing cells become inf rows; they never abort the sweep.
SweepTable run_sweep(const SweepConfig& config);

std::string to_csv(const SweepTable& table);
SweepTable parse_csv(const std::string& text);
/// Throws ValidationError for an empty table (no file is created) and
/// std::runtime_error when the file cannot be written.
void emit_csv(const SweepTable& table, const std::filesystem::path& path);

struct SpectrumConfig {
  std::vector<std::pair<std::size_t, std::size_t>> shapes{{1024, 1024}, {1024, 2048}};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t bins = 50;
  double gain = 1.0;
};

struct SpectrumRow {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t seed = 0;
  double bin_left = 0.0;
  double bin_right = 0.0;
  std::size_t count = 0;
  double max_singular_value = 0.0;
  double min_singular_value = 0.0;
};

/// Singular-value histograms of Xavier-normal draws, one block of rows per
/// (shape, seed). The weights come from substream (seed, weights, rows, cols).
std::vector<SpectrumRow> run_init_spectrum(const SpectrumConfig& config);
/// Header: rows,cols,seed,bin_left,bin_right,count,max_singular_value,min_singular_value
std::string spectrum_csv(const std::vector<SpectrumRow>& rows);

enum class Scale { Tiny, Desk, Paper };
std::string to_string(Scale s);
Scale scale_from_string(const std::string& text);

struct FigurePlan {
  SpectrumConfig fig3;
  SweepConfig depth_residual;  ///< fig4 (L2 rows) and fig9 (all norms)
  SweepConfig depth_norm;      ///< fig5; the "norm" toggle is taken from fig4
  std::vector<SweepConfig> fig6;  ///< gain, epsilon, hidden, input
  SweepConfig layerwise;       ///< fig7 (k_l0) and fig8 (k_Ll)
};

FigurePlan figure_plan(Scale scale, std::optional<std::uint64_t> seed = std::nullopt);

struct FiguresResult {
  std::vector<std::filesystem::path> files;  ///< fig3.csv ... fig9.csv, manifest.json
  double wall_time_s = 0.0;
};

/// Runs every figure of the plan into `out_dir` (created if missing). The
/// manifest records wall time only when `record_wall_time` is set, so that
/// repeated runs stay byte-identical by default.
FiguresResult run_all_paper_figures(Scale scale, const std::filesystem::path& out_dir,
                                    std::optional<std::uint64_t> seed = std::nullopt,
                                    bool record_wall_time = false);
FiguresResult run_figures(const FigurePlan& plan, const std::string& scale_name,
                          const std::filesystem::path& out_dir, bool record_wall_time = false);

}  // namespace lipscope
