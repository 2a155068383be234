#pragma once
// Simulation studies behind the command-line tool: Fitted/Default/Oracle
// sweeps over Boltzmann and biased responders, the active-learning ablation,
// beta diagnostics and the toy crossover sweep. Every run is a pure function
// of its configuration; outputs are CSV tables plus a JSON manifest.
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rrl/io.hpp"
#include "rrl/toy.hpp"

namespace rrl {

enum class ExperimentKind { BoltzmannSweep, BiasSweep, ActiveAblation, Diagnostics, ToyCrossover };
std::string_view to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(std::string_view name);

/// World for run seed r: GridWorld::random(derive_seed(seed, r), ...).
struct WorldConfig {
  int width = 10;
  int height = 10;
  int horizon = 25;
  double slip = 0.1;
  double completion_bonus = 0.0;
  std::uint64_t seed = 0;
  GridWorld make(std::uint64_t run_seed) const;
};

/// One bias setting and the feedback kinds it is simulated on.
struct BiasCell {
  BiasSpec bias;
  std::vector<FeedbackKind> kinds;
};

/// True and default beta maps for one ablation grid.
struct AblationSetting {
  std::string name;
  BetaMap truth;
  BetaMap default_beta;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::BoltzmannSweep;
  std::uint64_t seed = 0;  // root of every derived random stream
  WorldConfig world;
  std::uint64_t grid_seed = 0;
  int grid_size = kDefaultGridSize;
  std::vector<std::uint64_t> reward_seeds;  // one true reward per seed
  std::vector<std::uint64_t> run_seeds;     // one world and one responder stream per seed

  // Single-kind sweeps.
  int calibration_rewards = 4;
  int calibration_queries = 5;  // per calibration reward
  int inference_queries = 5;
  double design_beta = 1.0;  // rationality of the rollouts used as random comparison and e-stop designs
  std::vector<FeedbackKind> kinds;
  std::vector<std::string> methods;   // subset of fitted, default, oracle
  double default_beta = 1.0;
  std::vector<double> fixed_betas;    // extra methods "fixed-<beta>"
  BetaRange beta_range;
  std::vector<double> beta_grid;      // Boltzmann sweep: true beta per cell
  double responder_beta = 1.0;        // bias sweep: beta of the biased responder
  std::vector<BiasCell> bias_cells;

  // Active ablation.
  std::vector<AblationSetting> ablation_settings;
  int active_rounds = 5;
  ActiveConfig active;  // beta_select and beta_infer are set per cell

  // Diagnostics.
  std::vector<BiasSpec> diagnostic_biases;
  int diagnostic_rewards = 20;  // grid points whose beta fits enter the variance
  int kl_candidates = 100;      // grid points in the KL scatter

  // Toy crossover.
  ToyEnvParams toy;
  std::vector<double> toy_betas;
  CrossoverSearch crossover;

  void validate() const;
};

/// Complete configuration with every grid and seed filled in. full_scale widens the grids.
ExperimentConfig default_config(ExperimentKind kind, bool full_scale = false);
Json config_to_json(const ExperimentConfig& cfg);
/// Keys absent from j keep the values of default_config(kind); unknown keys throw.
ExperimentConfig config_from_json(const Json& j);
/// Applies "a.b.c=value" overrides; values parse as JSON when possible, otherwise as strings.
Json apply_overrides(Json j, const std::vector<std::string>& overrides);
/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Results

struct Stat {
  int n = 0;
  double mean = 0.0;
  double sem = 0.0;  // sample standard deviation / sqrt(n); 0 when n < 2
};
Stat mean_sem(std::span<const double> xs);

struct MethodOutcome {
  std::string method;
  double beta_used = 0.0;
  double regret = 0.0;
  double mse = 0.0;
  double entropy = 0.0;
};

struct Trial {
  std::string cell;  // "<kind>/<setting>", e.g. "demo/beta=0.1" or "comp/gamma=0.5"
  FeedbackKind kind = FeedbackKind::Demonstration;
  double beta_true = 0.0;
  BiasSpec bias;
  std::uint64_t run_seed = 0;
  std::uint64_t reward_seed = 0;
  int theta_index = 0;  // true reward as a grid index
  std::optional<double> beta_fit;  // empty when the calibration data carried no information about beta
  bool fit_at_boundary = false;
  std::vector<MethodOutcome> outcomes;
  const MethodOutcome& outcome(std::string_view method) const;
};

struct SweepResult {
  std::vector<Trial> trials;
  std::vector<std::string> cells() const;  // in run order
  std::vector<double> regrets(std::string_view cell, std::string_view method) const;
  Stat regret(std::string_view cell, std::string_view method) const;
  Stat mse(std::string_view cell, std::string_view method) const;
};

/// Called once per completed cell with that cell's trials.
using CellCallback = std::function<void(const std::vector<Trial>&)>;

std::string cell_label(FeedbackKind kind, std::string_view setting);
std::string bias_label(const BiasSpec& bias);  // "none", "gamma=0.5", "gamma=0.5+alpha=0.5", ...

SweepResult run_boltzmann_sweep(const ExperimentConfig& cfg, const CellCallback& on_cell = {});
SweepResult run_bias_sweep(const ExperimentConfig& cfg, const CellCallback& on_cell = {});

struct AblationRun {
  std::string setting;
  std::string cell;  // "correct-select/correct-infer", ...
  std::uint64_t seed = 0;
  int theta_index = 0;
  std::vector<RoundRecord> rounds;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  static const std::array<std::string, 4>& cell_names();
  Stat final_regret(std::string_view setting, std::string_view cell) const;
  /// Fraction of all rounds in the cell that selected `kind`.
  double kind_fraction(std::string_view setting, std::string_view cell, FeedbackKind kind) const;
};

/// Seeds are cfg.run_seeds; each seed has its own world and true reward.
AblationResult run_active_ablation(const ExperimentConfig& cfg,
                                   const std::function<void(const AblationRun&)>& on_run = {});

struct DiagnosticFit {
  std::string bias;
  int theta_index = 0;
  double beta = 0.0;
  bool at_boundary = false;
};
struct KlPoint {
  std::string bias;
  int truth_index = 0;
  int candidate_index = 0;
  double beta = 0.0;  // M-projection fit of the biased policy on the truth
  double kl = 0.0;
};
struct DiagnosticsResult {
  std::vector<DiagnosticFit> fits;
  std::vector<KlPoint> kl;
  /// Sample variance of the fits for one bias label.
  double beta_variance(std::string_view bias) const;
};
/// Uses the world of the first run seed.
DiagnosticsResult run_diagnostics(const ExperimentConfig& cfg);

struct ToyPoint {
  double beta = 0.0;
  double demo_entropy = 0.0;
  double comparison_entropy = 0.0;
};
struct ToyResult {
  std::vector<ToyPoint> points;
  std::optional<double> crossover_beta;
};
ToyResult run_toy_crossover(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Output

/// A CSV file: "# rrl-csv v1 <name>" comment line, a header row, then data rows.
struct CsvTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::string render() const;
};
inline constexpr std::string_view kCsvVersionLine = "# rrl-csv v1";

CsvTable trials_table(std::span<const Trial> trials);
CsvTable summary_table(const SweepResult& result);
CsvTable ablation_rounds_table(const AblationResult& result);
CsvTable ablation_summary_table(const AblationResult& result);
CsvTable diagnostics_fits_table(const DiagnosticsResult& result);
CsvTable diagnostics_variance_table(const DiagnosticsResult& result);
CsvTable diagnostics_kl_table(const DiagnosticsResult& result);
CsvTable toy_table(const ToyResult& result);

/// Runs cfg.kind, writing <name>.csv files and manifest.json into out_dir. Trial tables are
/// rewritten after every completed cell. Returns the manifest; timings appear only there.
Json run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace rrl
