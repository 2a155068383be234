#pragma once
// Rationality-coefficient estimation: sample MLE on calibration feedback and
// exact M-projection of a full behavioural policy onto the Boltzmann family.
#include <functional>
#include <vector>

#include "rrl/biased_human.hpp"

namespace rrl {

/// Search domain. The optimizer scans {0} plus a log grid over [low, high], then refines.
struct BetaRange {
  double low = 1e-3;
  double high = 1e3;
  int grid_points = 61;
};

struct ScalarSearchResult {
  double beta = 0.0;
  double value = 0.0;  // objective at beta
  bool at_boundary = false;
};

/// Minimizes f over [0, high]: grid scan, then golden-section on the bracketing cell
/// (in log beta above `low`, linear below it). Endpoints win ties so clamped optima are exact.
/// Throws FlatObjectiveError when the scan shows no variation.
/// When the objective is convex and its derivative is supplied, the refinement bisects on the
/// derivative's sign instead, which stays accurate where the objective itself is numerically flat.
ScalarSearchResult minimize_over_beta(const std::function<double(double)>& f, const BetaRange& range = {},
                                      const std::function<double(double)>& grad = {});

struct BetaEstimate {
  FeedbackKind kind = FeedbackKind::Demonstration;
  double value = 0.0;
  double log_likelihood = 0.0;  // at the optimum; -KL for M-projections
  double low = 0.0;             // search range actually covered
  double high = 0.0;
  bool at_boundary = false;
};

struct CalibrationItem {
  Theta theta;
  FeedbackResponse response;
};

/// Feedback against known rewards. All items must share one kind.
struct CalibrationSet {
  std::vector<CalibrationItem> items;
  FeedbackKind kind() const;  // throws on empty or mixed sets
};

/// argmax_beta sum_i log P(c_i | theta_i, beta).
BetaEstimate fit_beta_mle(const Mdp& mdp, const CalibrationSet& cal, const BetaRange& range = {});

/// D_KL(pi || pi_{beta,theta}) along pi's own state distribution from the MDP start distribution.
double kl_to_soft_policy(const Mdp& mdp, const TabularPolicy& pi, std::span<const double> arrival, double beta);

/// argmin_beta D_KL(pi || pi_{beta,theta}), evaluated exactly by policy evaluation on the log-ratio reward.
BetaEstimate fit_beta_mprojection_demo(const Mdp& mdp, const TabularPolicy& pi, const Theta& theta,
                                       const BetaRange& range = {});

/// Choice distribution of one design together with the return of each choice.
struct ChoiceDistribution {
  std::vector<double> probs;
  std::vector<double> returns;
};

/// argmin_beta sum_d KL(p_d || softmax(beta r_d)).
BetaEstimate fit_beta_mprojection_choice(std::span<const ChoiceDistribution> designs, FeedbackKind kind,
                                         const BetaRange& range = {});

/// Per-reward M-projection of a biased demonstrator's policy.
std::vector<BetaEstimate> beta_fits_over_rewards(const Mdp& mdp, const BiasedHumanModel& model,
                                                 std::span<const Theta> thetas, const BetaRange& range = {});

/// Sample variance (n - 1 denominator) of the per-reward fits. Needs at least two rewards.
double beta_variance_over_rewards(const Mdp& mdp, const BiasedHumanModel& model, std::span<const Theta> thetas,
                                  const BetaRange& range = {});

/// D_KL(bias_policy || pi_{beta,theta'}) for each candidate theta'.
std::vector<double> kl_to_soft_policies(const Mdp& mdp, const TabularPolicy& bias_policy,
                                        std::span<const Theta> candidates, double beta);

}  // namespace rrl
