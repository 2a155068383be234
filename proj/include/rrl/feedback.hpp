#pragma once

// Reward-rational choice: each feedback kind is a design x, a choice set C(x),
// and a grounding phi(x, c) into trajectories, scored by a Boltzmann likelihood.
//
//   kind           design             choice            grounding
//   Demonstration  start state        the trajectory    itself
//   Comparison     (xi_A, xi_B)       A or B            preferred trajectory
//   EStop          xi                 t in {0..L}       prefix xi_{0:t}

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rrl/mdp.hpp"

namespace rrl {

enum class FeedbackKind : int { Demonstration = 0, Comparison = 1, EStop = 2 };
inline constexpr int kNumKinds = 3;

std::string_view to_string(FeedbackKind kind);
FeedbackKind feedback_kind_from_string(std::string_view name);

/// One rationality coefficient per feedback kind.
struct BetaMap {
  std::array<double, kNumKinds> values{1.0, 1.0, 1.0};

  static BetaMap uniform(double beta) { return BetaMap{{beta, beta, beta}}; }
  double operator[](FeedbackKind k) const { return values[static_cast<std::size_t>(k)]; }
  double& operator[](FeedbackKind k) { return values[static_cast<std::size_t>(k)]; }
  bool operator==(const BetaMap&) const = default;
};

/// Systematic distortions of a simulated human's planning. Any subset may be active.
struct BiasSpec {
  std::optional<double> myopia_gamma;    // discount in [0,1]
  std::optional<double> extremal_alpha;  // in [0,1]
  std::optional<double> optimism_tau;    // any real

  bool none() const { return !myopia_gamma && !extremal_alpha && !optimism_tau; }
  double discount() const { return myopia_gamma.value_or(1.0); }
  void validate() const;
  bool operator==(const BiasSpec&) const = default;
};

struct DemoDesign {
  int start_state;
  bool operator==(const DemoDesign&) const = default;
};
struct ComparisonDesign {
  Trajectory a;
  Trajectory b;
  bool operator==(const ComparisonDesign&) const = default;
};
struct EStopDesign {
  Trajectory traj;
  bool operator==(const EStopDesign&) const = default;
};

struct FeedbackQuery {
  std::variant<DemoDesign, ComparisonDesign, EStopDesign> design;

  FeedbackKind kind() const { return static_cast<FeedbackKind>(design.index()); }
  bool operator==(const FeedbackQuery&) const = default;
};

enum class Pick : int { A = 0, B = 1 };
struct StopTime {
  int t;
  bool operator==(const StopTime&) const = default;
};

struct FeedbackResponse {
  FeedbackQuery query;
  std::variant<Trajectory, Pick, StopTime> choice;

  FeedbackKind kind() const { return query.kind(); }
  bool operator==(const FeedbackResponse&) const = default;
};

/// Checks payload shapes, choice-set membership, and trajectory support.
void validate_query(const Mdp& mdp, const FeedbackQuery& query);
void validate_response(const Mdp& mdp, const FeedbackResponse& resp);

/// Number of elements in C(x); demonstrations report the per-step action count.
int choice_set_size(const Mdp& mdp, const FeedbackQuery& query);

/// Grounded trajectory phi(x, c).
Trajectory grounding(const FeedbackResponse& resp);

// ---------------------------------------------------------------------------
// Likelihoods. Everything is computed in log space.

/// Sum_t log pi_t(a_t | s_t) read from a log-policy table ([t][s][a]). Dynamics factors are omitted.
double demo_log_likelihood(const Mdp& mdp, std::span<const double> log_policy, const Trajectory& traj);
double demo_log_likelihood(const Mdp& mdp, const Trajectory& traj, const Theta& theta, double beta);

double comparison_log_likelihood(double return_a, double return_b, Pick choice, double beta);
double comparison_log_likelihood(const Mdp& mdp, const ComparisonDesign& design, Pick choice, const Theta& theta,
                                 double beta, double discount = 1.0);
double comparison_likelihood(const Mdp& mdp, const ComparisonDesign& design, Pick choice, const Theta& theta,
                             double beta);

/// log softmax_t(beta * prefix_returns); prefix_returns[k] is the return of xi_{0:k}.
double estop_log_likelihood(std::span<const double> prefix_returns, int t, double beta);
double estop_log_likelihood(const Mdp& mdp, const Trajectory& traj, int t, const Theta& theta, double beta,
                            double discount = 1.0);
double estop_likelihood(const Mdp& mdp, const Trajectory& traj, int t, const Theta& theta, double beta);

/// Boltzmann log-likelihood of one response (the demonstration branch runs soft value iteration).
double response_log_likelihood(const Mdp& mdp, const FeedbackResponse& resp, const Theta& theta, double beta);
/// Additive over independent responses; the empty set gives 0.
double total_log_likelihood(const Mdp& mdp, std::span<const FeedbackResponse> responses, const Theta& theta,
                            const BetaMap& beta);

/// Return of each element of C(x) for a comparison or e-stop design.
std::vector<double> choice_returns(const Mdp& mdp, const FeedbackQuery& query, const Theta& theta,
                                   double discount = 1.0);
/// Index of the response's choice inside choice_returns (comparisons and e-stops only).
int choice_index(const FeedbackResponse& resp);

}  // namespace rrl
