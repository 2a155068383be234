#pragma once

// Simulated responders: Boltzmann-rational at a per-kind beta, optionally
// planning with a distorted Bellman backup (myopia, extremal, optimism).

#include <cstdint>
#include <optional>
#include <vector>

#include "rrl/feedback.hpp"

namespace rrl {

/// The likelihood a responder induces: per-kind beta plus planning bias.
/// With bias.none() this is the plain Boltzmann model used for Fitted/Default inference.
struct ObservationModel {
  BetaMap beta;
  BiasSpec bias;

  static ObservationModel boltzmann(const BetaMap& beta) { return {beta, {}}; }
  bool operator==(const ObservationModel&) const = default;
};

struct BiasedHumanModel {
  BetaMap beta;
  BiasSpec bias;
  std::uint64_t seed = 0;

  ObservationModel observation_model() const { return {beta, bias}; }
};

/// Biased action values and the beta-softmax policy over them, laid out like SoftSolution.
///
/// Per action, with R the arrival reward, V the next-step value and g the myopic discount:
///   optimism   P~(s'|s,a) ∝ P(s'|s,a) exp(tau (R(s') + g V(s')))
///   extremal   Q(s,a) = sum P~ max(R(s'), (1 - alpha) R(s') + alpha g V(s'))
///   otherwise  Q(s,a) = sum P~ (R(s') + g V(s'))
/// and V = E_pi[Q - log pi] with pi ∝ exp(beta Q). Without extremal/optimism terms
/// this is exactly soft_value_iteration with discount g.
SoftSolution biased_value_iteration(const Mdp& mdp, std::span<const double> arrival, const BiasSpec& bias,
                                    double beta);
SoftSolution biased_value_iteration(const Mdp& mdp, const Theta& theta, const BiasSpec& bias, double beta);

/// Log-policy only ([t][s][a]) for the demonstration choice model.
void model_log_policy(const Mdp& mdp, std::span<const double> arrival, const BiasSpec& bias, double beta,
                      std::span<double> out, std::vector<double>& scratch);

/// Exact choice distribution over C(x). Demonstrations report the first-step action distribution.
std::vector<double> choice_distribution(const Mdp& mdp, const ObservationModel& model, const FeedbackQuery& query,
                                        const Theta& theta);

/// Log-likelihood of a response under an arbitrary observation model (slow path; runs value iteration).
double model_log_likelihood(const Mdp& mdp, const ObservationModel& model, const FeedbackResponse& resp,
                            const Theta& theta);

/// Stateful responder with its own seeded random stream. Not shared across threads.
class SimulatedHuman {
 public:
  SimulatedHuman(const Mdp& mdp, BiasedHumanModel model);

  const BiasedHumanModel& model() const { return model_; }
  FeedbackResponse respond(const FeedbackQuery& query, const Theta& theta_true);
  /// Frequencies over C(x) from n independent responses.
  std::vector<double> empirical_choice_distribution(const FeedbackQuery& query, const Theta& theta_true, int n);

 private:
  const std::vector<double>& demo_policy(const Theta& theta);

  const Mdp* mdp_;
  BiasedHumanModel model_;
  Rng rng_;
  std::optional<Theta> cached_theta_;
  std::vector<double> cached_policy_;
};

}  // namespace rrl
