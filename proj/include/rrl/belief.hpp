#pragma once

// Exact Bayesian inference over a fixed grid of unit reward vectors.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rrl/biased_human.hpp"

namespace rrl {

inline constexpr int kDefaultGridSize = 1000;

class RewardGrid {
 public:
  /// Normalized 4-d standard normal draws; identical for identical seeds.
  static RewardGrid make(std::uint64_t seed, int size = kDefaultGridSize);
  RewardGrid(std::vector<Theta> points, std::uint64_t seed);

  int size() const { return static_cast<int>(points_.size()); }
  const Theta& operator[](int i) const { return points_[static_cast<std::size_t>(i)]; }
  const std::vector<Theta>& points() const { return points_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::vector<Theta> points_;
  std::uint64_t seed_;
};

/// Immutable posterior over a RewardGrid, stored as normalized log-weights.
class Belief {
 public:
  static Belief uniform(std::shared_ptr<const RewardGrid> grid);
  /// log_weights are normalized on construction; all -inf throws DegeneratePosteriorError.
  Belief(std::shared_ptr<const RewardGrid> grid, std::vector<double> log_weights);

  const RewardGrid& grid() const { return *grid_; }
  const std::shared_ptr<const RewardGrid>& grid_ptr() const { return grid_; }
  const std::vector<double>& log_weights() const { return log_weights_; }
  double weight(int i) const { return std::exp(log_weights_[static_cast<std::size_t>(i)]); }
  std::vector<double> weights() const;
  int size() const { return grid_->size(); }

 private:
  std::shared_ptr<const RewardGrid> grid_;
  std::vector<double> log_weights_;
};

/// Demonstration log-policies for a subset of grid points, laid out [t][s][a][k]
/// so the likelihood of one trajectory under every member is a run of contiguous adds.
class PolicyBank {
 public:
  PolicyBank(const Mdp& mdp, const RewardGrid& grid, std::vector<int> members, const BiasSpec& bias, double beta);

  int size() const { return static_cast<int>(members_.size()); }
  const std::vector<int>& members() const { return members_; }
  double beta() const { return beta_; }

  /// acc[k] += log P(traj | member k) (dynamics factors omitted).
  void accumulate(const Trajectory& traj, std::span<double> acc) const;
  /// Log-policy table ([t][s][a]) of member k, for rollouts.
  std::vector<double> policy_table(int k) const;

 private:
  const Mdp* mdp_;
  std::vector<int> members_;
  double beta_;
  std::vector<double> table_;
};

/// Unit vector with a uniformly random direction.
Theta sample_unit_theta(Rng& rng);

/// Per-grid-point log-likelihood of a response set under a model.
std::vector<double> grid_log_likelihoods(const Mdp& mdp, const RewardGrid& grid,
                                         std::span<const FeedbackResponse> responses, const ObservationModel& model);

/// log w' = log w + sum log P(resp | theta_i, beta_kind), renormalized.
Belief update(const Belief& belief, const Mdp& mdp, std::span<const FeedbackResponse> responses,
              const ObservationModel& model);
Belief update(const Belief& belief, const Mdp& mdp, std::span<const FeedbackResponse> responses,
              const BetaMap& beta);
/// Same result as update(), bit for bit, with demonstrations scored from a prebuilt full-grid bank.
/// The bank must have been built with the model's demonstration beta and bias.
Belief update_with_bank(const Belief& belief, const Mdp& mdp, std::span<const FeedbackResponse> responses,
                        const ObservationModel& model, const PolicyBank& demo_bank);

/// sum_i w_i theta_i (not renormalized).
Theta posterior_mean(const Belief& belief);
double entropy(const Belief& belief);

struct WeightedPoint {
  int index;
  Theta theta;
  double weight;
};
/// Highest-weight grid points, ties broken by grid index.
std::vector<WeightedPoint> top_k(const Belief& belief, int k);

/// 1 - (R_inferred - R_random) / (R_true - R_random), all measured under theta_true.
double normalized_regret(const Mdp& mdp, const Theta& theta_true, const Theta& theta_inferred);
double reward_mse(const Theta& inferred, const Theta& truth);

struct MetricsRow {
  std::string run_id;
  std::string method;
  double beta_true = 0.0;
  double beta_used = 0.0;
  double regret = 0.0;
  double mse = 0.0;
};
std::string metrics_csv_header();
std::string to_csv(const MetricsRow& row);

}  // namespace rrl
