#pragma once

// Finite-horizon tabular MDPs, colored gridworlds, and the value recursions
// (soft, hard, fixed-policy) used by every other module.
//
// Rewards are paid on arrival: taking action a in s and landing in s' earns
// theta . features(s') + bonus(s'). Absorbing states end the episode; they
// carry zero value and no choices are recorded there.

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "rrl/common.hpp"

namespace rrl {

struct Transition {
  int next;
  double prob;
};

class Mdp {
 public:
  /// transitions is indexed by s * num_actions + a.
  Mdp(int num_states, int num_actions, int horizon, const std::vector<std::vector<Transition>>& transitions,
      std::vector<Theta> arrival_features, std::vector<double> arrival_bonus, std::vector<char> absorbing,
      std::vector<double> start_distribution);

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  int horizon() const { return horizon_; }

  std::span<const Transition> successors(int s, int a) const {
    const auto i = static_cast<std::size_t>(s * num_actions_ + a);
    return {edges_.data() + offsets_[i], edges_.data() + offsets_[i + 1]};
  }
  double transition_prob(int s, int a, int next) const;

  const Theta& arrival_features(int s) const { return features_[static_cast<std::size_t>(s)]; }
  double arrival_bonus(int s) const { return bonus_[static_cast<std::size_t>(s)]; }
  bool is_absorbing(int s) const { return absorbing_[static_cast<std::size_t>(s)] != 0; }
  std::span<const double> start_distribution() const { return start_; }

  /// Same dynamics with a point-mass start distribution.
  Mdp with_start_state(int s) const;
  Mdp with_horizon(int horizon) const;

 private:
  int num_states_;
  int num_actions_;
  int horizon_;
  std::vector<std::size_t> offsets_;
  std::vector<Transition> edges_;
  std::vector<Theta> features_;
  std::vector<double> bonus_;
  std::vector<char> absorbing_;
  std::vector<double> start_;
};

/// Reward earned on arrival in each state: theta . features(s) + bonus(s).
std::vector<double> arrival_rewards(const Mdp& mdp, const Theta& theta);
/// Expected one-step reward r(s,a) (zero at absorbing states), indexed s * A + a.
std::vector<double> state_action_rewards(const Mdp& mdp, std::span<const double> arrival);

// ---------------------------------------------------------------------------
// Policies and solutions

class TabularPolicy {
 public:
  TabularPolicy() = default;
  TabularPolicy(int horizon, int num_states, int num_actions);
  static TabularPolicy uniform(int horizon, int num_states, int num_actions);

  int horizon() const { return horizon_; }
  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }

  double operator()(int t, int s, int a) const { return probs_[index(t, s, a)]; }
  double& at(int t, int s, int a) { return probs_[index(t, s, a)]; }
  std::span<const double> row(int t, int s) const {
    return {probs_.data() + index(t, s, 0), static_cast<std::size_t>(num_actions_)};
  }
  std::span<double> row(int t, int s) { return {probs_.data() + index(t, s, 0), static_cast<std::size_t>(num_actions_)}; }
  const std::vector<double>& data() const { return probs_; }

  /// Throws unless every row is a distribution (within 1e-9).
  void validate() const;

 private:
  std::size_t index(int t, int s, int a) const {
    return (static_cast<std::size_t>(t) * num_states_ + s) * num_actions_ + a;
  }
  int horizon_ = 0;
  int num_states_ = 0;
  int num_actions_ = 0;
  std::vector<double> probs_;
};

/// Entropy-regularized solution of the Boltzmann demonstrator.
struct SoftSolution {
  int horizon = 0;
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> q;           // [t][s][a], t < T
  std::vector<double> v;           // [t][s], t <= T, v[T] = 0
  std::vector<double> log_policy;  // [t][s][a]

  double q_at(int t, int s, int a) const { return q[(static_cast<std::size_t>(t) * num_states + s) * num_actions + a]; }
  double v_at(int t, int s) const { return v[static_cast<std::size_t>(t) * num_states + s]; }
  double log_pi(int t, int s, int a) const {
    return log_policy[(static_cast<std::size_t>(t) * num_states + s) * num_actions + a];
  }
  TabularPolicy policy() const;
};

/// Q_t(s,a) = E[R(s') + discount * V_{t+1}(s')], pi_t ∝ exp(beta Q_t), V_t = E_pi[Q_t - log pi_t].
SoftSolution soft_value_iteration(const Mdp& mdp, std::span<const double> arrival, double beta, double discount = 1.0);
SoftSolution soft_value_iteration(const Mdp& mdp, const Theta& theta, double beta, double discount = 1.0);

/// Log-policy only, written into out ([t][s][a]); the allocation-free path used by the posterior banks.
void soft_log_policy(const Mdp& mdp, std::span<const double> arrival, double beta, double discount,
                     std::span<double> out, std::vector<double>& scratch);

struct HardSolution {
  std::vector<double> v;  // [t][s]
  TabularPolicy greedy;
  double v_at(int t, int s) const { return v[static_cast<std::size_t>(t) * greedy.num_states() + s]; }
};

/// Bellman-optimal values; greedy ties go to the lowest action index.
HardSolution hard_value_iteration(const Mdp& mdp, std::span<const double> arrival);
HardSolution hard_value_iteration(const Mdp& mdp, const Theta& theta);

/// Expected cumulative reward from the start distribution under a
/// non-stationary reward table indexed [t][s][a]. Entries at absorbing states are ignored.
double evaluate_policy(const Mdp& mdp, const TabularPolicy& policy, std::span<const double> reward_table);
/// Same with the stationary arrival reward induced by theta.
double expected_return(const Mdp& mdp, const TabularPolicy& policy, const Theta& theta);
/// V_t(s) for the stationary reward (mostly for tests).
std::vector<double> policy_values(const Mdp& mdp, const TabularPolicy& policy, std::span<const double> arrival);

// ---------------------------------------------------------------------------
// Trajectories

inline constexpr int kNoAction = -1;

struct Step {
  int state;
  int action;  // kNoAction on the final step
  bool operator==(const Step&) const = default;
};

/// States s_0..s_L with actions a_0..a_{L-1}; the last step carries kNoAction.
struct Trajectory {
  std::vector<Step> steps;

  int num_actions() const { return steps.empty() ? 0 : static_cast<int>(steps.size()) - 1; }
  int final_state() const { return steps.back().state; }
  bool operator==(const Trajectory&) const = default;
};

/// Throws std::invalid_argument if the trajectory is malformed or leaves the MDP's support.
void validate_trajectory(const Mdp& mdp, const Trajectory& traj);

/// Linear decomposition of a (discounted) return: theta . color_weights + bonus.
struct ReturnFeatures {
  Theta color_weights{};
  double bonus = 0.0;
  double value(const Theta& theta) const { return dot(theta, color_weights) + bonus; }
};

ReturnFeatures trajectory_features(const Mdp& mdp, const Trajectory& traj, double discount = 1.0);
/// Features of every prefix xi_{0:k}, k = 0..L (k = 0 is the empty prefix).
std::vector<ReturnFeatures> prefix_features(const Mdp& mdp, const Trajectory& traj, double discount = 1.0);

/// Sum_k discount^k R(s_{k+1}), including the completion bonus on goal arrival.
double trajectory_return(const Mdp& mdp, const Trajectory& traj, const Theta& theta, double discount = 1.0);

using Rng = std::mt19937_64;

int sample_index(std::span<const double> probs, Rng& rng);
int sample_next_state(const Mdp& mdp, int s, int a, Rng& rng);
/// Rolls out a time-indexed policy from start until an absorbing state or the horizon.
Trajectory rollout(const Mdp& mdp, const TabularPolicy& policy, int start, Rng& rng);
/// Same, sampling from a log-policy table laid out like SoftSolution::log_policy.
Trajectory rollout_log_policy(const Mdp& mdp, std::span<const double> log_policy, int start, Rng& rng);

// ---------------------------------------------------------------------------
// Colored gridworld

enum class Move : int { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr int kGridActions = 4;

class GridWorld {
 public:
  GridWorld(int width, int height, std::vector<int> colors, std::pair<int, int> goal, int horizon, double slip_prob,
            double completion_bonus);

  /// Colors drawn uniformly at random; goal in the bottom-right corner.
  static GridWorld random(std::uint64_t seed, int width = 10, int height = 10, int horizon = 25,
                          double slip_prob = 0.1, double completion_bonus = 250.0);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<int>& colors() const { return colors_; }
  int color_at(int x, int y) const { return colors_[static_cast<std::size_t>(y * width_ + x)]; }
  std::pair<int, int> goal() const { return goal_; }
  int goal_state() const { return state_of(goal_.first, goal_.second); }
  int horizon() const { return horizon_; }
  double slip_prob() const { return slip_prob_; }
  double completion_bonus() const { return completion_bonus_; }

  int state_of(int x, int y) const { return y * width_ + x; }
  int x_of(int s) const { return s % width_; }
  int y_of(int s) const { return s / width_; }
  /// Cell reached by a move, staying put at walls.
  int move_target(int s, Move m) const;

  /// Start distribution is uniform over non-goal cells.
  const Mdp& mdp() const { return mdp_; }

 private:
  Mdp build_mdp() const;

  int width_;
  int height_;
  std::vector<int> colors_;
  std::pair<int, int> goal_;
  int horizon_;
  double slip_prob_;
  double completion_bonus_;
  Mdp mdp_;
};

}  // namespace rrl
