#include "rrl/mdp.hpp"

#include <algorithm>
#include <string>

namespace rrl {

namespace {

void check_beta(double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be finite and non-negative");
}

void check_arrival(const Mdp& mdp, std::span<const double> arrival) {
  if (arrival.size() != static_cast<std::size_t>(mdp.num_states()))
    throw std::invalid_argument("arrival reward vector has wrong size");
  for (double r : arrival)
    if (!std::isfinite(r)) throw std::invalid_argument("reward entries must be finite");
}

}  // namespace

// ---------------------------------------------------------------------------
// Mdp

Mdp::Mdp(int num_states, int num_actions, int horizon, const std::vector<std::vector<Transition>>& transitions,
         std::vector<Theta> arrival_features, std::vector<double> arrival_bonus, std::vector<char> absorbing,
         std::vector<double> start_distribution)
    : num_states_(num_states),
      num_actions_(num_actions),
      horizon_(horizon),
      features_(std::move(arrival_features)),
      bonus_(std::move(arrival_bonus)),
      absorbing_(std::move(absorbing)),
      start_(std::move(start_distribution)) {
  if (num_states <= 0 || num_actions <= 0) throw std::invalid_argument("MDP needs at least one state and action");
  if (horizon < 0) throw std::invalid_argument("horizon must be non-negative");
  const auto n = static_cast<std::size_t>(num_states);
  if (transitions.size() != n * static_cast<std::size_t>(num_actions) || features_.size() != n || bonus_.size() != n ||
      absorbing_.size() != n || start_.size() != n)
    throw std::invalid_argument("MDP component sizes disagree");

  offsets_.reserve(transitions.size() + 1);
  offsets_.push_back(0);
  for (const auto& row : transitions) {
    double total = 0.0;
    for (const auto& tr : row) {
      if (tr.next < 0 || tr.next >= num_states) throw std::invalid_argument("transition target out of range");
      if (!(tr.prob >= 0.0)) throw std::invalid_argument("negative transition probability");
      total += tr.prob;
      if (tr.prob > 0.0) edges_.push_back(tr);
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("transition row does not sum to one");
    offsets_.push_back(edges_.size());
  }
  double mass = 0.0;
  for (double p : start_) {
    if (!(p >= 0.0)) throw std::invalid_argument("negative start probability");
    mass += p;
  }
  if (std::abs(mass - 1.0) > 1e-9) throw std::invalid_argument("start distribution does not sum to one");
}

double Mdp::transition_prob(int s, int a, int next) const {
  for (const auto& tr : successors(s, a))
    if (tr.next == next) return tr.prob;
  return 0.0;
}

Mdp Mdp::with_start_state(int s) const {
  if (s < 0 || s >= num_states_) throw std::invalid_argument("start state out of range");
  Mdp copy = *this;
  std::fill(copy.start_.begin(), copy.start_.end(), 0.0);
  copy.start_[static_cast<std::size_t>(s)] = 1.0;
  return copy;
}

Mdp Mdp::with_horizon(int horizon) const {
  if (horizon < 0) throw std::invalid_argument("horizon must be non-negative");
  Mdp copy = *this;
  copy.horizon_ = horizon;
  return copy;
}

std::vector<double> arrival_rewards(const Mdp& mdp, const Theta& theta) {
  std::vector<double> out(static_cast<std::size_t>(mdp.num_states()));
  for (int s = 0; s < mdp.num_states(); ++s) out[s] = dot(theta, mdp.arrival_features(s)) + mdp.arrival_bonus(s);
  return out;
}

std::vector<double> state_action_rewards(const Mdp& mdp, std::span<const double> arrival) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  std::vector<double> out(static_cast<std::size_t>(S) * A, 0.0);
  for (int s = 0; s < S; ++s) {
    if (mdp.is_absorbing(s)) continue;
    for (int a = 0; a < A; ++a) {
      double r = 0.0;
      for (const auto& tr : mdp.successors(s, a)) r += tr.prob * arrival[tr.next];
      out[static_cast<std::size_t>(s) * A + a] = r;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// TabularPolicy

TabularPolicy::TabularPolicy(int horizon, int num_states, int num_actions)
    : horizon_(horizon),
      num_states_(num_states),
      num_actions_(num_actions),
      probs_(static_cast<std::size_t>(horizon) * num_states * num_actions, 0.0) {}

TabularPolicy TabularPolicy::uniform(int horizon, int num_states, int num_actions) {
  TabularPolicy p(horizon, num_states, num_actions);
  std::fill(p.probs_.begin(), p.probs_.end(), 1.0 / num_actions);
  return p;
}

void TabularPolicy::validate() const {
  for (int t = 0; t < horizon_; ++t)
    for (int s = 0; s < num_states_; ++s) {
      double total = 0.0;
      for (double p : row(t, s)) {
        if (!(p >= 0.0)) throw std::invalid_argument("policy has a negative or NaN entry");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("policy row does not sum to one");
    }
}

TabularPolicy SoftSolution::policy() const {
  TabularPolicy p(horizon, num_states, num_actions);
  for (int t = 0; t < horizon; ++t)
    for (int s = 0; s < num_states; ++s)
      for (int a = 0; a < num_actions; ++a) p.at(t, s, a) = std::exp(log_pi(t, s, a));
  return p;
}

// ---------------------------------------------------------------------------
// Value recursions

namespace {

// Shared soft backward pass. q_out may be empty when only the policy is needed.
void soft_backward(const Mdp& mdp, std::span<const double> arrival, double beta, double discount,
                   std::span<double> q_out, std::span<double> logpi_out, std::vector<double>& v) {
  const int S = mdp.num_states(), A = mdp.num_actions(), T = mdp.horizon();
  const auto SA = static_cast<std::size_t>(S) * A;
  v.assign(static_cast<std::size_t>(T + 1) * S, 0.0);
  std::vector<double> q(static_cast<std::size_t>(A));
  const double log_uniform = -std::log(static_cast<double>(A));
  for (int t = T - 1; t >= 0; --t) {
    const double* v_next = v.data() + static_cast<std::size_t>(t + 1) * S;
    double* v_now = v.data() + static_cast<std::size_t>(t) * S;
    for (int s = 0; s < S; ++s) {
      const std::size_t base = static_cast<std::size_t>(t) * SA + static_cast<std::size_t>(s) * A;
      double* lp = logpi_out.data() + base;
      if (mdp.is_absorbing(s)) {
        for (int a = 0; a < A; ++a) {
          lp[a] = log_uniform;
          if (!q_out.empty()) q_out[base + a] = 0.0;
        }
        v_now[s] = 0.0;
        continue;
      }
      double qmax = kNegInf;
      for (int a = 0; a < A; ++a) {
        double acc = 0.0;
        for (const auto& tr : mdp.successors(s, a)) acc += tr.prob * (arrival[tr.next] + discount * v_next[tr.next]);
        q[a] = acc;
        qmax = std::max(qmax, beta * acc);
      }
      double z = 0.0;
      for (int a = 0; a < A; ++a) z += std::exp(beta * q[a] - qmax);
      const double lz = qmax + std::log(z);
      double val = 0.0;
      for (int a = 0; a < A; ++a) {
        const double l = beta * q[a] - lz;
        lp[a] = l;
        val += std::exp(l) * (q[a] - l);
        if (!q_out.empty()) q_out[base + a] = q[a];
      }
      v_now[s] = val;
    }
  }
}

}  // namespace

SoftSolution soft_value_iteration(const Mdp& mdp, std::span<const double> arrival, double beta, double discount) {
  check_beta(beta);
  check_arrival(mdp, arrival);
  SoftSolution sol;
  sol.horizon = mdp.horizon();
  sol.num_states = mdp.num_states();
  sol.num_actions = mdp.num_actions();
  const auto n = static_cast<std::size_t>(sol.horizon) * sol.num_states * sol.num_actions;
  sol.q.assign(n, 0.0);
  sol.log_policy.assign(n, 0.0);
  soft_backward(mdp, arrival, beta, discount, sol.q, sol.log_policy, sol.v);
  return sol;
}

SoftSolution soft_value_iteration(const Mdp& mdp, const Theta& theta, double beta, double discount) {
  return soft_value_iteration(mdp, arrival_rewards(mdp, theta), beta, discount);
}

void soft_log_policy(const Mdp& mdp, std::span<const double> arrival, double beta, double discount,
                     std::span<double> out, std::vector<double>& scratch) {
  check_beta(beta);
  soft_backward(mdp, arrival, beta, discount, {}, out, scratch);
}

HardSolution hard_value_iteration(const Mdp& mdp, std::span<const double> arrival) {
  check_arrival(mdp, arrival);
  const int S = mdp.num_states(), A = mdp.num_actions(), T = mdp.horizon();
  HardSolution sol;
  sol.v.assign(static_cast<std::size_t>(T + 1) * S, 0.0);
  sol.greedy = TabularPolicy(T, S, A);
  for (int t = T - 1; t >= 0; --t) {
    const double* v_next = sol.v.data() + static_cast<std::size_t>(t + 1) * S;
    for (int s = 0; s < S; ++s) {
      if (mdp.is_absorbing(s)) {
        sol.greedy.at(t, s, 0) = 1.0;
        continue;
      }
      int best = 0;
      double best_q = kNegInf;
      for (int a = 0; a < A; ++a) {
        double acc = 0.0;
        for (const auto& tr : mdp.successors(s, a)) acc += tr.prob * (arrival[tr.next] + v_next[tr.next]);
        if (acc > best_q) {
          best_q = acc;
          best = a;
        }
      }
      sol.v[static_cast<std::size_t>(t) * S + s] = best_q;
      sol.greedy.at(t, s, best) = 1.0;
    }
  }
  return sol;
}

HardSolution hard_value_iteration(const Mdp& mdp, const Theta& theta) {
  return hard_value_iteration(mdp, arrival_rewards(mdp, theta));
}

namespace {

void check_policy_shape(const Mdp& mdp, const TabularPolicy& policy) {
  if (policy.horizon() != mdp.horizon() || policy.num_states() != mdp.num_states() ||
      policy.num_actions() != mdp.num_actions())
    throw std::invalid_argument("policy shape does not match the MDP");
}

template <class RewardFn>
std::vector<double> evaluate_values(const Mdp& mdp, const TabularPolicy& policy, RewardFn&& reward) {
  const int S = mdp.num_states(), A = mdp.num_actions(), T = mdp.horizon();
  std::vector<double> v(static_cast<std::size_t>(T + 1) * S, 0.0);
  for (int t = T - 1; t >= 0; --t) {
    const double* v_next = v.data() + static_cast<std::size_t>(t + 1) * S;
    for (int s = 0; s < S; ++s) {
      if (mdp.is_absorbing(s)) continue;
      double val = 0.0;
      for (int a = 0; a < A; ++a) {
        const double p = policy(t, s, a);
        if (p == 0.0) continue;
        double cont = 0.0;
        for (const auto& tr : mdp.successors(s, a)) cont += tr.prob * v_next[tr.next];
        val += p * (reward(t, s, a) + cont);
      }
      v[static_cast<std::size_t>(t) * S + s] = val;
    }
  }
  return v;
}

double start_average(const Mdp& mdp, const std::vector<double>& v) {
  double total = 0.0;
  const auto start = mdp.start_distribution();
  for (int s = 0; s < mdp.num_states(); ++s) total += start[s] * v[s];
  return total;
}

}  // namespace

double evaluate_policy(const Mdp& mdp, const TabularPolicy& policy, std::span<const double> reward_table) {
  check_policy_shape(mdp, policy);
  const int S = mdp.num_states(), A = mdp.num_actions();
  if (reward_table.size() != static_cast<std::size_t>(mdp.horizon()) * S * A)
    throw std::invalid_argument("reward table shape does not match the MDP");
  const auto v = evaluate_values(mdp, policy, [&](int t, int s, int a) {
    return reward_table[(static_cast<std::size_t>(t) * S + s) * A + a];
  });
  return start_average(mdp, v);
}

std::vector<double> policy_values(const Mdp& mdp, const TabularPolicy& policy, std::span<const double> arrival) {
  check_policy_shape(mdp, policy);
  check_arrival(mdp, arrival);
  const auto r = state_action_rewards(mdp, arrival);
  const int A = mdp.num_actions();
  return evaluate_values(mdp, policy,
                         [&](int, int s, int a) { return r[static_cast<std::size_t>(s) * A + a]; });
}

double expected_return(const Mdp& mdp, const TabularPolicy& policy, const Theta& theta) {
  return start_average(mdp, policy_values(mdp, policy, arrival_rewards(mdp, theta)));
}

// ---------------------------------------------------------------------------
// Trajectories

void validate_trajectory(const Mdp& mdp, const Trajectory& traj) {
  if (traj.steps.empty()) throw std::invalid_argument("trajectory is empty");
  if (traj.num_actions() > mdp.horizon()) throw std::invalid_argument("trajectory longer than the horizon");
  for (std::size_t k = 0; k < traj.steps.size(); ++k) {
    const auto& st = traj.steps[k];
    if (st.state < 0 || st.state >= mdp.num_states()) throw std::invalid_argument("trajectory state out of range");
    if (k + 1 == traj.steps.size()) {
      if (st.action != kNoAction) throw std::invalid_argument("final trajectory step must not carry an action");
      break;
    }
    if (st.action < 0 || st.action >= mdp.num_actions()) throw std::invalid_argument("action outside the action set");
    if (mdp.is_absorbing(st.state)) throw std::invalid_argument("trajectory continues past an absorbing state");
    if (mdp.transition_prob(st.state, st.action, traj.steps[k + 1].state) <= 0.0)
      throw std::invalid_argument("trajectory transition has zero probability");
  }
}

ReturnFeatures trajectory_features(const Mdp& mdp, const Trajectory& traj, double discount) {
  if (traj.steps.empty()) throw std::invalid_argument("trajectory is empty");
  ReturnFeatures f;
  double w = 1.0;
  for (std::size_t k = 1; k < traj.steps.size(); ++k) {
    const int s = traj.steps[k].state;
    const auto& phi = mdp.arrival_features(s);
    for (int i = 0; i < kNumColors; ++i) f.color_weights[i] += w * phi[i];
    f.bonus += w * mdp.arrival_bonus(s);
    w *= discount;
  }
  return f;
}

std::vector<ReturnFeatures> prefix_features(const Mdp& mdp, const Trajectory& traj, double discount) {
  if (traj.steps.empty()) throw std::invalid_argument("trajectory is empty");
  std::vector<ReturnFeatures> out(traj.steps.size());
  double w = 1.0;
  for (std::size_t k = 1; k < traj.steps.size(); ++k) {
    out[k] = out[k - 1];
    const int s = traj.steps[k].state;
    const auto& phi = mdp.arrival_features(s);
    for (int i = 0; i < kNumColors; ++i) out[k].color_weights[i] += w * phi[i];
    out[k].bonus += w * mdp.arrival_bonus(s);
    w *= discount;
  }
  return out;
}

double trajectory_return(const Mdp& mdp, const Trajectory& traj, const Theta& theta, double discount) {
  if (!(discount >= 0.0 && discount <= 1.0)) throw std::invalid_argument("discount must lie in [0,1]");
  return trajectory_features(mdp, traj, discount).value(theta);
}

int sample_index(std::span<const double> probs, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    u -= probs[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  // Rounding left a sliver of mass; return the last non-zero entry.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return static_cast<int>(probs.size()) - 1;
}

int sample_next_state(const Mdp& mdp, int s, int a, Rng& rng) {
  const auto succ = mdp.successors(s, a);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  for (const auto& tr : succ) {
    u -= tr.prob;
    if (u < 0.0) return tr.next;
  }
  return succ.back().next;
}

namespace {

template <class ActionSampler>
Trajectory rollout_impl(const Mdp& mdp, int start, Rng& rng, ActionSampler&& sample_action) {
  if (start < 0 || start >= mdp.num_states()) throw std::invalid_argument("start state out of range");
  Trajectory traj;
  traj.steps.reserve(static_cast<std::size_t>(mdp.horizon()) + 1);
  int s = start;
  for (int t = 0; t < mdp.horizon() && !mdp.is_absorbing(s); ++t) {
    const int a = sample_action(t, s);
    traj.steps.push_back({s, a});
    s = sample_next_state(mdp, s, a, rng);
  }
  traj.steps.push_back({s, kNoAction});
  return traj;
}

}  // namespace

Trajectory rollout(const Mdp& mdp, const TabularPolicy& policy, int start, Rng& rng) {
  check_policy_shape(mdp, policy);
  return rollout_impl(mdp, start, rng, [&](int t, int s) { return sample_index(policy.row(t, s), rng); });
}

Trajectory rollout_log_policy(const Mdp& mdp, std::span<const double> log_policy, int start, Rng& rng) {
  const int A = mdp.num_actions(), S = mdp.num_states();
  std::vector<double> probs(static_cast<std::size_t>(A));
  return rollout_impl(mdp, start, rng, [&](int t, int s) {
    const double* lp = log_policy.data() + (static_cast<std::size_t>(t) * S + s) * A;
    for (int a = 0; a < A; ++a) probs[a] = std::exp(lp[a]);
    return sample_index(probs, rng);
  });
}

// ---------------------------------------------------------------------------
// GridWorld

namespace {

std::vector<int> checked_colors(int width, int height, std::vector<int> colors, std::pair<int, int> goal,
                                int horizon, double slip_prob) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("grid dimensions must be positive");
  if (colors.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("colors must have width*height entries");
  for (int c : colors)
    if (c < 0 || c >= kNumColors) throw std::invalid_argument("color index outside [0,4)");
  if (goal.first < 0 || goal.first >= width || goal.second < 0 || goal.second >= height)
    throw std::invalid_argument("goal outside the grid");
  if (horizon < 0) throw std::invalid_argument("horizon must be non-negative");
  if (!(slip_prob >= 0.0 && slip_prob <= 1.0)) throw std::invalid_argument("slip_prob must lie in [0,1]");
  if (width * height < 2) throw std::invalid_argument("grid needs a non-goal cell");
  return colors;
}

}  // namespace

GridWorld::GridWorld(int width, int height, std::vector<int> colors, std::pair<int, int> goal, int horizon,
                     double slip_prob, double completion_bonus)
    : width_(width),
      height_(height),
      colors_(checked_colors(width, height, std::move(colors), goal, horizon, slip_prob)),
      goal_(goal),
      horizon_(horizon),
      slip_prob_(slip_prob),
      completion_bonus_(completion_bonus),
      mdp_(build_mdp()) {}

GridWorld GridWorld::random(std::uint64_t seed, int width, int height, int horizon, double slip_prob,
                            double completion_bonus) {
  Rng rng(seed);
  std::uniform_int_distribution<int> color(0, kNumColors - 1);
  std::vector<int> colors(static_cast<std::size_t>(width) * height);
  for (auto& c : colors) c = color(rng);
  return GridWorld(width, height, std::move(colors), {width - 1, height - 1}, horizon, slip_prob, completion_bonus);
}

int GridWorld::move_target(int s, Move m) const {
  int x = x_of(s), y = y_of(s);
  switch (m) {
    case Move::Up: y -= 1; break;
    case Move::Down: y += 1; break;
    case Move::Left: x -= 1; break;
    case Move::Right: x += 1; break;
  }
  if (x < 0 || x >= width_ || y < 0 || y >= height_) return s;
  return state_of(x, y);
}

Mdp GridWorld::build_mdp() const {
  const int S = width_ * height_;
  const int goal = goal_state();
  std::vector<std::vector<Transition>> transitions(static_cast<std::size_t>(S) * kGridActions);
  std::vector<Theta> features(static_cast<std::size_t>(S), Theta{});
  std::vector<double> bonus(static_cast<std::size_t>(S), 0.0);
  std::vector<char> absorbing(static_cast<std::size_t>(S), 0);
  std::vector<double> start(static_cast<std::size_t>(S), 1.0 / (S - 1));
  for (int s = 0; s < S; ++s) {
    if (s == goal) {
      absorbing[s] = 1;
      bonus[s] = completion_bonus_;
      start[s] = 0.0;
      for (int a = 0; a < kGridActions; ++a) transitions[static_cast<std::size_t>(s) * kGridActions + a] = {{s, 1.0}};
      continue;
    }
    features[s][colors_[s]] = 1.0;
    for (int a = 0; a < kGridActions; ++a) {
      auto& row = transitions[static_cast<std::size_t>(s) * kGridActions + a];
      auto add = [&row](int next, double p) {
        if (p <= 0.0) return;
        for (auto& tr : row)
          if (tr.next == next) {
            tr.prob += p;
            return;
          }
        row.push_back({next, p});
      };
      for (int m = 0; m < kGridActions; ++m) {
        const double p = (m == a) ? 1.0 - slip_prob_ : slip_prob_ / 3.0;
        add(move_target(s, static_cast<Move>(m)), p);
      }
    }
  }
  return Mdp(S, kGridActions, horizon_, transitions, std::move(features), std::move(bonus), std::move(absorbing),
             std::move(start));
}

}  // namespace rrl
