#pragma once
#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "rrl/mdp.hpp"

namespace rrl::testing {

// One-state MDP with a self-loop whose arrival reward is c.
inline Mdp single_state(double c, int num_actions, int horizon) {
  std::vector<std::vector<Transition>> tr(static_cast<std::size_t>(num_actions), {{0, 1.0}});
  return Mdp(1, num_actions, horizon, tr, {Theta{c, 0, 0, 0}}, {0.0}, {0}, {1.0});
}

inline GridWorld small_world(int w, int h, int horizon, double slip, double bonus, std::uint64_t seed) {
  auto g = GridWorld::random(seed, w, h, horizon, slip, bonus);
  return g;
}

// Independent soft recursion written from grid geometry, without using Mdp tables.
struct GeometricSoftOracle {
  const GridWorld& world;
  Theta theta;
  double beta;

  std::vector<std::pair<int, double>> successors(int s, int a) const {
    std::map<int, double> out;
    const int x = s % world.width(), y = s / world.width();
    const int dx[4] = {0, 0, -1, 1};
    const int dy[4] = {-1, 1, 0, 0};
    for (int m = 0; m < 4; ++m) {
      int nx = x + dx[m], ny = y + dy[m];
      if (nx < 0 || nx >= world.width() || ny < 0 || ny >= world.height()) nx = x, ny = y;
      const double p = m == a ? 1.0 - world.slip_prob() : world.slip_prob() / 3.0;
      if (p > 0) out[ny * world.width() + nx] += p;
    }
    return {out.begin(), out.end()};
  }
  double arrival(int s) const {
    if (s == world.goal_state()) return world.completion_bonus();
    return theta[world.colors()[s]];
  }
  double q(int t, int s, int a) const {
    double acc = 0;
    for (auto [n, p] : successors(s, a)) acc += p * (arrival(n) + v(t + 1, n));
    return acc;
  }
  std::vector<double> pi(int t, int s) const {
    std::vector<double> qs(4), out(4);
    double z = 0;
    for (int a = 0; a < 4; ++a) qs[a] = q(t, s, a);
    const double m = *std::max_element(qs.begin(), qs.end());
    for (int a = 0; a < 4; ++a) z += std::exp(beta * (qs[a] - m));
    for (int a = 0; a < 4; ++a) out[a] = std::exp(beta * (qs[a] - m)) / z;
    return out;
  }
  double v(int t, int s) const {
    if (t >= world.horizon() || s == world.goal_state()) return 0.0;
    const auto p = pi(t, s);
    double acc = 0;
    for (int a = 0; a < 4; ++a) acc += p[a] * (q(t, s, a) - std::log(p[a]));
    return acc;
  }
};

inline TabularPolicy random_policy(const Mdp& mdp, Rng& rng) {
  TabularPolicy p(mdp.horizon(), mdp.num_states(), mdp.num_actions());
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int t = 0; t < mdp.horizon(); ++t)
    for (int s = 0; s < mdp.num_states(); ++s) {
      double z = 0;
      for (auto& x : p.row(t, s)) z += (x = u(rng));
      for (auto& x : p.row(t, s)) x /= z;
    }
  return p;
}

inline Theta random_theta(Rng& rng) {
  std::normal_distribution<double> n;
  return normalized(Theta{n(rng), n(rng), n(rng), n(rng)});
}


// 4x4 slip grid with a Gaussian feature vector per cell, so optimal actions are generically unique.
inline Mdp continuous_grid(const GridWorld& geometry, Rng& rng) {
  const auto& base = geometry.mdp();
  std::normal_distribution<double> n;
  std::vector<std::vector<Transition>> tr;
  for (int s = 0; s < base.num_states(); ++s)
    for (int a = 0; a < base.num_actions(); ++a) {
      const auto succ = base.successors(s, a);
      tr.emplace_back(succ.begin(), succ.end());
    }
  std::vector<Theta> features(static_cast<std::size_t>(base.num_states()));
  std::vector<double> bonus(features.size(), 0.0);
  std::vector<char> absorbing(features.size(), 0);
  for (auto& f : features) f = Theta{n(rng), n(rng), n(rng), n(rng)};
  absorbing[static_cast<std::size_t>(geometry.goal_state())] = 1;
  features[static_cast<std::size_t>(geometry.goal_state())] = Theta{};
  std::vector<double> start(base.start_distribution().begin(), base.start_distribution().end());
  return Mdp(base.num_states(), base.num_actions(), base.horizon(), tr, features, bonus, absorbing, start);
}

// Disjoint single-action chains; chain i pays rewards[i][k] (color 0 feature) on its k-th arrival.
// Returns the MDP and the full trajectory along each chain.
struct PathWorld {
  Mdp mdp;
  std::vector<Trajectory> paths;
};

inline PathWorld path_world(const std::vector<std::vector<double>>& rewards) {
  std::vector<std::vector<Transition>> tr;
  std::vector<Theta> features;
  std::vector<double> bonus;
  std::vector<char> absorbing;
  std::vector<Trajectory> paths;
  int horizon = 1;
  for (const auto& r : rewards) {
    const int base = static_cast<int>(features.size());
    const int len = static_cast<int>(r.size());
    horizon = std::max(horizon, len);
    Trajectory traj;
    for (int k = 0; k <= len; ++k) {
      const int s = base + k;
      tr.push_back({{k < len ? s + 1 : s, 1.0}});
      features.push_back(k == 0 ? Theta{} : Theta{r[static_cast<std::size_t>(k - 1)], 0, 0, 0});
      bonus.push_back(0.0);
      absorbing.push_back(0);
      traj.steps.push_back({s, k < len ? 0 : kNoAction});
    }
    paths.push_back(traj);
  }
  std::vector<double> start(features.size(), 0.0);
  start[0] = 1.0;
  return {Mdp(static_cast<int>(features.size()), 1, horizon, tr, features, bonus, absorbing, start), paths};
}

}  // namespace rrl::testing
