#pragma once
// Fuzzed comparison and e-stop instances shared by the property tests and the acceptance run.
#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "rrl/belief.hpp"

namespace rrl::testing {

inline constexpr int kInstances = 50;

struct Instance {
  GridWorld world;
  std::shared_ptr<const RewardGrid> grid;
  int truth = 0;
  std::vector<FeedbackQuery> queries;
};

inline Trajectory random_walk(const Mdp& mdp, Rng& rng) {
  const auto uniform = TabularPolicy::uniform(mdp.horizon(), mdp.num_states(), mdp.num_actions());
  return rollout(mdp, uniform, sample_index(mdp.start_distribution(), rng), rng);
}

inline Instance make_instance(std::uint64_t seed, int num_queries) {
  Rng rng(seed);
  Instance in{GridWorld::random(seed, 6, 6, 12, 0.1, 0.0), nullptr, 0, {}};
  in.grid = std::make_shared<const RewardGrid>(RewardGrid::make(seed, 200));
  in.truth = std::uniform_int_distribution<int>(0, in.grid->size() - 1)(rng);
  const auto& mdp = in.world.mdp();
  for (int q = 0; q < num_queries; ++q) {
    if (rng() % 2 == 0)
      in.queries.push_back({ComparisonDesign{random_walk(mdp, rng), random_walk(mdp, rng)}});
    else
      in.queries.push_back({EStopDesign{random_walk(mdp, rng)}});
  }
  return in;
}

inline FeedbackResponse respond(const FeedbackQuery& q, int index) {
  if (q.kind() == FeedbackKind::Comparison) return {q, index == 0 ? Pick::A : Pick::B};
  return {q, StopTime{index}};
}

inline int argmax(const std::vector<double>& xs) {
  return static_cast<int>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

inline std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
  return out;
}

}  // namespace rrl::testing
