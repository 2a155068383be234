#pragma once

// Query selection by expected information gain over a discrete reward belief.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "rrl/belief.hpp"

namespace rrl {

/// Candidate designs per kind. Selection order on ties: comparison, e-stop, demonstration, then pool index.
struct QueryCandidatePool {
  std::vector<DemoDesign> demonstrations;
  std::vector<ComparisonDesign> comparisons;
  std::vector<EStopDesign> estops;

  bool empty() const { return demonstrations.empty() && comparisons.empty() && estops.empty(); }
  bool has(FeedbackKind k) const;
  std::size_t size(FeedbackKind k) const;
  FeedbackQuery query(FeedbackKind k, std::size_t index) const;
  void validate(const Mdp& mdp) const;
};

struct ActiveConfig {
  BetaMap beta_select;
  BetaMap beta_infer;
  std::array<bool, kNumKinds> kinds{true, true, true};  // which kinds the pool offers
  int demo_eig_samples = 8;
  int pool_trajectories = 8;    // comparison pairs are all pairs of these
  int estop_trajectories = 8;
  int max_demo_starts = 16;
  double pool_beta = 1.0;       // rationality of the rollouts that seed the pool
  int support_cap = 200;        // EIG runs over the top points when the rest carry < support_tol
  double support_tol = 1e-6;
  bool exact = false;           // always use the full grid
  int demo_outer_draws = 0;     // outer theta draws for demonstration EIG on larger supports; 0 = every point
  std::uint64_t seed = 0;

  void validate() const;
};

/// Grid indices (with renormalized weights) over which EIG is evaluated.
struct EigSupport {
  std::vector<int> members;
  std::vector<double> log_weights;  // normalized over members
};
EigSupport eig_support(const Belief& belief, const ActiveConfig& cfg);

/// Full-grid demonstration policy banks keyed by beta, reused across rounds and runs on one world.
class PolicyBankCache {
 public:
  PolicyBankCache(const Mdp& mdp, std::shared_ptr<const RewardGrid> grid) : mdp_(&mdp), grid_(std::move(grid)) {}
  const Mdp& mdp() const { return *mdp_; }
  const RewardGrid& grid() const { return *grid_; }
  const PolicyBank& get(double beta);

 private:
  const Mdp* mdp_;
  std::shared_ptr<const RewardGrid> grid_;
  std::map<double, std::unique_ptr<PolicyBank>> banks_;
};

/// E_theta E_{y|theta} log P(y|x,theta) / P(y|x) in nats. Comparisons and e-stops are exact;
/// demonstrations average demo_eig_samples rollouts per support point drawn from rng.
double expected_information_gain(const Mdp& mdp, const Belief& belief, const FeedbackQuery& query,
                                 const BetaMap& beta_select, const ActiveConfig& cfg, Rng& rng);
/// Exact kinds only, with the full grid as support.
double expected_information_gain(const Mdp& mdp, const Belief& belief, const FeedbackQuery& query,
                                 const BetaMap& beta_select);
/// H(prior) - E_y H(posterior | y), for comparisons and e-stops (full grid).
double expected_entropy_reduction(const Mdp& mdp, const Belief& belief, const FeedbackQuery& query,
                                  const BetaMap& beta_select);

/// One random design: a start state drawn from the start distribution, or rollouts from random
/// starts of soft policies at design_beta for fresh random unit rewards.
FeedbackQuery random_design(const Mdp& mdp, FeedbackKind kind, double design_beta, Rng& rng);
/// Same, reusing the caller's policy and value-iteration buffers.
FeedbackQuery random_design(const Mdp& mdp, FeedbackKind kind, double design_beta, Rng& rng,
                            std::vector<double>& table, std::vector<double>& scratch);

/// Belief-driven pool: rollouts of soft-optimal policies for rewards drawn from the belief.
QueryCandidatePool build_pool(const Mdp& mdp, const Belief& belief, const ActiveConfig& cfg, Rng& rng);

struct Selection {
  FeedbackQuery query;
  FeedbackKind kind;
  std::size_t index;  // position inside the kind's pool
  double eig;
  std::array<std::vector<double>, kNumKinds> scores;  // EIG of every pooled design
};

/// Argmax of EIG over every pooled design. Reads cfg.beta_select only.
/// A cache built for the same MDP and grid avoids rebuilding demonstration policies.
Selection select_query(const Mdp& mdp, const Belief& belief, const QueryCandidatePool& pool, const ActiveConfig& cfg,
                       Rng& rng, PolicyBankCache* cache = nullptr);

struct RoundRecord {
  int round = 0;
  FeedbackKind kind = FeedbackKind::Comparison;
  std::size_t design_index = 0;
  double eig = 0.0;
  FeedbackResponse response;
  double post_entropy = 0.0;
  double regret = 0.0;
  double mse = 0.0;
};

struct ActiveTrace {
  std::vector<Belief> beliefs;  // prior first, then one per round
  std::vector<RoundRecord> rounds;
};

/// Pool -> select -> respond -> update with beta_infer, n_rounds times.
/// When fixed_pool is given it replaces the belief-driven pool every round.
ActiveTrace active_loop(const Mdp& mdp, const Belief& prior, const BiasedHumanModel& responder,
                        const Theta& theta_true, const ActiveConfig& cfg, int n_rounds,
                        const std::optional<QueryCandidatePool>& fixed_pool = std::nullopt,
                        PolicyBankCache* cache = nullptr);

}  // namespace rrl
