#include "rrl/belief.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace rrl {

Theta sample_unit_theta(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Theta t;
    for (auto& x : t) x = normal(rng);
    if (norm(t) >= 1e-12) return normalized(t);
  }
}

RewardGrid RewardGrid::make(std::uint64_t seed, int size) {
  if (size < 1) throw std::invalid_argument("grid needs at least one point");
  Rng rng(seed);
  std::vector<Theta> points;
  points.reserve(static_cast<std::size_t>(size));
  while (static_cast<int>(points.size()) < size) points.push_back(sample_unit_theta(rng));
  return RewardGrid(std::move(points), seed);
}

RewardGrid::RewardGrid(std::vector<Theta> points, std::uint64_t seed) : points_(std::move(points)), seed_(seed) {
  if (points_.empty()) throw std::invalid_argument("grid needs at least one point");
  for (const auto& p : points_)
    if (std::abs(norm(p) - 1.0) > 1e-9) throw std::invalid_argument("grid points must have unit norm");
}

Belief Belief::uniform(std::shared_ptr<const RewardGrid> grid) {
  const auto n = static_cast<std::size_t>(grid->size());
  return Belief(std::move(grid), std::vector<double>(n, 0.0));
}

Belief::Belief(std::shared_ptr<const RewardGrid> grid, std::vector<double> log_weights)
    : grid_(std::move(grid)), log_weights_(std::move(log_weights)) {
  if (!grid_) throw std::invalid_argument("belief needs a grid");
  if (log_weights_.size() != static_cast<std::size_t>(grid_->size()))
    throw std::invalid_argument("log-weight count does not match the grid");
  const double lz = log_sum_exp(log_weights_);
  if (!std::isfinite(lz)) throw DegeneratePosteriorError("posterior has no finite mass");
  for (auto& lw : log_weights_) {
    if (std::isnan(lw)) throw DegeneratePosteriorError("posterior has NaN weights");
    lw -= lz;
  }
}

std::vector<double> Belief::weights() const {
  std::vector<double> w(log_weights_.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights_[i]);
  return w;
}

// ---------------------------------------------------------------------------

PolicyBank::PolicyBank(const Mdp& mdp, const RewardGrid& grid, std::vector<int> members, const BiasSpec& bias,
                       double beta)
    : mdp_(&mdp), members_(std::move(members)), beta_(beta) {
  const std::size_t K = members_.size();
  const std::size_t n = static_cast<std::size_t>(mdp.horizon()) * mdp.num_states() * mdp.num_actions();
  table_.assign(n * K, 0.0);
  std::vector<double> one(n), scratch;
  for (std::size_t k = 0; k < K; ++k) {
    const auto arrival = arrival_rewards(mdp, grid[members_[k]]);
    model_log_policy(mdp, arrival, bias, beta, one, scratch);
    for (std::size_t j = 0; j < n; ++j) table_[j * K + k] = one[j];
  }
}

void PolicyBank::accumulate(const Trajectory& traj, std::span<double> acc) const {
  const std::size_t K = members_.size();
  const int S = mdp_->num_states(), A = mdp_->num_actions();
  for (int t = 0; t < traj.num_actions(); ++t) {
    const auto& st = traj.steps[static_cast<std::size_t>(t)];
    const double* row = table_.data() + ((static_cast<std::size_t>(t) * S + st.state) * A + st.action) * K;
    for (std::size_t k = 0; k < K; ++k) acc[k] += row[k];
  }
}

std::vector<double> PolicyBank::policy_table(int k) const {
  const std::size_t K = members_.size();
  const std::size_t n = table_.size() / K;
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = table_[j * K + static_cast<std::size_t>(k)];
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> grid_log_likelihoods(const Mdp& mdp, const RewardGrid& grid,
                                         std::span<const FeedbackResponse> responses, const ObservationModel& model) {
  const int K = grid.size();
  std::vector<double> ll(static_cast<std::size_t>(K), 0.0);
  const double g = model.bias.discount();

  struct Choice {
    std::vector<ReturnFeatures> options;
    int chosen;
    double beta;
  };
  std::vector<Choice> choices;
  std::vector<const Trajectory*> demos;
  for (const auto& resp : responses) {
    validate_response(mdp, resp);
    if (resp.kind() == FeedbackKind::Demonstration) {
      demos.push_back(&std::get<Trajectory>(resp.choice));
    } else if (resp.kind() == FeedbackKind::Comparison) {
      const auto& d = std::get<ComparisonDesign>(resp.query.design);
      choices.push_back({{trajectory_features(mdp, d.a, g), trajectory_features(mdp, d.b, g)}, choice_index(resp),
                         model.beta[FeedbackKind::Comparison]});
    } else {
      choices.push_back({prefix_features(mdp, std::get<EStopDesign>(resp.query.design).traj, g), choice_index(resp),
                         model.beta[FeedbackKind::EStop]});
    }
  }

  std::vector<double> returns;
  for (int i = 0; i < K; ++i) {
    double total = 0.0;
    for (const auto& c : choices) {
      returns.resize(c.options.size());
      for (std::size_t j = 0; j < c.options.size(); ++j) returns[j] = c.options[j].value(grid[i]);
      total += estop_log_likelihood(returns, c.chosen, c.beta);
    }
    ll[static_cast<std::size_t>(i)] = total;
  }

  if (!demos.empty()) {
    const std::size_t n = static_cast<std::size_t>(mdp.horizon()) * mdp.num_states() * mdp.num_actions();
    std::vector<double> table(n), scratch;
    const double beta = model.beta[FeedbackKind::Demonstration];
    for (int i = 0; i < K; ++i) {
      model_log_policy(mdp, arrival_rewards(mdp, grid[i]), model.bias, beta, table, scratch);
      double total = 0.0;
      for (const auto* traj : demos) total += demo_log_likelihood(mdp, table, *traj);
      ll[static_cast<std::size_t>(i)] += total;
    }
  }
  return ll;
}

Belief update(const Belief& belief, const Mdp& mdp, std::span<const FeedbackResponse> responses,
              const ObservationModel& model) {
  for (double b : model.beta.values)
    if (!(b >= 0.0)) throw std::invalid_argument("beta must be non-negative");
  if (responses.empty()) throw std::invalid_argument("update needs at least one response");
  const auto ll = grid_log_likelihoods(mdp, belief.grid(), responses, model);
  std::vector<double> lw = belief.log_weights();
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] += ll[i];
  return Belief(belief.grid_ptr(), std::move(lw));
}

Belief update_with_bank(const Belief& belief, const Mdp& mdp, std::span<const FeedbackResponse> responses,
                        const ObservationModel& model, const PolicyBank& demo_bank) {
  for (double b : model.beta.values)
    if (!(b >= 0.0)) throw std::invalid_argument("beta must be non-negative");
  if (responses.empty()) throw std::invalid_argument("update needs at least one response");
  const int K = belief.size();
  if (demo_bank.size() != K || demo_bank.beta() != model.beta[FeedbackKind::Demonstration])
    throw std::invalid_argument("bank does not cover the grid at the model's demonstration beta");
  for (int k = 0; k < K; ++k)
    if (demo_bank.members()[static_cast<std::size_t>(k)] != k)
      throw std::invalid_argument("bank does not cover the grid at the model's demonstration beta");

  std::vector<FeedbackResponse> others;
  std::vector<const Trajectory*> demos;
  for (const auto& resp : responses) {
    if (resp.kind() == FeedbackKind::Demonstration) {
      validate_response(mdp, resp);
      demos.push_back(&std::get<Trajectory>(resp.choice));
    } else {
      others.push_back(resp);
    }
  }
  // Mirrors grid_log_likelihoods: choice terms first, then one per-trajectory sum per demonstration.
  std::vector<double> ll = others.empty() ? std::vector<double>(static_cast<std::size_t>(K), 0.0)
                                          : grid_log_likelihoods(mdp, belief.grid(), others, model);
  if (!demos.empty()) {
    std::vector<double> total(ll.size(), 0.0), one(ll.size());
    for (const auto* traj : demos) {
      std::fill(one.begin(), one.end(), 0.0);
      demo_bank.accumulate(*traj, one);
      for (std::size_t i = 0; i < one.size(); ++i) total[i] += one[i];
    }
    for (std::size_t i = 0; i < ll.size(); ++i) ll[i] += total[i];
  }
  std::vector<double> lw = belief.log_weights();
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] += ll[i];
  return Belief(belief.grid_ptr(), std::move(lw));
}

Belief update(const Belief& belief, const Mdp& mdp, std::span<const FeedbackResponse> responses,
              const BetaMap& beta) {
  return update(belief, mdp, responses, ObservationModel::boltzmann(beta));
}

Theta posterior_mean(const Belief& belief) {
  Theta mean{};
  for (int i = 0; i < belief.size(); ++i) {
    const double w = belief.weight(i);
    for (int c = 0; c < kNumColors; ++c) mean[c] += w * belief.grid()[i][c];
  }
  return mean;
}

double entropy(const Belief& belief) { return entropy_from_log_weights(belief.log_weights()); }

std::vector<WeightedPoint> top_k(const Belief& belief, int k) {
  std::vector<int> order(static_cast<std::size_t>(belief.size()));
  std::iota(order.begin(), order.end(), 0);
  const auto& lw = belief.log_weights();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return lw[a] > lw[b]; });
  std::vector<WeightedPoint> out;
  for (int j = 0; j < std::min(k, belief.size()); ++j)
    out.push_back({order[j], belief.grid()[order[j]], belief.weight(order[j])});
  return out;
}

double normalized_regret(const Mdp& mdp, const Theta& theta_true, const Theta& theta_inferred) {
  for (int c = 0; c < kNumColors; ++c)
    if (!std::isfinite(theta_true[c]) || !std::isfinite(theta_inferred[c]))
      throw std::invalid_argument("reward vectors must be finite");
  const double r_true = expected_return(mdp, hard_value_iteration(mdp, theta_true).greedy, theta_true);
  const double r_inferred = expected_return(mdp, hard_value_iteration(mdp, theta_inferred).greedy, theta_true);
  const double r_random =
      expected_return(mdp, TabularPolicy::uniform(mdp.horizon(), mdp.num_states(), mdp.num_actions()), theta_true);
  const double denom = r_true - r_random;
  if (std::abs(denom) <= 1e-12 * std::max(1.0, std::abs(r_true)))
    throw std::domain_error("regret undefined: optimal and random returns coincide");
  return 1.0 - (r_inferred - r_random) / denom;
}

double reward_mse(const Theta& inferred, const Theta& truth) {
  double s = 0.0;
  for (int c = 0; c < kNumColors; ++c) s += (inferred[c] - truth[c]) * (inferred[c] - truth[c]);
  return s;
}

std::string metrics_csv_header() { return "run_id,method,beta_true,beta_used,regret,mse"; }

std::string to_csv(const MetricsRow& row) {
  return row.run_id + "," + row.method + "," + format_double(row.beta_true) + "," + format_double(row.beta_used) +
         "," + format_double(row.regret) + "," + format_double(row.mse);
}

}  // namespace rrl
