#include "rrl/active.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace rrl {

bool QueryCandidatePool::has(FeedbackKind k) const { return size(k) > 0; }

std::size_t QueryCandidatePool::size(FeedbackKind k) const {
  switch (k) {
    case FeedbackKind::Demonstration: return demonstrations.size();
    case FeedbackKind::Comparison: return comparisons.size();
    case FeedbackKind::EStop: return estops.size();
  }
  return 0;
}

FeedbackQuery QueryCandidatePool::query(FeedbackKind k, std::size_t i) const {
  if (i >= size(k)) throw std::out_of_range("pool index out of range");
  switch (k) {
    case FeedbackKind::Demonstration: return {demonstrations[i]};
    case FeedbackKind::Comparison: return {comparisons[i]};
    case FeedbackKind::EStop: return {estops[i]};
  }
  throw std::logic_error("unknown feedback kind");
}

void QueryCandidatePool::validate(const Mdp& mdp) const {
  if (empty()) throw std::invalid_argument("query pool is empty");
  for (auto k : {FeedbackKind::Demonstration, FeedbackKind::Comparison, FeedbackKind::EStop})
    for (std::size_t i = 0; i < size(k); ++i) validate_query(mdp, query(k, i));
}

void ActiveConfig::validate() const {
  for (double b : beta_select.values)
    if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("beta_select must be finite and non-negative");
  for (double b : beta_infer.values)
    if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("beta_infer must be finite and non-negative");
  if (demo_eig_samples < 1) throw std::invalid_argument("demo_eig_samples must be positive");
  if (pool_trajectories < 0 || estop_trajectories < 0 || max_demo_starts < 0)
    throw std::invalid_argument("pool sizes must be non-negative");
  if (support_cap < 1 || !(support_tol >= 0.0)) throw std::invalid_argument("invalid EIG support settings");
  if (!(pool_beta >= 0.0)) throw std::invalid_argument("pool_beta must be non-negative");
  if (!kinds[0] && !kinds[1] && !kinds[2]) throw std::invalid_argument("no feedback kind enabled");
}

const PolicyBank& PolicyBankCache::get(double beta) {
  auto& slot = banks_[beta];
  if (!slot) {
    std::vector<int> all(static_cast<std::size_t>(grid_->size()));
    std::iota(all.begin(), all.end(), 0);
    slot = std::make_unique<PolicyBank>(*mdp_, *grid_, std::move(all), BiasSpec{}, beta);
  }
  return *slot;
}

EigSupport eig_support(const Belief& belief, const ActiveConfig& cfg) {
  const auto& lw = belief.log_weights();
  std::vector<int> order(lw.size());
  std::iota(order.begin(), order.end(), 0);
  EigSupport out;
  if (!cfg.exact && static_cast<int>(order.size()) > cfg.support_cap) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return lw[a] > lw[b]; });
    double kept = 0.0;
    for (int i = 0; i < cfg.support_cap; ++i) kept += std::exp(lw[order[i]]);
    if (1.0 - kept < cfg.support_tol) {
      order.resize(static_cast<std::size_t>(cfg.support_cap));
      std::sort(order.begin(), order.end());
    } else {
      std::sort(order.begin(), order.end());
    }
  }
  for (int i : order)
    if (lw[i] > kNegInf) out.members.push_back(i);
  out.log_weights.reserve(out.members.size());
  for (int i : out.members) out.log_weights.push_back(lw[i]);
  const double z = log_sum_exp(out.log_weights);
  for (auto& x : out.log_weights) x -= z;
  return out;
}

namespace {

EigSupport full_support(const Belief& belief) {
  ActiveConfig cfg;
  cfg.exact = true;
  return eig_support(belief, cfg);
}

// log P(y | theta_i) for each support point (rows) and choice (columns).
std::vector<std::vector<double>> choice_log_probs(const Mdp& mdp, const Belief& belief, const EigSupport& sup,
                                                  const FeedbackQuery& query, double beta) {
  std::vector<ReturnFeatures> options;
  if (const auto* c = std::get_if<ComparisonDesign>(&query.design))
    options = {trajectory_features(mdp, c->a), trajectory_features(mdp, c->b)};
  else
    options = prefix_features(mdp, std::get<EStopDesign>(query.design).traj);
  std::vector<std::vector<double>> out(sup.members.size());
  std::vector<double> r(options.size());
  for (std::size_t i = 0; i < sup.members.size(); ++i) {
    const auto& theta = belief.grid()[sup.members[i]];
    for (std::size_t y = 0; y < options.size(); ++y) r[y] = options[y].value(theta);
    out[i] = log_softmax(r, beta);
  }
  return out;
}

// log P(y) = lse_i (log w_i + log P(y | theta_i)).
std::vector<double> log_marginals(const EigSupport& sup, const std::vector<std::vector<double>>& lp) {
  const std::size_t n_y = lp.front().size();
  std::vector<double> out(n_y), terms(sup.members.size());
  for (std::size_t y = 0; y < n_y; ++y) {
    for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = sup.log_weights[i] + lp[i][y];
    out[y] = log_sum_exp(terms);
  }
  return out;
}

double exact_eig(const EigSupport& sup, const std::vector<std::vector<double>>& lp) {
  const auto lm = log_marginals(sup, lp);
  double eig = 0.0;
  for (std::size_t i = 0; i < sup.members.size(); ++i) {
    double inner = 0.0;
    for (std::size_t y = 0; y < lm.size(); ++y) {
      const double p = std::exp(lp[i][y]);
      if (p > 0.0) inner += p * (lp[i][y] - lm[y]);
    }
    eig += std::exp(sup.log_weights[i]) * inner;
  }
  return eig;
}

double beta_for(const FeedbackQuery& q, const BetaMap& beta) {
  const double b = beta[q.kind()];
  if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("beta must be finite and non-negative");
  return b;
}


// Outer draws for demonstration EIG: every support point at its weight, or systematic resampling
// of `draws` points at weight 1/draws each when the support is larger.
std::vector<std::pair<std::size_t, double>> outer_points(const EigSupport& sup, int draws, Rng& rng) {
  std::vector<std::pair<std::size_t, double>> out;
  const std::size_t K = sup.members.size();
  if (draws <= 0 || K <= static_cast<std::size_t>(draws)) {
    for (std::size_t i = 0; i < K; ++i) out.push_back({i, std::exp(sup.log_weights[i])});
    return out;
  }
  const double step = 1.0 / draws;
  double u = std::uniform_real_distribution<double>(0.0, step)(rng), cum = 0.0;
  for (std::size_t i = 0; i < K && static_cast<int>(out.size()) < draws; ++i) {
    cum += std::exp(sup.log_weights[i]);
    while (u < cum && static_cast<int>(out.size()) < draws) {
      out.push_back({i, step});
      u += step;
    }
  }
  while (static_cast<int>(out.size()) < draws) out.push_back({K - 1, step});  // rounding at the tail
  return out;
}

// Monte Carlo demonstration EIG for several start states sharing one policy bank.
// Each start state draws from its own stream so its estimate does not depend on the rest of the pool.
std::vector<double> demo_eigs(const Mdp& mdp, const PolicyBank& bank, const EigSupport& sup,
                              std::span<const DemoDesign> designs, const ActiveConfig& cfg, std::uint64_t base_seed) {
  const std::size_t K = sup.members.size();
  Rng outer_rng(derive_seed(base_seed, designs.size() + 1));
  const auto outer = outer_points(sup, cfg.demo_outer_draws, outer_rng);
  std::vector<double> eig(designs.size(), 0.0);
  std::vector<Rng> streams;
  for (std::size_t d = 0; d < designs.size(); ++d) streams.emplace_back(derive_seed(base_seed, d));
  std::vector<double> acc(K), terms(K), table;
  std::size_t loaded = K;
  for (const auto& [i, w] : outer) {
    if (i != loaded) {
      table = bank.policy_table(static_cast<int>(i));
      loaded = i;
    }
    for (std::size_t d = 0; d < designs.size(); ++d) {
      double inner = 0.0;
      for (int m = 0; m < cfg.demo_eig_samples; ++m) {
        const auto traj = rollout_log_policy(mdp, table, designs[d].start_state, streams[d]);
        std::fill(acc.begin(), acc.end(), 0.0);
        bank.accumulate(traj, acc);
        for (std::size_t j = 0; j < K; ++j) terms[j] = sup.log_weights[j] + acc[j];
        inner += acc[i] - log_sum_exp(terms);
      }
      eig[d] += w * inner / cfg.demo_eig_samples;
    }
  }
  return eig;
}

bool covers_grid(const EigSupport& sup, const Belief& belief) {
  return static_cast<int>(sup.members.size()) == belief.size();
}

}  // namespace

double expected_information_gain(const Mdp& mdp, const Belief& belief, const FeedbackQuery& query,
                                 const BetaMap& beta_select, const ActiveConfig& cfg, Rng& rng) {
  validate_query(mdp, query);
  const double beta = beta_for(query, beta_select);
  const auto sup = eig_support(belief, cfg);
  if (sup.members.size() == 1) return 0.0;
  if (const auto* d = std::get_if<DemoDesign>(&query.design)) {
    const PolicyBank bank(mdp, belief.grid(), sup.members, {}, beta);
    return demo_eigs(mdp, bank, sup, std::span(d, 1), cfg, rng()).front();
  }
  return exact_eig(sup, choice_log_probs(mdp, belief, sup, query, beta));
}

double expected_information_gain(const Mdp& mdp, const Belief& belief, const FeedbackQuery& query,
                                 const BetaMap& beta_select) {
  if (query.kind() == FeedbackKind::Demonstration)
    throw std::invalid_argument("demonstration EIG needs a sampling configuration");
  validate_query(mdp, query);
  const auto sup = full_support(belief);
  if (sup.members.size() == 1) return 0.0;
  return exact_eig(sup, choice_log_probs(mdp, belief, sup, query, beta_for(query, beta_select)));
}

double expected_entropy_reduction(const Mdp& mdp, const Belief& belief, const FeedbackQuery& query,
                                  const BetaMap& beta_select) {
  if (query.kind() == FeedbackKind::Demonstration)
    throw std::invalid_argument("entropy reduction is computed exactly for comparisons and e-stops only");
  validate_query(mdp, query);
  const auto sup = full_support(belief);
  const auto lp = choice_log_probs(mdp, belief, sup, query, beta_for(query, beta_select));
  const auto lm = log_marginals(sup, lp);
  double expected_post = 0.0;
  std::vector<double> post(sup.members.size());
  for (std::size_t y = 0; y < lm.size(); ++y) {
    for (std::size_t i = 0; i < post.size(); ++i) post[i] = sup.log_weights[i] + lp[i][y];
    expected_post += std::exp(lm[y]) * entropy_from_log_weights(post);
  }
  return entropy_from_log_weights(sup.log_weights) - expected_post;
}

QueryCandidatePool build_pool(const Mdp& mdp, const Belief& belief, const ActiveConfig& cfg, Rng& rng) {
  cfg.validate();
  QueryCandidatePool pool;
  const auto weights = belief.weights();
  const auto start = mdp.start_distribution();
  std::vector<double> table(static_cast<std::size_t>(mdp.horizon()) * mdp.num_states() * mdp.num_actions()),
      scratch;
  auto sample_trajectory = [&] {
    const auto& theta = belief.grid()[sample_index(weights, rng)];
    soft_log_policy(mdp, arrival_rewards(mdp, theta), cfg.pool_beta, 1.0, table, scratch);
    return rollout_log_policy(mdp, table, sample_index(start, rng), rng);
  };

  if (cfg.kinds[static_cast<std::size_t>(FeedbackKind::Comparison)]) {
    std::vector<Trajectory> trajs;
    for (int i = 0; i < cfg.pool_trajectories; ++i) trajs.push_back(sample_trajectory());
    for (std::size_t i = 0; i < trajs.size(); ++i)
      for (std::size_t j = i + 1; j < trajs.size(); ++j) pool.comparisons.push_back({trajs[i], trajs[j]});
  }
  if (cfg.kinds[static_cast<std::size_t>(FeedbackKind::EStop)])
    for (int i = 0; i < cfg.estop_trajectories; ++i) pool.estops.push_back({sample_trajectory()});
  if (cfg.kinds[static_cast<std::size_t>(FeedbackKind::Demonstration)]) {
    std::vector<int> starts;
    for (int s = 0; s < mdp.num_states(); ++s)
      if (start[static_cast<std::size_t>(s)] > 0.0 && !mdp.is_absorbing(s)) starts.push_back(s);
    std::shuffle(starts.begin(), starts.end(), rng);
    starts.resize(std::min(starts.size(), static_cast<std::size_t>(cfg.max_demo_starts)));
    std::sort(starts.begin(), starts.end());
    for (int s : starts) pool.demonstrations.push_back({s});
  }
  return pool;
}

Selection select_query(const Mdp& mdp, const Belief& belief, const QueryCandidatePool& pool, const ActiveConfig& cfg,
                       Rng& rng, PolicyBankCache* cache) {
  cfg.validate();
  if (cache && (&cache->mdp() != &mdp || &cache->grid() != &belief.grid()))
    throw std::invalid_argument("policy bank cache belongs to a different MDP or grid");
  pool.validate(mdp);
  const auto sup = eig_support(belief, cfg);
  const std::uint64_t demo_seed = rng();

  Selection best{{}, FeedbackKind::Comparison, 0, -std::numeric_limits<double>::infinity(), {}};
  for (auto kind : {FeedbackKind::Comparison, FeedbackKind::EStop, FeedbackKind::Demonstration}) {
    auto& scores = best.scores[static_cast<std::size_t>(kind)];
    const std::size_t n = pool.size(kind);
    if (n == 0) continue;
    const double beta = cfg.beta_select[kind];
    if (sup.members.size() == 1) {
      scores.assign(n, 0.0);
    } else if (kind == FeedbackKind::Demonstration) {
      if (cache && covers_grid(sup, belief)) {
        scores = demo_eigs(mdp, cache->get(beta), sup, pool.demonstrations, cfg, demo_seed);
      } else {
        const PolicyBank bank(mdp, belief.grid(), sup.members, {}, beta);
        scores = demo_eigs(mdp, bank, sup, pool.demonstrations, cfg, demo_seed);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i)
        scores.push_back(exact_eig(sup, choice_log_probs(mdp, belief, sup, pool.query(kind, i), beta)));
    }
    for (std::size_t i = 0; i < n; ++i)
      if (scores[i] > best.eig) {
        best.eig = scores[i];
        best.kind = kind;
        best.index = i;
      }
  }
  best.query = pool.query(best.kind, best.index);
  return best;
}

ActiveTrace active_loop(const Mdp& mdp, const Belief& prior, const BiasedHumanModel& responder,
                        const Theta& theta_true, const ActiveConfig& cfg, int n_rounds,
                        const std::optional<QueryCandidatePool>& fixed_pool, PolicyBankCache* cache) {
  if (n_rounds < 1) throw std::invalid_argument("active loop needs at least one round");
  cfg.validate();
  SimulatedHuman human(mdp, responder);
  ActiveTrace trace;
  trace.beliefs.push_back(prior);
  for (int r = 0; r < n_rounds; ++r) {
    const Belief& belief = trace.beliefs.back();
    Rng pool_rng(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(r)));
    Rng select_rng(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(r) + 1));
    const auto pool = fixed_pool ? *fixed_pool : build_pool(mdp, belief, cfg, pool_rng);
    const auto sel = select_query(mdp, belief, pool, cfg, select_rng, cache);
    RoundRecord rec;
    rec.round = r + 1;
    rec.kind = sel.kind;
    rec.design_index = sel.index;
    rec.eig = sel.eig;
    rec.response = human.respond(sel.query, theta_true);
    if (cache && rec.kind == FeedbackKind::Demonstration) {
      const auto model = ObservationModel::boltzmann(cfg.beta_infer);
      trace.beliefs.push_back(update_with_bank(belief, mdp, std::span(&rec.response, 1), model,
                                               cache->get(cfg.beta_infer[FeedbackKind::Demonstration])));
    } else {
      trace.beliefs.push_back(update(belief, mdp, std::span(&rec.response, 1), cfg.beta_infer));
    }
    const auto& post = trace.beliefs.back();
    rec.post_entropy = entropy(post);
    const Theta mean = posterior_mean(post);
    rec.regret = normalized_regret(mdp, theta_true, mean);
    rec.mse = reward_mse(mean, theta_true);
    trace.rounds.push_back(std::move(rec));
  }
  return trace;
}

FeedbackQuery random_design(const Mdp& mdp, FeedbackKind kind, double design_beta, Rng& rng,
                            std::vector<double>& table, std::vector<double>& scratch) {
  const auto start = [&] { return sample_index(mdp.start_distribution(), rng); };
  if (kind == FeedbackKind::Demonstration) return {DemoDesign{start()}};
  auto traj = [&] {
    const Theta theta = sample_unit_theta(rng);
    table.resize(static_cast<std::size_t>(mdp.horizon()) * mdp.num_states() * mdp.num_actions());
    soft_log_policy(mdp, arrival_rewards(mdp, theta), design_beta, 1.0, table, scratch);
    const int s = start();
    return rollout_log_policy(mdp, table, s, rng);
  };
  if (kind == FeedbackKind::Comparison) {
    auto a = traj();
    auto b = traj();
    return {ComparisonDesign{std::move(a), std::move(b)}};
  }
  return {EStopDesign{traj()}};
}

FeedbackQuery random_design(const Mdp& mdp, FeedbackKind kind, double design_beta, Rng& rng) {
  std::vector<double> table, scratch;
  return random_design(mdp, kind, design_beta, rng, table, scratch);
}

}  // namespace rrl
