#include "rrl/beta_fit.hpp"

#include <algorithm>
#include <map>

namespace rrl {

namespace {

constexpr double kInvPhi = 0.6180339887498949;

// Golden-section minimization of g on [a, b].
double golden(const std::function<double(double)>& g, double a, double b, double tol) {
  double c = b - kInvPhi * (b - a), d = a + kInvPhi * (b - a);
  double fc = g(c), fd = g(d);
  for (int it = 0; it < 200 && b - a > tol; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = g(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = g(d);
    }
  }
  return 0.5 * (a + b);
}

// E_q[r] with q = softmax(beta r).
double softmax_mean(std::span<const double> r, double beta, std::vector<double>& lq) {
  lq.resize(r.size());
  log_softmax(r, beta, lq);
  double m = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) m += std::exp(lq[i]) * r[i];
  return m;
}

void check_range(const BetaRange& r) {
  if (!(r.low > 0.0) || !(r.high > r.low) || r.grid_points < 2)
    throw std::invalid_argument("beta range needs 0 < low < high and at least two grid points");
}

}  // namespace

ScalarSearchResult minimize_over_beta(const std::function<double(double)>& f, const BetaRange& range,
                                      const std::function<double(double)>& grad) {
  check_range(range);
  const int n = range.grid_points;
  std::vector<double> grid(static_cast<std::size_t>(n) + 1), vals(grid.size());
  grid[0] = 0.0;
  const double la = std::log(range.low), lb = std::log(range.high);
  for (int i = 0; i < n; ++i) grid[i + 1] = std::exp(la + (lb - la) * i / (n - 1));
  grid[n] = range.high;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    vals[i] = f(grid[i]);
    if (std::isnan(vals[i])) throw std::invalid_argument("objective is NaN");
  }

  double lo = std::numeric_limits<double>::infinity(), hi = -lo, scale = 1.0;
  for (double v : vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    if (std::isfinite(v)) scale = std::max(scale, std::abs(v));
  }
  if (!(hi - lo > 1e-12 * scale)) throw FlatObjectiveError("objective does not depend on beta");

  // Last minimizer: saturated likelihoods plateau toward large beta.
  std::size_t best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i)
    if (vals[i] <= vals[best]) best = i;

  const double a = grid[best == 0 ? 0 : best - 1];
  const double b = grid[std::min(best + 1, grid.size() - 1)];

  if (grad) {
    // Convex objectives: bisect on the sign of the derivative inside the bracket.
    double x;
    if (a == 0.0 && grad(0.0) >= 0.0) {
      x = 0.0;
    } else if (b == range.high && grad(range.high) <= 0.0) {
      x = range.high;
    } else {
      const bool linear = a == 0.0;
      double u = linear ? a : std::log(a), w = linear ? b : std::log(b);
      for (int it = 0; it < 200; ++it) {
        const double m = 0.5 * (u + w);
        if (m == u || m == w) break;
        (grad(linear ? m : std::exp(m)) < 0.0 ? u : w) = m;
      }
      x = linear ? 0.5 * (u + w) : std::exp(0.5 * (u + w));
    }
    return {x, f(x), x == 0.0 || x == range.high};
  }

  double x;
  if (a == 0.0) {
    x = golden(f, a, b, 1e-14 * b);
  } else {
    auto g = [&](double u) { return f(std::exp(u)); };
    x = std::exp(golden(g, std::log(a), std::log(b), 1e-12));
  }

  ScalarSearchResult out{x, f(x), false};
  if (vals[best] < out.value) out = {grid[best], vals[best], false};
  for (double edge : {0.0, range.high}) {
    if (edge < a || edge > b) continue;
    const double fe = edge == grid[best] ? vals[best] : f(edge);
    if (fe <= out.value) out = {edge, fe, false};
  }
  out.at_boundary = out.beta == 0.0 || out.beta == range.high;
  return out;
}

// ---------------------------------------------------------------------------

FeedbackKind CalibrationSet::kind() const {
  if (items.empty()) throw std::invalid_argument("calibration set is empty");
  const auto k = items.front().response.kind();
  for (const auto& it : items)
    if (it.response.kind() != k) throw std::invalid_argument("calibration set mixes feedback kinds");
  return k;
}

BetaEstimate fit_beta_mle(const Mdp& mdp, const CalibrationSet& cal, const BetaRange& range) {
  const auto kind = cal.kind();
  for (const auto& it : cal.items) validate_response(mdp, it.response);

  std::function<double(double)> objective, gradient;
  struct Choice {
    std::vector<double> returns;
    int chosen;
  };
  std::vector<Choice> choices;
  // Demonstrations are grouped by calibration reward so each probe runs one backup per reward.
  std::vector<std::pair<Theta, std::vector<const Trajectory*>>> groups;
  std::map<double, double> memo;
  std::vector<double> table, scratch;

  if (kind == FeedbackKind::Demonstration) {
    for (const auto& it : cal.items) {
      auto g = std::find_if(groups.begin(), groups.end(), [&](const auto& p) { return p.first == it.theta; });
      if (g == groups.end()) {
        groups.push_back({it.theta, {}});
        g = groups.end() - 1;
      }
      g->second.push_back(&std::get<Trajectory>(it.response.choice));
    }
    table.resize(static_cast<std::size_t>(mdp.horizon()) * mdp.num_states() * mdp.num_actions());
    objective = [&](double beta) {
      if (auto m = memo.find(beta); m != memo.end()) return m->second;
      double total = 0.0;
      for (const auto& [theta, demos] : groups) {
        soft_log_policy(mdp, arrival_rewards(mdp, theta), beta, 1.0, table, scratch);
        for (const auto* d : demos) total += demo_log_likelihood(mdp, table, *d);
      }
      return memo[beta] = -total;
    };
  } else {
    for (const auto& it : cal.items)
      choices.push_back({choice_returns(mdp, it.response.query, it.theta), choice_index(it.response)});
    objective = [&](double beta) {
      double total = 0.0;
      for (const auto& c : choices) total += estop_log_likelihood(c.returns, c.chosen, beta);
      return -total;
    };
    gradient = [&, lq = std::vector<double>()](double beta) mutable {
      double g = 0.0;
      for (const auto& c : choices) g += softmax_mean(c.returns, beta, lq) - c.returns[c.chosen];
      return g;
    };
  }

  const auto r = minimize_over_beta(objective, range, gradient);
  return {kind, r.beta, -r.value, 0.0, range.high, r.at_boundary};
}

double kl_to_soft_policy(const Mdp& mdp, const TabularPolicy& pi, std::span<const double> arrival, double beta) {
  const std::size_t n = static_cast<std::size_t>(mdp.horizon()) * mdp.num_states() * mdp.num_actions();
  std::vector<double> log_q(n), scratch;
  soft_log_policy(mdp, arrival, beta, 1.0, log_q, scratch);
  std::vector<double> ratio(n, 0.0);
  const auto& p = pi.data();
  if (p.size() != n) throw std::invalid_argument("policy shape does not match the MDP");
  for (std::size_t j = 0; j < n; ++j)
    if (p[j] > 0.0) ratio[j] = std::log(p[j]) - log_q[j];
  return evaluate_policy(mdp, pi, ratio);
}

BetaEstimate fit_beta_mprojection_demo(const Mdp& mdp, const TabularPolicy& pi, const Theta& theta,
                                       const BetaRange& range) {
  pi.validate();
  const auto arrival = arrival_rewards(mdp, theta);
  const auto r = minimize_over_beta([&](double beta) { return kl_to_soft_policy(mdp, pi, arrival, beta); }, range);
  return {FeedbackKind::Demonstration, r.beta, -r.value, 0.0, range.high, r.at_boundary};
}

BetaEstimate fit_beta_mprojection_choice(std::span<const ChoiceDistribution> designs, FeedbackKind kind,
                                         const BetaRange& range) {
  if (designs.empty()) throw std::invalid_argument("need at least one design");
  bool informative = false;
  for (const auto& d : designs) {
    if (d.probs.size() != d.returns.size() || d.probs.size() < 2)
      throw std::invalid_argument("each design needs matching probs and returns with at least two choices");
    double total = 0.0;
    for (double p : d.probs) {
      if (!(p >= 0.0)) throw std::invalid_argument("probabilities must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("probabilities must sum to one");
    const auto [lo, hi] = std::minmax_element(d.returns.begin(), d.returns.end());
    informative = informative || *hi > *lo;
  }
  if (!informative) throw FlatObjectiveError("all choices have equal returns");

  std::vector<double> lq;
  auto kl = [&](double beta) {
    double total = 0.0;
    for (const auto& d : designs) {
      lq.resize(d.returns.size());
      log_softmax(d.returns, beta, lq);
      for (std::size_t i = 0; i < d.probs.size(); ++i)
        if (d.probs[i] > 0.0) total += d.probs[i] * (std::log(d.probs[i]) - lq[i]);
    }
    return total;
  };
  std::vector<double> target(designs.size());
  for (std::size_t j = 0; j < designs.size(); ++j)
    for (std::size_t i = 0; i < designs[j].probs.size(); ++i) target[j] += designs[j].probs[i] * designs[j].returns[i];
  auto grad = [&](double beta) {
    double g = 0.0;
    for (std::size_t j = 0; j < designs.size(); ++j) g += softmax_mean(designs[j].returns, beta, lq) - target[j];
    return g;
  };
  const auto r = minimize_over_beta(kl, range, grad);
  return {kind, r.beta, -r.value, 0.0, range.high, r.at_boundary};
}

std::vector<BetaEstimate> beta_fits_over_rewards(const Mdp& mdp, const BiasedHumanModel& model,
                                                 std::span<const Theta> thetas, const BetaRange& range) {
  std::vector<BetaEstimate> out;
  out.reserve(thetas.size());
  for (const auto& theta : thetas) {
    const auto pi =
        biased_value_iteration(mdp, theta, model.bias, model.beta[FeedbackKind::Demonstration]).policy();
    out.push_back(fit_beta_mprojection_demo(mdp, pi, theta, range));
  }
  return out;
}

double beta_variance_over_rewards(const Mdp& mdp, const BiasedHumanModel& model, std::span<const Theta> thetas,
                                  const BetaRange& range) {
  if (thetas.size() < 2) throw std::invalid_argument("variance needs at least two rewards");
  const auto fits = beta_fits_over_rewards(mdp, model, thetas, range);
  double mean = 0.0;
  for (const auto& f : fits) mean += f.value;
  mean /= static_cast<double>(fits.size());
  double ss = 0.0;
  for (const auto& f : fits) ss += (f.value - mean) * (f.value - mean);
  return ss / static_cast<double>(fits.size() - 1);
}

std::vector<double> kl_to_soft_policies(const Mdp& mdp, const TabularPolicy& bias_policy,
                                        std::span<const Theta> candidates, double beta) {
  if (candidates.empty()) throw std::invalid_argument("need at least one candidate reward");
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(kl_to_soft_policy(mdp, bias_policy, arrival_rewards(mdp, c), beta));
  return out;
}

}  // namespace rrl
