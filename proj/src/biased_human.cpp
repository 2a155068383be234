#include "rrl/biased_human.hpp"

#include <algorithm>

namespace rrl {

namespace {

void biased_backward(const Mdp& mdp, std::span<const double> arrival, const BiasSpec& bias, double beta,
                     std::span<double> q_out, std::span<double> logpi_out, std::vector<double>& v) {
  const int S = mdp.num_states(), A = mdp.num_actions(), T = mdp.horizon();
  const auto SA = static_cast<std::size_t>(S) * A;
  const double g = bias.discount();
  const bool extremal = bias.extremal_alpha.has_value();
  const double alpha = bias.extremal_alpha.value_or(0.0);
  const bool optimism = bias.optimism_tau.has_value() && *bias.optimism_tau != 0.0;
  const double tau = bias.optimism_tau.value_or(0.0);
  const double log_uniform = -std::log(static_cast<double>(A));

  v.assign(static_cast<std::size_t>(T + 1) * S, 0.0);
  std::vector<double> q(static_cast<std::size_t>(A));
  std::vector<double> logw;
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
        const auto succ = mdp.successors(s, a);
        auto outcome = [&](const Transition& tr) {
          const double r = arrival[tr.next];
          const double cont = g * v_next[tr.next];
          return extremal ? std::max(r, (1.0 - alpha) * r + alpha * cont) : r + cont;
        };
        double acc = 0.0;
        if (optimism) {
          // Reweighted beliefs about the dynamics, normalized per (s,a).
          logw.resize(succ.size());
          double m = kNegInf;
          for (std::size_t i = 0; i < succ.size(); ++i) {
            logw[i] = std::log(succ[i].prob) + tau * (arrival[succ[i].next] + g * v_next[succ[i].next]);
            m = std::max(m, logw[i]);
          }
          double z = 0.0;
          for (double lw : logw) z += std::exp(lw - m);
          const double lz = m + std::log(z);
          for (std::size_t i = 0; i < succ.size(); ++i) acc += std::exp(logw[i] - lz) * outcome(succ[i]);
        } else {
          for (const auto& tr : succ) acc += tr.prob * outcome(tr);
        }
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

bool plain_soft(const BiasSpec& bias) {
  return !bias.extremal_alpha && (!bias.optimism_tau || *bias.optimism_tau == 0.0);
}

}  // namespace

SoftSolution biased_value_iteration(const Mdp& mdp, std::span<const double> arrival, const BiasSpec& bias,
                                    double beta) {
  bias.validate();
  if (plain_soft(bias)) return soft_value_iteration(mdp, arrival, beta, bias.discount());
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be finite and non-negative");
  SoftSolution sol;
  sol.horizon = mdp.horizon();
  sol.num_states = mdp.num_states();
  sol.num_actions = mdp.num_actions();
  const auto n = static_cast<std::size_t>(sol.horizon) * sol.num_states * sol.num_actions;
  sol.q.assign(n, 0.0);
  sol.log_policy.assign(n, 0.0);
  biased_backward(mdp, arrival, bias, beta, sol.q, sol.log_policy, sol.v);
  return sol;
}

SoftSolution biased_value_iteration(const Mdp& mdp, const Theta& theta, const BiasSpec& bias, double beta) {
  return biased_value_iteration(mdp, arrival_rewards(mdp, theta), bias, beta);
}

void model_log_policy(const Mdp& mdp, std::span<const double> arrival, const BiasSpec& bias, double beta,
                      std::span<double> out, std::vector<double>& scratch) {
  if (plain_soft(bias)) {
    soft_log_policy(mdp, arrival, beta, bias.discount(), out, scratch);
    return;
  }
  biased_backward(mdp, arrival, bias, beta, {}, out, scratch);
}

std::vector<double> choice_distribution(const Mdp& mdp, const ObservationModel& model, const FeedbackQuery& query,
                                        const Theta& theta) {
  const double beta = model.beta[query.kind()];
  if (const auto* d = std::get_if<DemoDesign>(&query.design)) {
    const auto sol = biased_value_iteration(mdp, theta, model.bias, beta);
    std::vector<double> probs(static_cast<std::size_t>(mdp.num_actions()));
    for (int a = 0; a < mdp.num_actions(); ++a) probs[a] = std::exp(sol.log_pi(0, d->start_state, a));
    return probs;
  }
  const auto returns = choice_returns(mdp, query, theta, model.bias.discount());
  auto probs = log_softmax(returns, beta);
  for (auto& p : probs) p = std::exp(p);
  return probs;
}

double model_log_likelihood(const Mdp& mdp, const ObservationModel& model, const FeedbackResponse& resp,
                            const Theta& theta) {
  const double beta = model.beta[resp.kind()];
  if (resp.kind() == FeedbackKind::Demonstration) {
    const auto sol = biased_value_iteration(mdp, theta, model.bias, beta);
    return demo_log_likelihood(mdp, sol.log_policy, std::get<Trajectory>(resp.choice));
  }
  const auto returns = choice_returns(mdp, resp.query, theta, model.bias.discount());
  if (resp.kind() == FeedbackKind::Comparison)
    return comparison_log_likelihood(returns[0], returns[1], std::get<Pick>(resp.choice), beta);
  return estop_log_likelihood(returns, std::get<StopTime>(resp.choice).t, beta);
}

// ---------------------------------------------------------------------------

SimulatedHuman::SimulatedHuman(const Mdp& mdp, BiasedHumanModel model)
    : mdp_(&mdp), model_(model), rng_(model.seed) {
  model_.bias.validate();
  for (double b : model_.beta.values)
    if (!(b >= 0.0)) throw std::invalid_argument("beta must be non-negative");
}

const std::vector<double>& SimulatedHuman::demo_policy(const Theta& theta) {
  if (!cached_theta_ || *cached_theta_ != theta) {
    cached_policy_ =
        biased_value_iteration(*mdp_, theta, model_.bias, model_.beta[FeedbackKind::Demonstration]).log_policy;
    cached_theta_ = theta;
  }
  return cached_policy_;
}

FeedbackResponse SimulatedHuman::respond(const FeedbackQuery& query, const Theta& theta_true) {
  FeedbackResponse resp{query, Pick::A};
  if (const auto* d = std::get_if<DemoDesign>(&query.design)) {
    resp.choice = rollout_log_policy(*mdp_, demo_policy(theta_true), d->start_state, rng_);
    return resp;
  }
  const auto probs = choice_distribution(*mdp_, model_.observation_model(), query, theta_true);
  const int c = sample_index(probs, rng_);
  if (query.kind() == FeedbackKind::Comparison)
    resp.choice = static_cast<Pick>(c);
  else
    resp.choice = StopTime{c};
  return resp;
}

std::vector<double> SimulatedHuman::empirical_choice_distribution(const FeedbackQuery& query,
                                                                  const Theta& theta_true, int n) {
  if (n < 1) throw std::invalid_argument("need at least one sample");
  std::vector<double> freq(static_cast<std::size_t>(choice_set_size(*mdp_, query)), 0.0);
  if (const auto* d = std::get_if<DemoDesign>(&query.design)) {
    const auto& lp = demo_policy(theta_true);
    const int A = mdp_->num_actions();
    std::vector<double> probs(static_cast<std::size_t>(A));
    for (int a = 0; a < A; ++a) probs[a] = std::exp(lp[static_cast<std::size_t>(d->start_state) * A + a]);
    for (int i = 0; i < n; ++i) freq[static_cast<std::size_t>(sample_index(probs, rng_))] += 1.0;
  } else {
    const auto probs = choice_distribution(*mdp_, model_.observation_model(), query, theta_true);
    for (int i = 0; i < n; ++i) freq[static_cast<std::size_t>(sample_index(probs, rng_))] += 1.0;
  }
  for (auto& f : freq) f /= n;
  return freq;
}

}  // namespace rrl
