#include "rrl/feedback.hpp"

#include <type_traits>

namespace rrl {

std::string_view to_string(FeedbackKind kind) {
  switch (kind) {
    case FeedbackKind::Demonstration: return "demo";
    case FeedbackKind::Comparison: return "comp";
    case FeedbackKind::EStop: return "estop";
  }
  return "?";
}

FeedbackKind feedback_kind_from_string(std::string_view name) {
  if (name == "demo" || name == "demonstration") return FeedbackKind::Demonstration;
  if (name == "comp" || name == "comparison") return FeedbackKind::Comparison;
  if (name == "estop" || name == "e-stop") return FeedbackKind::EStop;
  throw std::invalid_argument("unknown feedback kind: " + std::string(name));
}

void BiasSpec::validate() const {
  if (myopia_gamma && !(*myopia_gamma >= 0.0 && *myopia_gamma <= 1.0))
    throw std::invalid_argument("myopia gamma must lie in [0,1]");
  if (extremal_alpha && !(*extremal_alpha >= 0.0 && *extremal_alpha <= 1.0))
    throw std::invalid_argument("extremal alpha must lie in [0,1]");
  if (optimism_tau && !std::isfinite(*optimism_tau)) throw std::invalid_argument("optimism tau must be finite");
}

void validate_query(const Mdp& mdp, const FeedbackQuery& query) {
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, DemoDesign>) {
          if (d.start_state < 0 || d.start_state >= mdp.num_states())
            throw std::invalid_argument("demonstration start state out of range");
          if (mdp.is_absorbing(d.start_state)) throw std::invalid_argument("demonstration cannot start in the goal");
        } else if constexpr (std::is_same_v<D, ComparisonDesign>) {
          validate_trajectory(mdp, d.a);
          validate_trajectory(mdp, d.b);
        } else {
          validate_trajectory(mdp, d.traj);
        }
      },
      query.design);
}

void validate_response(const Mdp& mdp, const FeedbackResponse& resp) {
  validate_query(mdp, resp.query);
  if (resp.choice.index() != resp.query.design.index())
    throw std::invalid_argument("response choice does not match the query kind");
  if (const auto* traj = std::get_if<Trajectory>(&resp.choice)) {
    validate_trajectory(mdp, *traj);
    if (traj->steps.front().state != std::get<DemoDesign>(resp.query.design).start_state)
      throw std::invalid_argument("demonstration does not start at the requested state");
  } else if (const auto* stop = std::get_if<StopTime>(&resp.choice)) {
    const auto& traj = std::get<EStopDesign>(resp.query.design).traj;
    if (stop->t < 0 || stop->t > traj.num_actions()) throw std::invalid_argument("stopping time out of range");
  }
}

int choice_set_size(const Mdp& mdp, const FeedbackQuery& query) {
  switch (query.kind()) {
    case FeedbackKind::Demonstration: return mdp.num_actions();
    case FeedbackKind::Comparison: return 2;
    case FeedbackKind::EStop: return std::get<EStopDesign>(query.design).traj.num_actions() + 1;
  }
  return 0;
}

Trajectory grounding(const FeedbackResponse& resp) {
  switch (resp.kind()) {
    case FeedbackKind::Demonstration: return std::get<Trajectory>(resp.choice);
    case FeedbackKind::Comparison: {
      const auto& d = std::get<ComparisonDesign>(resp.query.design);
      return std::get<Pick>(resp.choice) == Pick::A ? d.a : d.b;
    }
    case FeedbackKind::EStop: {
      const auto& traj = std::get<EStopDesign>(resp.query.design).traj;
      const int t = std::get<StopTime>(resp.choice).t;
      Trajectory prefix;
      prefix.steps.assign(traj.steps.begin(), traj.steps.begin() + t + 1);
      prefix.steps.back().action = kNoAction;
      return prefix;
    }
  }
  throw std::logic_error("unreachable");
}

double demo_log_likelihood(const Mdp& mdp, std::span<const double> log_policy, const Trajectory& traj) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  double total = 0.0;
  for (int t = 0; t < traj.num_actions(); ++t) {
    const auto& st = traj.steps[static_cast<std::size_t>(t)];
    if (st.action < 0 || st.action >= A) throw std::invalid_argument("action outside the action set");
    total += log_policy[(static_cast<std::size_t>(t) * S + st.state) * A + st.action];
  }
  return total;
}

double demo_log_likelihood(const Mdp& mdp, const Trajectory& traj, const Theta& theta, double beta) {
  validate_trajectory(mdp, traj);
  const auto sol = soft_value_iteration(mdp, theta, beta);
  return demo_log_likelihood(mdp, sol.log_policy, traj);
}

double comparison_log_likelihood(double return_a, double return_b, Pick choice, double beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be non-negative");
  const double chosen = choice == Pick::A ? return_a : return_b;
  const double other = choice == Pick::A ? return_b : return_a;
  // log sigmoid(beta * (chosen - other)), stable for large arguments.
  const double z = beta * (chosen - other);
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double comparison_log_likelihood(const Mdp& mdp, const ComparisonDesign& design, Pick choice, const Theta& theta,
                                 double beta, double discount) {
  return comparison_log_likelihood(trajectory_return(mdp, design.a, theta, discount),
                                   trajectory_return(mdp, design.b, theta, discount), choice, beta);
}

double comparison_likelihood(const Mdp& mdp, const ComparisonDesign& design, Pick choice, const Theta& theta,
                             double beta) {
  return std::exp(comparison_log_likelihood(mdp, design, choice, theta, beta));
}

double estop_log_likelihood(std::span<const double> prefix_returns, int t, double beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be non-negative");
  if (t < 0 || static_cast<std::size_t>(t) >= prefix_returns.size())
    throw std::invalid_argument("stopping time out of range");
  double m = kNegInf;
  for (double r : prefix_returns) m = std::max(m, beta * r);
  double z = 0.0;
  for (double r : prefix_returns) z += std::exp(beta * r - m);
  return beta * prefix_returns[static_cast<std::size_t>(t)] - m - std::log(z);
}

double estop_log_likelihood(const Mdp& mdp, const Trajectory& traj, int t, const Theta& theta, double beta,
                            double discount) {
  const auto prefixes = prefix_features(mdp, traj, discount);
  std::vector<double> returns(prefixes.size());
  for (std::size_t k = 0; k < prefixes.size(); ++k) returns[k] = prefixes[k].value(theta);
  return estop_log_likelihood(returns, t, beta);
}

double estop_likelihood(const Mdp& mdp, const Trajectory& traj, int t, const Theta& theta, double beta) {
  return std::exp(estop_log_likelihood(mdp, traj, t, theta, beta));
}

double response_log_likelihood(const Mdp& mdp, const FeedbackResponse& resp, const Theta& theta, double beta) {
  switch (resp.kind()) {
    case FeedbackKind::Demonstration:
      return demo_log_likelihood(mdp, std::get<Trajectory>(resp.choice), theta, beta);
    case FeedbackKind::Comparison:
      return comparison_log_likelihood(mdp, std::get<ComparisonDesign>(resp.query.design),
                                       std::get<Pick>(resp.choice), theta, beta);
    case FeedbackKind::EStop:
      return estop_log_likelihood(mdp, std::get<EStopDesign>(resp.query.design).traj,
                                  std::get<StopTime>(resp.choice).t, theta, beta);
  }
  throw std::logic_error("unreachable");
}

double total_log_likelihood(const Mdp& mdp, std::span<const FeedbackResponse> responses, const Theta& theta,
                            const BetaMap& beta) {
  double total = 0.0;
  std::optional<SoftSolution> soft;
  for (const auto& resp : responses) {
    if (resp.kind() == FeedbackKind::Demonstration) {
      if (!soft) soft = soft_value_iteration(mdp, theta, beta[FeedbackKind::Demonstration]);
      total += demo_log_likelihood(mdp, soft->log_policy, std::get<Trajectory>(resp.choice));
    } else {
      total += response_log_likelihood(mdp, resp, theta, beta[resp.kind()]);
    }
  }
  return total;
}

std::vector<double> choice_returns(const Mdp& mdp, const FeedbackQuery& query, const Theta& theta,
                                   double discount) {
  if (const auto* c = std::get_if<ComparisonDesign>(&query.design))
    return {trajectory_return(mdp, c->a, theta, discount), trajectory_return(mdp, c->b, theta, discount)};
  if (const auto* e = std::get_if<EStopDesign>(&query.design)) {
    const auto prefixes = prefix_features(mdp, e->traj, discount);
    std::vector<double> out(prefixes.size());
    for (std::size_t k = 0; k < prefixes.size(); ++k) out[k] = prefixes[k].value(theta);
    return out;
  }
  throw std::invalid_argument("choice_returns needs a comparison or e-stop design");
}

int choice_index(const FeedbackResponse& resp) {
  if (const auto* p = std::get_if<Pick>(&resp.choice)) return static_cast<int>(*p);
  if (const auto* t = std::get_if<StopTime>(&resp.choice)) return t->t;
  throw std::invalid_argument("demonstrations have no scalar choice index");
}

}  // namespace rrl
