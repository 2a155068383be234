// Acceptance run: one PASS/FAIL line per headline criterion, computed from scratch.
// Arguments select criteria by number (e.g. `acceptance 1 7`); none runs all of them.
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "propositions.hpp"
#include "rrl/active.hpp"
#include "rrl/experiments.hpp"
#include "rrl/service.hpp"
#include "toy_oracle.hpp"

using namespace rrl;
using namespace rrl::testing;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [miss] " << what << ";";
    }
  }
};

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  return true;
}

const FeedbackKind kKinds[] = {FeedbackKind::Demonstration, FeedbackKind::Comparison, FeedbackKind::EStop};

// The sweep behind criteria 1 to 3, run once.
const SweepResult& boltzmann_sweep() {
  static const SweepResult result = [] {
    auto cfg = default_config(ExperimentKind::BoltzmannSweep);
    cfg.beta_grid = {0.01, 0.1, 1.0, 10.0, 100.0};
    cfg.fixed_betas = {0.02, 5.0};
    return run_boltzmann_sweep(cfg);
  }();
  return result;
}

const SweepResult& bias_sweep() {
  static const SweepResult result = [] {
    auto cfg = default_config(ExperimentKind::BiasSweep);
    BiasSpec both, pessimist, optimist;
    both.myopia_gamma = 0.5;
    both.extremal_alpha = 0.5;
    pessimist.optimism_tau = -40.0;
    optimist.optimism_tau = 40.0;
    cfg.bias_cells = {{both, {FeedbackKind::Demonstration}},
                      {pessimist, {FeedbackKind::Demonstration}},
                      {optimist, {FeedbackKind::Demonstration}}};
    return run_bias_sweep(cfg);
  }();
  return result;
}

Verdict boltzmann_trend() {
  Verdict v;
  const auto& r = boltzmann_sweep();
  for (auto kind : kKinds)
    for (double b : {0.01, 0.1, 1.0, 10.0, 100.0}) {
      const auto cell = cell_label(kind, "beta=" + fmt(b));
      const double fit = r.regret(cell, "fitted").mean, def = r.regret(cell, "default").mean,
                   orc = r.regret(cell, "oracle").mean;
      v.require(fit <= def + 0.02, cell + " fitted " + fmt(fit) + " > default " + fmt(def) + " + 0.02");
      v.require(std::abs(fit - orc) <= 0.1, cell + " |fitted " + fmt(fit) + " - oracle " + fmt(orc) + "| > 0.1");
      if (b == 1.0)
        v.require(bitwise_equal(r.regrets(cell, "default"), r.regrets(cell, "oracle")),
                  cell + " default and oracle differ");
    }
  v.detail << " " << r.trials.size() << " trials over 15 cells";
  return v;
}

Verdict beta_fit_accuracy() {
  Verdict v;
  for (auto kind : kKinds) {
    double err = 0.0;
    int n = 0, flat = 0;
    for (const auto& t : boltzmann_sweep().trials) {
      if (t.kind != kind || t.beta_true != 1.0) continue;
      if (!t.beta_fit) {
        ++flat;
        continue;
      }
      err += std::abs(*t.beta_fit - 1.0);
      ++n;
    }
    const double mean = n ? err / n : 1e300;
    v.require(mean <= 0.15, std::string(to_string(kind)) + " mean |beta_hat - 1| " + fmt(mean) + " > 0.15");
    v.detail << " " << to_string(kind) << " " << fmt(mean) << " (n " << n << ", flat " << flat << ")";
  }
  return v;
}

Verdict overestimation_asymmetry() {
  Verdict v;
  const auto cell = cell_label(FeedbackKind::Demonstration, "beta=0.1");
  const double over = boltzmann_sweep().regret(cell, "fixed-5").mean;
  const double under = boltzmann_sweep().regret(cell, "fixed-0.02").mean;
  v.require(over >= under + 0.1, "gap below 0.1");
  v.detail << " regret at 5: " << fmt(over) << ", at 0.02: " << fmt(under);
  return v;
}

Verdict propositions() {
  Verdict v;
  int p1 = 0;
  for (int k = 0; k < kInstances; ++k) {
    const auto in = make_instance(1000 + k, 4);
    const auto& mdp = in.world.mdp();
    const Theta& star = (*in.grid)[in.truth];
    std::vector<FeedbackResponse> rs;
    for (const auto& q : in.queries) rs.push_back(respond(q, argmax(choice_returns(mdp, q, star))));
    bool all = true;
    for (double beta : {0.1, 1.0, 10.0, 100.0}) {
      const auto post = update(Belief::uniform(in.grid), mdp, rs, BetaMap::uniform(beta));
      const auto& lw = post.log_weights();
      all = all && lw[static_cast<std::size_t>(in.truth)] >= *std::max_element(lw.begin(), lw.end()) - 1e-9;
    }
    p1 += all;
  }

  const auto betas = log_grid(1e-3, 1e3, 61);
  int p2 = 0, used = 0;
  for (int k = 0; used < kInstances; ++k) {
    const auto in = make_instance(5000 + k, 5);
    const auto& mdp = in.world.mdp();
    const Theta& star = (*in.grid)[in.truth];
    Rng rng(9000 + static_cast<std::uint64_t>(k));
    std::vector<FeedbackResponse> rs;
    bool suboptimal = false;
    for (const auto& q : in.queries) {
      const auto r = choice_returns(mdp, q, star);
      std::vector<double> p(r.size());
      const double m = *std::max_element(r.begin(), r.end());
      for (std::size_t i = 0; i < r.size(); ++i) p[i] = std::exp(r[i] - m);
      const int c = sample_index(p, rng);
      suboptimal = suboptimal || r[static_cast<std::size_t>(c)] < m - 1e-9;
      rs.push_back(respond(q, c));
    }
    if (!suboptimal) continue;
    ++used;
    double prev = entropy(update(Belief::uniform(in.grid), mdp, rs, BetaMap::uniform(betas[0])));
    bool monotone = true;
    for (std::size_t i = 1; i < betas.size(); ++i) {
      const double h = entropy(update(Belief::uniform(in.grid), mdp, rs, BetaMap::uniform(betas[i])));
      monotone = monotone && h <= prev + 1e-9;
      prev = h;
    }
    p2 += monotone;
  }

  int p3 = 0;
  used = 0;
  for (int k = 0; used < kInstances; ++k) {
    const auto in = make_instance(20000 + k, 1);
    const auto& mdp = in.world.mdp();
    const auto& q = in.queries.front();
    const auto r = choice_returns(mdp, q, (*in.grid)[in.truth]);
    const double best = *std::max_element(r.begin(), r.end());
    std::vector<int> worse;
    for (std::size_t i = 0; i < r.size(); ++i)
      if (r[i] < best - 1e-9) worse.push_back(static_cast<int>(i));
    if (worse.empty()) continue;
    ++used;
    Rng rng(static_cast<std::uint64_t>(k));
    const int c = worse[rng() % worse.size()];
    const double gap = r[static_cast<std::size_t>(c)] - best;
    const std::vector<FeedbackResponse> rs{respond(q, c)};
    bool bounded = true;
    for (double beta : betas)
      bounded = bounded && total_log_likelihood(mdp, rs, (*in.grid)[in.truth], BetaMap::uniform(beta)) <= beta * gap + 1e-9;
    p3 += bounded;
  }
  v.require(p1 == kInstances, "argmax invariance");
  v.require(p2 == kInstances, "entropy monotonicity");
  v.require(p3 == kInstances, "likelihood bound");
  v.detail << " argmax invariance " << p1 << "/" << kInstances << ", entropy non-increasing " << p2 << "/"
           << kInstances << ", exponential bound " << p3 << "/" << kInstances;
  return v;
}

Verdict multi_bias() {
  Verdict v;
  const auto cell = cell_label(FeedbackKind::Demonstration, "gamma=0.5+alpha=0.5");
  const double def = bias_sweep().regret(cell, "default").mean, fit = bias_sweep().regret(cell, "fitted").mean,
               orc = bias_sweep().regret(cell, "oracle").mean;
  v.require(std::abs(def - 0.37) <= 0.12, "default outside 0.37 +- 0.12");
  v.require(std::abs(fit - 0.11) <= 0.08, "fitted outside 0.11 +- 0.08");
  v.require(std::abs(orc - 0.05) <= 0.10, "oracle outside 0.05 +- 0.10");
  v.detail << " default " << fmt(def) << ", fitted " << fmt(fit) << ", oracle " << fmt(orc);
  return v;
}

Verdict optimism_null() {
  Verdict v;
  for (const char* tau : {"tau=-40", "tau=40"}) {
    const auto cell = cell_label(FeedbackKind::Demonstration, tau);
    const double gap = bias_sweep().regret(cell, "fitted").mean - bias_sweep().regret(cell, "default").mean;
    v.require(std::abs(gap) <= 0.1, std::string(tau) + " gap above 0.1");
    v.detail << " " << tau << " fitted - default " << fmt(gap);
  }
  return v;
}

Verdict toy_crossover() {
  Verdict v;
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> dn(1, 4), dk(0, 6);
  std::uniform_real_distribution<double> u(0.05, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const double r3 = u(rng), r2 = r3 + u(rng), r1 = r2 + u(rng);
    const ToyOracle o{{dn(rng), dk(rng), r1, r2, r3}};
    const double beta = std::exp(std::uniform_real_distribution<double>(std::log(1e-2), std::log(10.0))(rng));
    worst = std::max(worst, std::abs(demo_expected_posterior_entropy(o.p, beta) - o.demo(beta)));
    worst = std::max(worst, std::abs(comparison_expected_posterior_entropy(o.p, beta) - o.comparison(beta)));
  }
  v.require(worst <= 1e-9, "closed forms deviate from enumeration");
  const auto cross = find_crossover_beta({2, 5, 3.0, 2.0, 1.0});
  v.require(cross && *cross >= 0.1 && *cross <= 10.0, "no crossover in [0.1, 10] at N=2, K=5, R=(3,2,1)");
  v.detail << " max enumeration error " << fmt(worst) << " over 60 instances; crossover at N=2, K=5, R=(3,2,1): "
           << (cross ? fmt(*cross) : "none");
  return v;
}

Verdict eig_identity() {
  Verdict v;
  Rng rng(77);
  double worst = 0.0, lowest = 1e300;
  for (int trial = 0; trial < 100; ++trial) {
    const auto world = GridWorld::random(500 + static_cast<std::uint64_t>(trial), 5, 5, 10, 0.1, 0.0);
    const auto& mdp = world.mdp();
    const auto grid = std::make_shared<const RewardGrid>(RewardGrid::make(static_cast<std::uint64_t>(trial), 60));
    std::normal_distribution<double> n(0.0, trial % 2 ? 3.0 : 0.5);
    std::vector<double> lw(60);
    for (auto& x : lw) x = n(rng);
    const Belief belief(grid, lw);
    const double beta = std::pow(10.0, std::uniform_real_distribution<double>(-2, 2)(rng));
    const FeedbackQuery q = trial % 2 ? FeedbackQuery{EStopDesign{random_walk(mdp, rng)}}
                                      : FeedbackQuery{ComparisonDesign{random_walk(mdp, rng), random_walk(mdp, rng)}};
    const double kl = expected_information_gain(mdp, belief, q, BetaMap::uniform(beta));
    const double dh = expected_entropy_reduction(mdp, belief, q, BetaMap::uniform(beta));
    worst = std::max(worst, std::abs(kl - dh));
    lowest = std::min(lowest, kl);
  }
  v.require(worst <= 1e-9, "forms differ by more than 1e-9");
  v.require(lowest >= -1e-12, "negative EIG");
  v.detail << " max |KL - entropy reduction| " << fmt(worst) << ", min EIG " << fmt(lowest) << " over 100 instances";
  return v;
}

Verdict active_ablation() {
  Verdict v;
  auto cfg = default_config(ExperimentKind::ActiveAblation);
  cfg.ablation_settings = {{"main", BetaMap{{0.1, 10.0, 1.0}}, BetaMap::uniform(1.0)}};
  const auto r = run_active_ablation(cfg);
  const auto& cells = AblationResult::cell_names();
  const double best = r.final_regret("main", "correct-select/correct-infer").mean;
  for (const auto& c : cells) {
    const double m = r.final_regret("main", c).mean;
    if (c != "correct-select/correct-infer") v.require(best < m, "correct/correct not below " + c);
    const bool correct_select = c.rfind("correct-select", 0) == 0;
    const auto kind = correct_select ? FeedbackKind::Comparison : FeedbackKind::Demonstration;
    const double frac = r.kind_fraction("main", c, kind);
    v.require(frac >= 0.6, c + " selects " + std::string(to_string(kind)) + " in " + fmt(frac) + " < 0.6");
    v.detail << " " << c << " regret " << fmt(m) << " (" << to_string(kind) << " " << fmt(frac) << ");";
  }
  return v;
}

Verdict m_projection() {
  Verdict v;
  const auto world = GridWorld::random(71, 10, 10, 25, 0.1, 0.0);
  const auto& mdp = world.mdp();
  const Theta theta = normalized({-0.3, 0.8, 0.45, -0.25});
  for (double b0 : {0.1, 1.0, 10.0}) {
    const double fit = fit_beta_mprojection_demo(mdp, soft_value_iteration(mdp, theta, b0).policy(), theta).value;
    v.require(std::abs(fit - b0) <= 1e-3, "demo M-projection misses " + fmt(b0));
    v.detail << " beta0 " << fmt(b0) << " -> " << fit << ";";
  }
  Rng rng(404);
  const double beta_star = 1.5;
  SimulatedHuman human(mdp, {BetaMap::uniform(beta_star), {}, 405});
  CalibrationSet cal;
  std::vector<ChoiceDistribution> exact;
  for (int i = 0; i < 5000; ++i) {
    const auto policy = soft_value_iteration(mdp, random_theta(rng), 1.0).log_policy;
    const int s = std::uniform_int_distribution<int>(0, mdp.num_states() - 2)(rng);
    const FeedbackQuery q{ComparisonDesign{rollout_log_policy(mdp, policy, s, rng), rollout_log_policy(mdp, policy, s, rng)}};
    cal.items.push_back({theta, human.respond(q, theta)});
    const auto r = choice_returns(mdp, q, theta);
    const double pa = std::exp(comparison_log_likelihood(r[0], r[1], Pick::A, beta_star));
    exact.push_back({{pa, 1 - pa}, r});
  }
  const double mle = fit_beta_mle(mdp, cal).value;
  const double proj = fit_beta_mprojection_choice(exact, FeedbackKind::Comparison).value;
  v.require(std::abs(mle - proj) <= 0.1, "sample MLE and M-projection differ by more than 0.1");
  v.detail << " n=5000 comparisons: MLE " << fmt(mle) << ", M-projection " << fmt(proj);
  return v;
}

Verdict service_replay() {
  Verdict v;
  const auto dir = std::filesystem::temp_directory_path() / ("rrl-acceptance-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  int sessions = 0, inference_demos = 0;
  std::map<std::string, Json> exports;
  {
    SessionStore store(dir.string());
    for (int seed = 0; seed < 4; ++seed) {
      const std::string id = "acc" + std::to_string(seed);
      Json cfg = {{"id", id},
                  {"seed", seed},
                  {"world", {{"width", 6}, {"height", 6}, {"horizon", 12}, {"completion_bonus", 10.0}}},
                  {"grid_size", 200},
                  {"calibration",
                   {{"rewards", 2}, {"block_size", 3}, {"kinds", {"demo", "comp", "estop"}},
                    {"order", seed % 2 ? "interleaved" : "scripted"}}},
                  {"inference_rounds", 6},
                  {"active", {{"pool_trajectories", 4}, {"max_demo_starts", 6}, {"demo_outer_draws", 0},
                              {"kinds", {"demo", "comp", "estop"}}}}};
      if (seed == 3) cfg["use_default_beta"] = true;
      store.create(cfg);
      const auto doc = store.export_session(id);
      const auto s = Session::from_json(doc);
      SimulatedHuman human(s->world().mdp(), {BetaMap{{0.5, 3.0, 1.0}}, {}, 100 + static_cast<std::uint64_t>(seed)});
      Rng rng(200 + static_cast<std::uint64_t>(seed));
      const Theta truth = random_theta(rng);
      for (;;) {
        const auto q = store.next_query(id);
        if (q["status"] == "complete") break;
        const auto query = q["query"].get<FeedbackQuery>();
        const Theta theta = q["phase"] == "calibration" ? theta_from_json(q["calibration"]["reward_legend"]) : truth;
        store.submit(id, {{"query_id", q["query_id"]}, {"choice", Json(human.respond(query, theta)).at("choice")}});
      }
      exports[id] = store.export_session(id);
      ++sessions;
    }
  }
  SessionStore reopened(dir.string());
  for (const auto& [id, doc] : exports) {
    for (const auto& e : doc["log"])
      inference_demos += e["phase"] == "inference" && e["response"]["query"]["kind"] == "demo";
    std::vector<double> stored;
    for (const auto& x : doc["belief"]["log_weights"]) stored.push_back(double_from_json(x));
    const auto on_disk = Json::parse(read_file((dir / (id + ".json")).string()));
    v.require(bitwise_equal(replay_belief(doc).log_weights(), stored), id + " replay differs");
    v.require(bitwise_equal(replay_belief(on_disk).log_weights(), stored), id + " replay of the persisted file differs");
    v.require(reopened.export_session(id) == doc, id + " reload differs");
  }
  std::filesystem::remove_all(dir);
  v.detail << " " << sessions << " sessions persisted and replayed (" << inference_demos
           << " inference demonstrations); built without any UI target";
  return v;
}

struct Criterion {
  const char* name;
  Verdict (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {"boltzmann sweep trend", boltzmann_trend},
      {"beta fit accuracy", beta_fit_accuracy},
      {"overestimation asymmetry", overestimation_asymmetry},
      {"proposition property suite", propositions},
      {"multiple-bias regret", multi_bias},
      {"optimism null result", optimism_null},
      {"toy crossover", toy_crossover},
      {"EIG identity", eig_identity},
      {"active ablation", active_ablation},
      {"M-projection consistency", m_projection},
      {"service replay", service_replay},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (int i = 0; i < static_cast<int>(std::size(criteria)); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << " error: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].name << ":" << v.detail.str()
              << " (" << fmt(secs) << " s)" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
