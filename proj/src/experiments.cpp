#include "rrl/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <set>

namespace rrl {

namespace {

constexpr std::array<std::pair<ExperimentKind, std::string_view>, 5> kExperimentNames{{
    {ExperimentKind::BoltzmannSweep, "boltzmann-sweep"},
    {ExperimentKind::BiasSweep, "bias-sweep"},
    {ExperimentKind::ActiveAblation, "active-ablation"},
    {ExperimentKind::Diagnostics, "diagnostics"},
    {ExperimentKind::ToyCrossover, "toy-crossover"},
}};

std::vector<std::uint64_t> seed_range(std::uint64_t n) {
  std::vector<std::uint64_t> out(n);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

std::vector<double> log_grid(double low, double high, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(std::exp(std::log(low) + (std::log(high) - std::log(low)) * i / (n - 1)));
  return out;
}

BiasSpec myopia(double g) {
  BiasSpec b;
  b.myopia_gamma = g;
  return b;
}
BiasSpec extremal(double a) {
  BiasSpec b;
  b.extremal_alpha = a;
  return b;
}
BiasSpec optimism(double t) {
  BiasSpec b;
  b.optimism_tau = t;
  return b;
}

const std::vector<FeedbackKind> kAllKinds = {FeedbackKind::Demonstration, FeedbackKind::Comparison,
                                             FeedbackKind::EStop};

std::string fixed_method(double beta) { return "fixed-" + format_double(beta); }

// Stream tags; changing any of these changes every derived number.
enum Stream : std::uint64_t {
  kTruth = 1,
  kCalibrationRewards = 2,
  kDesigns = 10,
  kHuman = 20,
  kActive = 30,
  kDiagnostics = 40,
};

std::uint64_t trial_base(std::uint64_t root, std::uint64_t run, std::uint64_t reward) {
  return derive_seed(derive_seed(root, run), reward);
}

int draw_grid_index(std::uint64_t seed, int grid_size) {
  Rng rng(seed);
  return std::uniform_int_distribution<int>(0, grid_size - 1)(rng);
}

}  // namespace

std::string_view to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kExperimentNames)
    if (k == kind) return name;
  throw std::invalid_argument("unknown experiment kind");
}

ExperimentKind experiment_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kExperimentNames)
    if (n == name) return k;
  throw std::invalid_argument("unknown experiment kind '" + std::string(name) + "'");
}

GridWorld WorldConfig::make(std::uint64_t run_seed) const {
  return GridWorld::random(derive_seed(seed, run_seed), width, height, horizon, slip, completion_bonus);
}

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (world.width < 2 || world.height < 2 || world.horizon < 1) fail("world needs width, height >= 2 and horizon >= 1");
  if (!(world.slip >= 0.0 && world.slip <= 1.0)) fail("slip must lie in [0,1]");
  if (grid_size < 1) fail("grid_size must be positive");
  if (run_seeds.empty()) fail("run_seeds must not be empty");
  for (double b : beta_grid)
    if (!(b >= 0.0) || !std::isfinite(b)) fail("beta_grid values must be finite and non-negative");
  for (double b : fixed_betas)
    if (!(b >= 0.0) || !std::isfinite(b)) fail("fixed_betas must be finite and non-negative");
  if (!(default_beta >= 0.0) || !(responder_beta >= 0.0) || !(design_beta >= 0.0)) fail("betas must be non-negative");
  if (!(beta_range.low > 0.0) || !(beta_range.high > beta_range.low) || beta_range.grid_points < 2)
    fail("beta_range needs 0 < low < high and at least two grid points");
  for (const auto& m : methods)
    if (m != "fitted" && m != "default" && m != "oracle") fail("unknown method '" + m + "'");
  for (const auto& c : bias_cells) c.bias.validate();
  for (const auto& b : diagnostic_biases) b.validate();
  toy.validate();

  switch (kind) {
    case ExperimentKind::BoltzmannSweep:
    case ExperimentKind::BiasSweep:
      if (reward_seeds.empty()) fail("reward_seeds must not be empty");
      if (calibration_rewards < 1 || calibration_queries < 1 || inference_queries < 1)
        fail("calibration and inference counts must be positive");
      if (methods.empty() && fixed_betas.empty()) fail("no inference methods selected");
      if (kind == ExperimentKind::BoltzmannSweep && (beta_grid.empty() || kinds.empty()))
        fail("boltzmann sweep needs beta_grid and kinds");
      if (kind == ExperimentKind::BiasSweep && bias_cells.empty()) fail("bias sweep needs bias_cells");
      break;
    case ExperimentKind::ActiveAblation:
      if (ablation_settings.empty()) fail("active ablation needs ablation_settings");
      if (active_rounds < 1) fail("active_rounds must be positive");
      active.validate();
      break;
    case ExperimentKind::Diagnostics:
      if (diagnostic_biases.empty()) fail("diagnostics needs diagnostic_biases");
      if (diagnostic_rewards < 2 || kl_candidates < 1) fail("diagnostics needs >= 2 rewards and >= 1 KL candidate");
      if (diagnostic_rewards > grid_size || kl_candidates >= grid_size) fail("diagnostics sample exceeds the grid");
      break;
    case ExperimentKind::ToyCrossover:
      if (toy_betas.empty()) fail("toy crossover needs toy_betas");
      break;
  }
}

ExperimentConfig default_config(ExperimentKind kind, bool full_scale) {
  ExperimentConfig c;
  c.kind = kind;
  c.reward_seeds = seed_range(10);
  c.run_seeds = seed_range(2);
  c.kinds = kAllKinds;
  c.methods = {"fitted", "default", "oracle"};
  c.beta_grid = full_scale ? std::vector<double>{0.001, 0.01, 0.03, 0.1, 0.3, 1, 3, 10, 30, 100, 1000}
                            : std::vector<double>{0.01, 0.1, 0.3, 1, 3, 10, 100};

  const std::vector<double> gammas = full_scale ? std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}
                                                 : std::vector<double>{0.1, 0.5, 0.9};
  const std::vector<double> alphas = full_scale ? std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}
                                                 : std::vector<double>{0.1, 0.5, 0.9};
  const std::vector<double> taus = full_scale ? std::vector<double>{-40, -20, -10, -4, -1, 1, 4, 10, 20, 40}
                                               : std::vector<double>{-40, -4, 4, 40};
  c.bias_cells.push_back({BiasSpec{}, kAllKinds});
  for (double g : gammas) c.bias_cells.push_back({myopia(g), kAllKinds});
  for (double a : alphas) c.bias_cells.push_back({extremal(a), {FeedbackKind::Demonstration}});
  for (double t : taus) c.bias_cells.push_back({optimism(t), {FeedbackKind::Demonstration}});
  BiasSpec both = myopia(0.5);
  both.extremal_alpha = 0.5;
  c.bias_cells.push_back({both, {FeedbackKind::Demonstration}});

  c.ablation_settings = {
      {"comparisons-most-rational", BetaMap{{0.1, 10.0, 1.0}}, BetaMap::uniform(1.0)},
      {"overestimated-demos-most-rational", BetaMap{{1.0, 0.5, 0.1}}, BetaMap::uniform(10.0)},
      {"overestimated-comparisons-most-rational", BetaMap{{0.5, 1.0, 0.1}}, BetaMap::uniform(10.0)},
  };
  c.active.demo_outer_draws = 200;
  if (kind == ExperimentKind::ActiveAblation) c.run_seeds = seed_range(20);

  for (double g : {0.1, 0.5, 0.9, 1.0}) c.diagnostic_biases.push_back(myopia(g));
  for (double a : {0.1, 0.5, 0.9}) c.diagnostic_biases.push_back(extremal(a));
  for (double t : {-40.0, -4.0, 4.0, 40.0}) c.diagnostic_biases.push_back(optimism(t));
  if (full_scale) {
    c.diagnostic_rewards = c.grid_size;
    c.kl_candidates = c.grid_size - 1;
  }

  c.toy_betas = log_grid(1e-3, 1e3, full_scale ? 241 : 61);
  return c;
}

namespace {

Json kinds_to_json(const std::vector<FeedbackKind>& kinds) {
  Json out = Json::array();
  for (auto k : kinds) out.push_back(std::string(to_string(k)));
  return out;
}

std::vector<FeedbackKind> kinds_from_json(const Json& j) {
  std::vector<FeedbackKind> out;
  for (const auto& k : j) out.push_back(feedback_kind_from_string(k.get<std::string>()));
  return out;
}

// Every key in `patch` must exist in `base`; objects are checked recursively.
void check_known_keys(const Json& base, const Json& patch, const std::string& path) {
  if (!patch.is_object()) throw std::invalid_argument("config" + path + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw std::invalid_argument("unknown config field '" + (path + "." + key).substr(1) + "'");
    const auto& b = base.at(key);
    if (b.is_object() && key != "active" && !b.empty()) check_known_keys(b, value, path + "." + key);
  }
}

}  // namespace

Json config_to_json(const ExperimentConfig& c) {
  Json bias_cells = Json::array();
  for (const auto& cell : c.bias_cells) bias_cells.push_back({{"bias", cell.bias}, {"kinds", kinds_to_json(cell.kinds)}});
  Json settings = Json::array();
  for (const auto& s : c.ablation_settings)
    settings.push_back({{"name", s.name}, {"truth", s.truth}, {"default_beta", s.default_beta}});
  Json diag = Json::array();
  for (const auto& b : c.diagnostic_biases) diag.push_back(b);
  return {
      {"kind", std::string(to_string(c.kind))},
      {"seed", c.seed},
      {"world",
       {{"width", c.world.width},
        {"height", c.world.height},
        {"horizon", c.world.horizon},
        {"slip", c.world.slip},
        {"completion_bonus", c.world.completion_bonus},
        {"seed", c.world.seed}}},
      {"grid_seed", c.grid_seed},
      {"grid_size", c.grid_size},
      {"reward_seeds", c.reward_seeds},
      {"run_seeds", c.run_seeds},
      {"calibration_rewards", c.calibration_rewards},
      {"calibration_queries", c.calibration_queries},
      {"inference_queries", c.inference_queries},
      {"design_beta", c.design_beta},
      {"kinds", kinds_to_json(c.kinds)},
      {"methods", c.methods},
      {"default_beta", c.default_beta},
      {"fixed_betas", c.fixed_betas},
      {"beta_range", {{"low", c.beta_range.low}, {"high", c.beta_range.high}, {"grid_points", c.beta_range.grid_points}}},
      {"beta_grid", c.beta_grid},
      {"responder_beta", c.responder_beta},
      {"bias_cells", bias_cells},
      {"ablation_settings", settings},
      {"active_rounds", c.active_rounds},
      {"active", active_config_to_json(c.active)},
      {"diagnostic_biases", diag},
      {"diagnostic_rewards", c.diagnostic_rewards},
      {"kl_candidates", c.kl_candidates},
      {"toy", {{"n", c.toy.n}, {"k", c.toy.k}, {"r1", c.toy.r1}, {"r2", c.toy.r2}, {"r3", c.toy.r3}}},
      {"toy_betas", c.toy_betas},
      {"crossover",
       {{"low", c.crossover.low},
        {"high", c.crossover.high},
        {"scan_points", c.crossover.scan_points},
        {"iterations", c.crossover.iterations}}},
  };
}

ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  const auto kind =
      j.contains("kind") ? experiment_kind_from_string(j.at("kind").get<std::string>()) : ExperimentKind::BoltzmannSweep;
  const auto base = config_to_json(default_config(kind));
  check_known_keys(base, j, "");
  Json m = base;
  m.merge_patch(j);
  // merge_patch merges nested objects key by key; the active block is parsed from the patch on top of the base.
  ExperimentConfig c;
  try {
    c.kind = kind;
    c.seed = m.at("seed").get<std::uint64_t>();
    const auto& w = m.at("world");
    c.world = {w.at("width").get<int>(),       w.at("height").get<int>(), w.at("horizon").get<int>(),
               w.at("slip").get<double>(),     w.at("completion_bonus").get<double>(),
               w.at("seed").get<std::uint64_t>()};
    c.grid_seed = m.at("grid_seed").get<std::uint64_t>();
    c.grid_size = m.at("grid_size").get<int>();
    c.reward_seeds = m.at("reward_seeds").get<std::vector<std::uint64_t>>();
    c.run_seeds = m.at("run_seeds").get<std::vector<std::uint64_t>>();
    c.calibration_rewards = m.at("calibration_rewards").get<int>();
    c.calibration_queries = m.at("calibration_queries").get<int>();
    c.inference_queries = m.at("inference_queries").get<int>();
    c.design_beta = m.at("design_beta").get<double>();
    c.kinds = kinds_from_json(m.at("kinds"));
    c.methods = m.at("methods").get<std::vector<std::string>>();
    c.default_beta = m.at("default_beta").get<double>();
    c.fixed_betas = m.at("fixed_betas").get<std::vector<double>>();
    const auto& br = m.at("beta_range");
    c.beta_range = {br.at("low").get<double>(), br.at("high").get<double>(), br.at("grid_points").get<int>()};
    c.beta_grid = m.at("beta_grid").get<std::vector<double>>();
    c.responder_beta = m.at("responder_beta").get<double>();
    for (const auto& cell : m.at("bias_cells")) {
      for (const auto& [key, v] : cell.items())
        if (key != "bias" && key != "kinds") throw std::invalid_argument("unknown bias cell field '" + key + "'");
      c.bias_cells.push_back({cell.at("bias").get<BiasSpec>(), kinds_from_json(cell.at("kinds"))});
    }
    for (const auto& s : m.at("ablation_settings")) {
      for (const auto& [key, v] : s.items())
        if (key != "name" && key != "truth" && key != "default_beta")
          throw std::invalid_argument("unknown ablation setting field '" + key + "'");
      c.ablation_settings.push_back(
          {s.at("name").get<std::string>(), s.at("truth").get<BetaMap>(), s.at("default_beta").get<BetaMap>()});
    }
    c.active_rounds = m.at("active_rounds").get<int>();
    c.active = active_config_from_json(m.at("active"));
    for (const auto& b : m.at("diagnostic_biases")) c.diagnostic_biases.push_back(b.get<BiasSpec>());
    c.diagnostic_rewards = m.at("diagnostic_rewards").get<int>();
    c.kl_candidates = m.at("kl_candidates").get<int>();
    const auto& t = m.at("toy");
    c.toy = {t.at("n").get<int>(), t.at("k").get<int>(), t.at("r1").get<double>(), t.at("r2").get<double>(),
             t.at("r3").get<double>()};
    c.toy_betas = m.at("toy_betas").get<std::vector<double>>();
    const auto& x = m.at("crossover");
    c.crossover = {x.at("low").get<double>(), x.at("high").get<double>(), x.at("scan_points").get<int>(),
                   x.at("iterations").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

Json apply_overrides(Json j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    Json* node = &j;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw std::invalid_argument("override '" + o + "' has an empty path segment");
      const bool index = node->is_array() && std::all_of(part.begin(), part.end(), ::isdigit);
      if (dot == std::string::npos) {
        if (index) node->at(std::stoul(part)) = value;
        else (*node)[part] = value;
        break;
      }
      node = index ? &node->at(std::stoul(part)) : &(*node)[part];
      start = dot + 1;
    }
  }
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : config_to_json(cfg).dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Statistics and lookups

Stat mean_sem(std::span<const double> xs) {
  Stat s;
  s.n = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sem = std::sqrt(ss / (s.n - 1) / s.n);
  }
  return s;
}

const MethodOutcome& Trial::outcome(std::string_view method) const {
  for (const auto& o : outcomes)
    if (o.method == method) return o;
  throw std::out_of_range("trial has no method '" + std::string(method) + "'");
}

std::vector<std::string> SweepResult::cells() const {
  std::vector<std::string> out;
  for (const auto& t : trials)
    if (std::find(out.begin(), out.end(), t.cell) == out.end()) out.push_back(t.cell);
  return out;
}

std::vector<double> SweepResult::regrets(std::string_view cell, std::string_view method) const {
  std::vector<double> out;
  for (const auto& t : trials)
    if (t.cell == cell) out.push_back(t.outcome(method).regret);
  return out;
}

Stat SweepResult::regret(std::string_view cell, std::string_view method) const {
  const auto xs = regrets(cell, method);
  if (xs.empty()) throw std::out_of_range("no trials in cell '" + std::string(cell) + "'");
  return mean_sem(xs);
}

Stat SweepResult::mse(std::string_view cell, std::string_view method) const {
  std::vector<double> xs;
  for (const auto& t : trials)
    if (t.cell == cell) xs.push_back(t.outcome(method).mse);
  if (xs.empty()) throw std::out_of_range("no trials in cell '" + std::string(cell) + "'");
  return mean_sem(xs);
}

std::string cell_label(FeedbackKind kind, std::string_view setting) {
  return std::string(to_string(kind)) + "/" + std::string(setting);
}

std::string bias_label(const BiasSpec& bias) {
  std::vector<std::string> parts;
  if (bias.myopia_gamma) parts.push_back("gamma=" + format_double(*bias.myopia_gamma));
  if (bias.extremal_alpha) parts.push_back("alpha=" + format_double(*bias.extremal_alpha));
  if (bias.optimism_tau) parts.push_back("tau=" + format_double(*bias.optimism_tau));
  if (parts.empty()) return "none";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
  return out;
}

// ---------------------------------------------------------------------------
// Single-kind sweeps

namespace {

struct CellSpec {
  std::string label;
  FeedbackKind kind;
  double beta_true;
  BiasSpec bias;
};

// Worlds and full-grid demonstration banks shared across the trials of a sweep.
class SweepContext {
 public:
  explicit SweepContext(const ExperimentConfig& cfg)
      : cfg_(cfg), grid_(std::make_shared<const RewardGrid>(RewardGrid::make(cfg.grid_seed, cfg.grid_size))) {
    sticky_.insert(cfg.default_beta);
    for (double b : cfg.fixed_betas) sticky_.insert(b);
  }

  const std::shared_ptr<const RewardGrid>& grid() const { return grid_; }

  const GridWorld& world(std::uint64_t run) {
    auto it = worlds_.find(run);
    if (it == worlds_.end()) it = worlds_.emplace(run, std::make_unique<GridWorld>(cfg_.world.make(run))).first;
    return *it->second;
  }

  const PolicyBank& bank(std::uint64_t run, double beta, const BiasSpec& bias) {
    const auto key = std::make_tuple(run, beta, bias_label(bias));
    auto it = banks_.find(key);
    if (it == banks_.end()) {
      std::vector<int> all(static_cast<std::size_t>(grid_->size()));
      std::iota(all.begin(), all.end(), 0);
      it = banks_.emplace(key, std::make_unique<PolicyBank>(world(run).mdp(), *grid_, all, bias, beta)).first;
    }
    return *it->second;
  }

  // Keeps only unbiased banks at betas every cell uses.
  void end_cell() {
    std::erase_if(banks_, [&](const auto& kv) {
      return std::get<2>(kv.first) != "none" || !sticky_.contains(std::get<1>(kv.first));
    });
  }

 private:
  const ExperimentConfig& cfg_;
  std::shared_ptr<const RewardGrid> grid_;
  std::set<double> sticky_;
  std::map<std::uint64_t, std::unique_ptr<GridWorld>> worlds_;
  std::map<std::tuple<std::uint64_t, double, std::string>, std::unique_ptr<PolicyBank>> banks_;
};

Trial run_trial(const ExperimentConfig& cfg, SweepContext& ctx, const CellSpec& cell, std::uint64_t run,
                std::uint64_t reward) {
  const auto& mdp = ctx.world(run).mdp();
  const auto& grid = *ctx.grid();
  const auto base = trial_base(cfg.seed, run, reward);
  const auto kind_tag = static_cast<std::uint64_t>(cell.kind);

  Trial trial;
  trial.cell = cell.label;
  trial.kind = cell.kind;
  trial.beta_true = cell.beta_true;
  trial.bias = cell.bias;
  trial.run_seed = run;
  trial.reward_seed = reward;
  trial.theta_index = draw_grid_index(derive_seed(base, kTruth), grid.size());
  const Theta truth = grid[trial.theta_index];

  // Designs and responder streams depend on the trial and the kind only, so cells see common random numbers.
  Rng design_rng(derive_seed(base, kDesigns + kind_tag));
  std::vector<double> table, scratch;
  SimulatedHuman human(mdp, {BetaMap::uniform(cell.beta_true), cell.bias, derive_seed(base, kHuman + kind_tag)});

  Rng cal_rng(derive_seed(base, kCalibrationRewards));
  CalibrationSet cal;
  for (int c = 0; c < cfg.calibration_rewards; ++c) {
    const Theta theta = sample_unit_theta(cal_rng);
    for (int q = 0; q < cfg.calibration_queries; ++q)
      cal.items.push_back({theta, human.respond(random_design(mdp, cell.kind, cfg.design_beta, design_rng, table, scratch),
                                                theta)});
  }
  std::vector<FeedbackResponse> responses;
  for (int q = 0; q < cfg.inference_queries; ++q)
    responses.push_back(
        human.respond(random_design(mdp, cell.kind, cfg.design_beta, design_rng, table, scratch), truth));

  try {
    const auto fit = fit_beta_mle(mdp, cal, cfg.beta_range);
    trial.beta_fit = fit.value;
    trial.fit_at_boundary = fit.at_boundary;
  } catch (const FlatObjectiveError&) {
    trial.beta_fit.reset();
  }

  const auto prior = Belief::uniform(ctx.grid());
  auto infer = [&](const std::string& method, double beta, const BiasSpec& bias, bool cached) {
    const ObservationModel model{BetaMap::uniform(beta), bias};
    const Belief post = cell.kind == FeedbackKind::Demonstration && cached
                            ? update_with_bank(prior, mdp, responses, model, ctx.bank(run, beta, bias))
                            : update(prior, mdp, responses, model);
    const Theta mean = posterior_mean(post);
    trial.outcomes.push_back(
        {method, beta, normalized_regret(mdp, truth, mean), reward_mse(mean, truth), entropy(post)});
  };
  for (const auto& m : cfg.methods) {
    if (m == "fitted") infer(m, trial.beta_fit.value_or(cfg.default_beta), {}, !trial.beta_fit);
    else if (m == "default") infer(m, cfg.default_beta, {}, true);
    else infer(m, cell.beta_true, cell.bias, true);
  }
  for (double b : cfg.fixed_betas) infer(fixed_method(b), b, {}, true);
  return trial;
}

SweepResult run_cells(const ExperimentConfig& cfg, const std::vector<CellSpec>& cells, const CellCallback& on_cell) {
  SweepContext ctx(cfg);
  SweepResult result;
  for (const auto& cell : cells) {
    std::vector<Trial> done;
    for (auto run : cfg.run_seeds)
      for (auto reward : cfg.reward_seeds) done.push_back(run_trial(cfg, ctx, cell, run, reward));
    ctx.end_cell();
    result.trials.insert(result.trials.end(), done.begin(), done.end());
    if (on_cell) on_cell(done);
  }
  return result;
}

}  // namespace

SweepResult run_boltzmann_sweep(const ExperimentConfig& cfg, const CellCallback& on_cell) {
  cfg.validate();
  std::vector<CellSpec> cells;
  for (auto kind : cfg.kinds)
    for (double beta : cfg.beta_grid) cells.push_back({cell_label(kind, "beta=" + format_double(beta)), kind, beta, {}});
  return run_cells(cfg, cells, on_cell);
}

SweepResult run_bias_sweep(const ExperimentConfig& cfg, const CellCallback& on_cell) {
  cfg.validate();
  std::vector<CellSpec> cells;
  for (const auto& bc : cfg.bias_cells)
    for (auto kind : bc.kinds) cells.push_back({cell_label(kind, bias_label(bc.bias)), kind, cfg.responder_beta, bc.bias});
  return run_cells(cfg, cells, on_cell);
}

// ---------------------------------------------------------------------------
// Active ablation

const std::array<std::string, 4>& AblationResult::cell_names() {
  static const std::array<std::string, 4> names{"correct-select/correct-infer", "correct-select/default-infer",
                                                "default-select/correct-infer", "default-select/default-infer"};
  return names;
}

Stat AblationResult::final_regret(std::string_view setting, std::string_view cell) const {
  std::vector<double> xs;
  for (const auto& r : runs)
    if (r.setting == setting && r.cell == cell) xs.push_back(r.rounds.back().regret);
  if (xs.empty()) throw std::out_of_range("no ablation runs for " + std::string(setting) + " " + std::string(cell));
  return mean_sem(xs);
}

double AblationResult::kind_fraction(std::string_view setting, std::string_view cell, FeedbackKind kind) const {
  int hits = 0, total = 0;
  for (const auto& r : runs)
    if (r.setting == setting && r.cell == cell)
      for (const auto& rec : r.rounds) {
        ++total;
        hits += rec.kind == kind;
      }
  if (total == 0) throw std::out_of_range("no ablation runs for " + std::string(setting) + " " + std::string(cell));
  return static_cast<double>(hits) / total;
}

AblationResult run_active_ablation(const ExperimentConfig& cfg, const std::function<void(const AblationRun&)>& on_run) {
  cfg.validate();
  const auto grid = std::make_shared<const RewardGrid>(RewardGrid::make(cfg.grid_seed, cfg.grid_size));
  const auto prior = Belief::uniform(grid);
  AblationResult result;
  for (const auto& setting : cfg.ablation_settings) {
    for (auto seed : cfg.run_seeds) {
      const auto world = cfg.world.make(seed);
      const auto& mdp = world.mdp();
      PolicyBankCache cache(mdp, grid);
      const auto base = derive_seed(derive_seed(cfg.seed, kActive), seed);
      const int theta_index = draw_grid_index(derive_seed(base, kTruth), grid->size());
      for (std::size_t c = 0; c < 4; ++c) {
        ActiveConfig a = cfg.active;
        a.beta_select = c < 2 ? setting.truth : setting.default_beta;
        a.beta_infer = c % 2 == 0 ? setting.truth : setting.default_beta;
        a.seed = derive_seed(base, kActive);
        const BiasedHumanModel human{setting.truth, {}, derive_seed(base, kHuman)};
        auto trace = active_loop(mdp, prior, human, (*grid)[theta_index], a, cfg.active_rounds, std::nullopt, &cache);
        result.runs.push_back({setting.name, AblationResult::cell_names()[c], seed, theta_index, std::move(trace.rounds)});
        if (on_run) on_run(result.runs.back());
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Diagnostics

double DiagnosticsResult::beta_variance(std::string_view bias) const {
  std::vector<double> xs;
  for (const auto& f : fits)
    if (f.bias == bias) xs.push_back(f.beta);
  if (xs.size() < 2) throw std::out_of_range("variance needs at least two fits for " + std::string(bias));
  const auto s = mean_sem(xs);
  return s.sem * s.sem * s.n;
}

DiagnosticsResult run_diagnostics(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto grid = RewardGrid::make(cfg.grid_seed, cfg.grid_size);
  const auto world = cfg.world.make(cfg.run_seeds.front());
  const auto& mdp = world.mdp();
  std::vector<int> order(static_cast<std::size_t>(grid.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, kDiagnostics));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Theta> thetas;
  for (int i = 0; i < cfg.diagnostic_rewards; ++i) thetas.push_back(grid[order[static_cast<std::size_t>(i)]]);
  std::vector<Theta> candidates;
  for (int i = 0; i <= cfg.kl_candidates; ++i) candidates.push_back(grid[order[static_cast<std::size_t>(i)]]);

  DiagnosticsResult out;
  for (const auto& bias : cfg.diagnostic_biases) {
    const std::string label = bias_label(bias);
    const BiasedHumanModel model{BetaMap::uniform(cfg.responder_beta), bias, 0};
    const auto fits = beta_fits_over_rewards(mdp, model, thetas, cfg.beta_range);
    for (std::size_t i = 0; i < fits.size(); ++i)
      out.fits.push_back({label, order[i], fits[i].value, fits[i].at_boundary});
    // Scatter for the first reward: the truth itself plus kl_candidates others, at the truth's fitted beta.
    const auto pi = biased_value_iteration(mdp, thetas.front(), bias, cfg.responder_beta).policy();
    const auto kls = kl_to_soft_policies(mdp, pi, candidates, fits.front().value);
    for (std::size_t i = 0; i < kls.size(); ++i) out.kl.push_back({label, order[0], order[i], fits.front().value, kls[i]});
  }
  return out;
}

ToyResult run_toy_crossover(const ExperimentConfig& cfg) {
  cfg.validate();
  ToyResult out;
  for (double b : cfg.toy_betas)
    out.points.push_back({b, demo_expected_posterior_entropy(cfg.toy, b), comparison_expected_posterior_entropy(cfg.toy, b)});
  out.crossover_beta = find_crossover_beta(cfg.toy, cfg.crossover);
  return out;
}

// ---------------------------------------------------------------------------
// Tables

std::string CsvTable::render() const {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += ',';
      const bool quote = cells[i].find_first_of(",\"\n") != std::string::npos;
      if (!quote) {
        s += cells[i];
        continue;
      }
      s += '"';
      for (char ch : cells[i]) s += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      s += '"';
    }
    return s + '\n';
  };
  std::string out = std::string(kCsvVersionLine) + " " + name + "\n" + line(columns);
  for (const auto& r : rows) {
    if (r.size() != columns.size()) throw std::logic_error("row width does not match the header of " + name);
    out += line(r);
  }
  return out;
}

namespace {

std::string opt(const std::optional<double>& x) { return x ? format_double(*x) : ""; }
std::string num(double x) { return format_double(x); }
std::string num(std::uint64_t x) { return std::to_string(x); }
std::string num(int x) { return std::to_string(x); }

}  // namespace

CsvTable trials_table(std::span<const Trial> trials) {
  CsvTable t{"trials",
             {"cell", "kind", "beta_true", "gamma", "alpha", "tau", "run_seed", "reward_seed", "theta_index", "beta_fit",
              "fit_at_boundary", "method", "beta_used", "regret", "mse", "entropy"},
             {}};
  for (const auto& tr : trials)
    for (const auto& o : tr.outcomes)
      t.rows.push_back({tr.cell, std::string(to_string(tr.kind)), num(tr.beta_true), opt(tr.bias.myopia_gamma),
                        opt(tr.bias.extremal_alpha), opt(tr.bias.optimism_tau), num(tr.run_seed), num(tr.reward_seed),
                        num(tr.theta_index), opt(tr.beta_fit), tr.fit_at_boundary ? "1" : "0", o.method,
                        num(o.beta_used), num(o.regret), num(o.mse), num(o.entropy)});
  return t;
}

CsvTable summary_table(const SweepResult& result) {
  CsvTable t{"summary",
             {"cell", "method", "n", "regret_mean", "regret_sem", "mse_mean", "mse_sem", "beta_used_mean"},
             {}};
  for (const auto& cell : result.cells()) {
    const Trial* first = nullptr;
    for (const auto& tr : result.trials)
      if (tr.cell == cell) {
        first = &tr;
        break;
      }
    for (const auto& o : first->outcomes) {
      std::vector<double> used;
      for (const auto& tr : result.trials)
        if (tr.cell == cell) used.push_back(tr.outcome(o.method).beta_used);
      const auto r = result.regret(cell, o.method), m = result.mse(cell, o.method);
      t.rows.push_back({cell, o.method, num(r.n), num(r.mean), num(r.sem), num(m.mean), num(m.sem),
                        num(mean_sem(used).mean)});
    }
  }
  return t;
}

CsvTable ablation_rounds_table(const AblationResult& result) {
  CsvTable t{"ablation_rounds",
             {"setting", "cell", "seed", "theta_index", "round", "kind", "design_index", "eig", "post_entropy", "regret",
              "mse"},
             {}};
  for (const auto& r : result.runs)
    for (const auto& rec : r.rounds)
      t.rows.push_back({r.setting, r.cell, num(r.seed), num(r.theta_index), num(rec.round),
                        std::string(to_string(rec.kind)), num(static_cast<std::uint64_t>(rec.design_index)),
                        num(rec.eig), num(rec.post_entropy), num(rec.regret), num(rec.mse)});
  return t;
}

CsvTable ablation_summary_table(const AblationResult& result) {
  CsvTable t{"ablation_summary",
             {"setting", "cell", "n", "final_regret_mean", "final_regret_sem", "frac_demo", "frac_comp", "frac_estop"},
             {}};
  std::vector<std::string> settings;
  for (const auto& r : result.runs)
    if (std::find(settings.begin(), settings.end(), r.setting) == settings.end()) settings.push_back(r.setting);
  for (const auto& s : settings)
    for (const auto& c : AblationResult::cell_names()) {
      const auto st = result.final_regret(s, c);
      t.rows.push_back({s, c, num(st.n), num(st.mean), num(st.sem),
                        num(result.kind_fraction(s, c, FeedbackKind::Demonstration)),
                        num(result.kind_fraction(s, c, FeedbackKind::Comparison)),
                        num(result.kind_fraction(s, c, FeedbackKind::EStop))});
    }
  return t;
}

CsvTable diagnostics_fits_table(const DiagnosticsResult& result) {
  CsvTable t{"beta_fits", {"bias", "theta_index", "beta", "at_boundary"}, {}};
  for (const auto& f : result.fits) t.rows.push_back({f.bias, num(f.theta_index), num(f.beta), f.at_boundary ? "1" : "0"});
  return t;
}

CsvTable diagnostics_variance_table(const DiagnosticsResult& result) {
  CsvTable t{"beta_variance", {"bias", "n", "beta_mean", "beta_variance"}, {}};
  std::vector<std::string> labels;
  for (const auto& f : result.fits)
    if (std::find(labels.begin(), labels.end(), f.bias) == labels.end()) labels.push_back(f.bias);
  for (const auto& l : labels) {
    std::vector<double> xs;
    for (const auto& f : result.fits)
      if (f.bias == l) xs.push_back(f.beta);
    t.rows.push_back({l, num(static_cast<int>(xs.size())), num(mean_sem(xs).mean), num(result.beta_variance(l))});
  }
  return t;
}

CsvTable diagnostics_kl_table(const DiagnosticsResult& result) {
  CsvTable t{"kl_scatter", {"bias", "truth_index", "candidate_index", "beta", "kl"}, {}};
  for (const auto& p : result.kl)
    t.rows.push_back({p.bias, num(p.truth_index), num(p.candidate_index), num(p.beta), num(p.kl)});
  return t;
}

CsvTable toy_table(const ToyResult& result) {
  CsvTable t{"toy_entropy", {"beta", "demo_entropy", "comparison_entropy", "difference"}, {}};
  for (const auto& p : result.points)
    t.rows.push_back({num(p.beta), num(p.demo_entropy), num(p.comparison_entropy),
                      num(p.demo_entropy - p.comparison_entropy)});
  return t;
}

// ---------------------------------------------------------------------------
// Runner

Json run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  auto seconds_since = [](auto t) { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count(); };

  Json manifest = {{"format", "rrl-manifest v1"},
                   {"experiment", std::string(to_string(cfg.kind))},
                   {"config_hash", config_hash(cfg)},
                   {"config", config_to_json(cfg)},
                   {"status", "running"},
                   {"outputs", Json::array()},
                   {"timing", {{"cells", Json::array()}}}};
  const auto path = [&](const std::string& name) { return (std::filesystem::path(out_dir) / name).string(); };
  std::vector<std::string> outputs;
  auto emit = [&](const CsvTable& t) {
    const std::string file = t.name + ".csv";
    write_file_atomic(path(file), t.render());
    if (std::find(outputs.begin(), outputs.end(), file) == outputs.end()) outputs.push_back(file);
  };
  auto flush_manifest = [&] {
    manifest["outputs"] = outputs;
    write_file_atomic(path("manifest.json"), manifest.dump(2) + "\n");
  };
  flush_manifest();

  auto cell_start = std::chrono::steady_clock::now();
  auto sweep = [&](auto runner) {
    std::vector<Trial> all;
    const auto result = runner(cfg, [&](const std::vector<Trial>& cell) {
      all.insert(all.end(), cell.begin(), cell.end());
      emit(trials_table(all));
      manifest["timing"]["cells"].push_back({{"cell", cell.front().cell}, {"seconds", seconds_since(cell_start)}});
      flush_manifest();
      cell_start = std::chrono::steady_clock::now();
    });
    emit(summary_table(result));
    manifest["cells_completed"] = result.cells().size();
  };

  try {
    switch (cfg.kind) {
      case ExperimentKind::BoltzmannSweep:
        sweep([](const ExperimentConfig& c, const CellCallback& cb) { return run_boltzmann_sweep(c, cb); });
        break;
      case ExperimentKind::BiasSweep:
        sweep([](const ExperimentConfig& c, const CellCallback& cb) { return run_bias_sweep(c, cb); });
        break;
      case ExperimentKind::ActiveAblation: {
        AblationResult partial;
        const auto result = run_active_ablation(cfg, [&](const AblationRun& run) {
          partial.runs.push_back(run);
          emit(ablation_rounds_table(partial));
          manifest["timing"]["cells"].push_back(
              {{"cell", run.setting + " " + run.cell + " seed=" + std::to_string(run.seed)},
               {"seconds", seconds_since(cell_start)}});
          flush_manifest();
          cell_start = std::chrono::steady_clock::now();
        });
        emit(ablation_summary_table(result));
        manifest["cells_completed"] = result.runs.size();
        break;
      }
      case ExperimentKind::Diagnostics: {
        const auto result = run_diagnostics(cfg);
        emit(diagnostics_fits_table(result));
        emit(diagnostics_variance_table(result));
        emit(diagnostics_kl_table(result));
        manifest["cells_completed"] = cfg.diagnostic_biases.size();
        break;
      }
      case ExperimentKind::ToyCrossover: {
        const auto result = run_toy_crossover(cfg);
        emit(toy_table(result));
        manifest["crossover_beta"] = result.crossover_beta ? Json(*result.crossover_beta) : Json(nullptr);
        manifest["cells_completed"] = result.points.size();
        break;
      }
    }
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    flush_manifest();
    throw;
  }
  manifest["status"] = "complete";
  manifest["timing"]["total_seconds"] = seconds_since(t0);
  flush_manifest();
  return manifest;
}

}  // namespace rrl
