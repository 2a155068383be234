#include "rrl/service.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <random>
#include <regex>

namespace rrl {

namespace {

constexpr std::string_view kSessionFormat = "rrl-session v1";
// 95% quantile of chi-square with one degree of freedom.
constexpr double kRandomLikeThreshold = 3.841458820694124;

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

[[noreturn]] void bad_config(const std::string& msg) { throw ServiceError(400, "invalid_config", msg); }

void check_known_keys(const Json& base, const Json& patch, const std::string& path) {
  if (!patch.is_object()) bad_config("session config" + path + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) bad_config("unknown session config field '" + path + "." + key + "'");
    const auto& b = base.at(key);
    if (b.is_object() && key != "active") check_known_keys(b, value, path + "." + key);
  }
}

Json kinds_json(const std::vector<FeedbackKind>& kinds) {
  Json out = Json::array();
  for (auto k : kinds) out.push_back(std::string(to_string(k)));
  return out;
}

Phase phase_from_string(const std::string& s) {
  for (auto p : {Phase::Calibration, Phase::Inference, Phase::Complete})
    if (to_string(p) == s) return p;
  throw std::invalid_argument("unknown phase '" + s + "'");
}

Json fit_json(const KindFit& f) {
  return {{"beta", f.estimate.value},
          {"log_likelihood", double_to_json(f.estimate.log_likelihood)},
          {"low", f.estimate.low},
          {"high", f.estimate.high},
          {"at_boundary", f.estimate.at_boundary},
          {"flat", f.flat},
          {"random_like", f.random_like}};
}

// Cells visited by a trajectory and the number of arrivals on each color.
Json trace_json(const GridWorld& w, const Trajectory& traj) {
  Json cells = Json::array();
  std::array<int, kNumColors> counts{};
  int goal_steps = 0;
  for (std::size_t k = 0; k < traj.steps.size(); ++k) {
    const int s = traj.steps[k].state;
    cells.push_back({w.x_of(s), w.y_of(s)});
    if (k == 0) continue;
    if (s == w.goal_state())
      ++goal_steps;
    else
      ++counts[static_cast<std::size_t>(w.colors()[static_cast<std::size_t>(s)])];
  }
  return {{"cells", cells}, {"color_counts", counts}, {"goal_steps", goal_steps}, {"steps", traj.num_actions()}};
}

// Fits beta on one kind's calibration items; flat objectives fall back to the default.
KindFit fit_kind(const Mdp& mdp, const CalibrationSet& cal, const BetaRange& range, double default_beta) {
  KindFit f;
  f.estimate.kind = cal.kind();
  try {
    f.estimate = fit_beta_mle(mdp, cal, range);
  } catch (const FlatObjectiveError&) {
    f.flat = true;
    f.estimate.value = default_beta;
    f.estimate.low = range.low;
    f.estimate.high = range.high;
    return f;
  }
  double at_zero = 0.0;
  for (const auto& item : cal.items) at_zero += response_log_likelihood(mdp, item.response, item.theta, 0.0);
  f.random_like = 2.0 * (f.estimate.log_likelihood - at_zero) < kRandomLikeThreshold;
  return f;
}

}  // namespace

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Calibration: return "calibration";
    case Phase::Inference: return "inference";
    case Phase::Complete: return "complete";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Configuration

SessionConfig SessionConfig::defaults() {
  SessionConfig c;
  c.active.kinds = {true, true, false};
  c.active.demo_outer_draws = 200;
  return c;
}

void SessionConfig::validate() const {
  static const std::regex id_pattern("[A-Za-z0-9_-]{1,64}");
  if (!id.empty() && !std::regex_match(id, id_pattern)) bad_config("id must be 1-64 characters of [A-Za-z0-9_-]");
  if (world.width < 2 || world.height < 2) bad_config("world must be at least 2x2");
  if (world.horizon < 1) bad_config("horizon must be positive");
  if (!(world.slip >= 0.0 && world.slip < 1.0)) bad_config("slip must lie in [0, 1)");
  if (!std::isfinite(world.completion_bonus)) bad_config("completion bonus must be finite");
  if (grid_size < 1) bad_config("grid_size must be positive");
  if (calibration.block_size < 1) bad_config("calibration.block_size must be positive");
  if (calibration.kinds.empty()) bad_config("calibration.kinds must not be empty");
  for (std::size_t i = 0; i < calibration.kinds.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (calibration.kinds[i] == calibration.kinds[j]) bad_config("calibration.kinds repeats a kind");
  if (!use_default_beta && calibration.rewards < 1) bad_config("calibration needs at least one reward");
  if (!(design_beta >= 0.0) || !(default_beta >= 0.0)) bad_config("betas must be non-negative");
  if (inference_rounds < 0) bad_config("inference_rounds must be non-negative");
  if (top_k < 1) bad_config("top_k must be positive");
  if (hidden_theta)
    for (double x : *hidden_theta)
      if (!std::isfinite(x)) bad_config("hidden_theta must be finite");
  try {
    active.validate();
  } catch (const std::exception& e) {
    bad_config(std::string("active: ") + e.what());
  }
  if (!use_default_beta)
    for (auto k : {FeedbackKind::Demonstration, FeedbackKind::Comparison, FeedbackKind::EStop})
      if (active.kinds[static_cast<std::size_t>(k)] &&
          std::find(calibration.kinds.begin(), calibration.kinds.end(), k) == calibration.kinds.end())
        bad_config("kind '" + std::string(to_string(k)) +
                   "' is pooled for inference but never calibrated; calibrate it or set use_default_beta");
}

Json session_config_to_json(const SessionConfig& c) {
  return {{"id", c.id},
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
          {"calibration",
           {{"rewards", c.calibration.rewards},
            {"block_size", c.calibration.block_size},
            {"kinds", kinds_json(c.calibration.kinds)},
            {"order", c.calibration.interleaved ? "interleaved" : "scripted"}}},
          {"design_beta", c.design_beta},
          {"inference_rounds", c.inference_rounds},
          {"active", active_config_to_json(c.active)},
          {"use_default_beta", c.use_default_beta},
          {"default_beta", c.default_beta},
          {"beta_range",
           {{"low", c.beta_range.low}, {"high", c.beta_range.high}, {"grid_points", c.beta_range.grid_points}}},
          {"hidden_theta", c.hidden_theta ? theta_to_json(*c.hidden_theta) : Json()},
          {"top_k", c.top_k}};
}

SessionConfig session_config_from_json(const Json& j) {
  SessionConfig c = SessionConfig::defaults();
  if (j.is_null()) return c;
  check_known_keys(session_config_to_json(c), j, "");
  try {
    auto get = [&](const Json& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    get(j, "id", c.id);
    get(j, "seed", c.seed);
    if (j.contains("world")) {
      const auto& w = j.at("world");
      get(w, "width", c.world.width);
      get(w, "height", c.world.height);
      get(w, "horizon", c.world.horizon);
      get(w, "slip", c.world.slip);
      get(w, "completion_bonus", c.world.completion_bonus);
      get(w, "seed", c.world.seed);
    }
    get(j, "grid_seed", c.grid_seed);
    get(j, "grid_size", c.grid_size);
    if (j.contains("calibration")) {
      const auto& cal = j.at("calibration");
      get(cal, "rewards", c.calibration.rewards);
      get(cal, "block_size", c.calibration.block_size);
      if (cal.contains("kinds")) {
        c.calibration.kinds.clear();
        for (const auto& k : cal.at("kinds")) c.calibration.kinds.push_back(feedback_kind_from_string(k.get<std::string>()));
      }
      if (cal.contains("order")) {
        const auto order = cal.at("order").get<std::string>();
        if (order != "scripted" && order != "interleaved") bad_config("calibration.order must be scripted or interleaved");
        c.calibration.interleaved = order == "interleaved";
      }
    }
    get(j, "design_beta", c.design_beta);
    get(j, "inference_rounds", c.inference_rounds);
    if (j.contains("active")) c.active = active_config_from_json(j.at("active"), c.active);
    get(j, "use_default_beta", c.use_default_beta);
    get(j, "default_beta", c.default_beta);
    if (j.contains("beta_range")) {
      const auto& r = j.at("beta_range");
      get(r, "low", c.beta_range.low);
      get(r, "high", c.beta_range.high);
      get(r, "grid_points", c.beta_range.grid_points);
    }
    if (j.contains("hidden_theta") && !j.at("hidden_theta").is_null()) c.hidden_theta = theta_from_json(j.at("hidden_theta"));
    get(j, "top_k", c.top_k);
  } catch (const ServiceError&) {
    throw;
  } catch (const std::exception& e) {
    bad_config(e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Session

Session::Session(SessionConfig config, std::string created_at)
    : config_(std::move(config)),
      created_at_(created_at),
      updated_at_(std::move(created_at)),
      world_(std::make_unique<GridWorld>(config_.world.make(0))),
      grid_(std::make_shared<const RewardGrid>(RewardGrid::make(config_.grid_seed, config_.grid_size))),
      belief_(Belief::uniform(grid_)) {
  config_.validate();
  const Mdp& mdp = world_->mdp();
  if (config_.use_default_beta) {
    beta_map_ = BetaMap::uniform(config_.default_beta);
    phase_ = config_.inference_rounds > 0 ? Phase::Inference : Phase::Complete;
    return;
  }
  Rng reward_rng(derive_seed(config_.seed, 2));
  for (int r = 0; r < config_.calibration.rewards; ++r) calibration_rewards_.push_back(sample_unit_theta(reward_rng));
  Rng design_rng(derive_seed(config_.seed, 10));
  std::vector<double> table, scratch;
  int block = 0;
  auto add_block = [&](FeedbackKind kind, int reward) {
    for (int p = 0; p < config_.calibration.block_size; ++p)
      plan_.push_back({reward, block, p, random_design(mdp, kind, config_.design_beta, design_rng, table, scratch)});
    ++block;
  };
  if (config_.calibration.interleaved) {
    for (int r = 0; r < config_.calibration.rewards; ++r)
      for (auto kind : config_.calibration.kinds) add_block(kind, r);
  } else {
    for (auto kind : config_.calibration.kinds)
      for (int r = 0; r < config_.calibration.rewards; ++r) add_block(kind, r);
  }
}

ActiveConfig Session::inference_config() const {
  if (!beta_map_) throw ServiceError(409, "calibration_incomplete", "no beta map before calibration ends");
  ActiveConfig ac = config_.active;
  ac.beta_select = *beta_map_;
  ac.beta_infer = *beta_map_;
  ac.seed = derive_seed(config_.seed, 40);
  return ac;
}

int Session::inference_rounds_done() const {
  int n = 0;
  for (const auto& e : log_) n += e.phase == Phase::Inference;
  return n;
}

PolicyBankCache& Session::cache() {
  if (!cache_) cache_ = std::make_unique<PolicyBankCache>(world_->mdp(), grid_);
  return *cache_;
}

const OutstandingQuery* Session::next_query() {
  if (outstanding_) return &*outstanding_;
  if (phase_ == Phase::Complete) return nullptr;
  OutstandingQuery q;
  q.id = "q" + std::to_string(++issued_);
  q.phase = phase_;
  if (phase_ == Phase::Calibration) {
    q.plan_index = static_cast<int>(log_.size());
    q.query = plan_[static_cast<std::size_t>(q.plan_index)].query;
  } else {
    const auto ac = inference_config();
    const auto r = static_cast<std::uint64_t>(inference_rounds_done());
    Rng pool_rng(derive_seed(ac.seed, 2 * r));
    Rng select_rng(derive_seed(ac.seed, 2 * r + 1));
    const auto pool = build_pool(world_->mdp(), belief_, ac, pool_rng);
    const auto sel = select_query(world_->mdp(), belief_, pool, ac, select_rng, &cache());
    q.query = sel.query;
    q.eig = sel.eig;
  }
  outstanding_ = std::move(q);
  return &*outstanding_;
}

Json Session::query_payload() const {
  if (!outstanding_) {
    Json out = {{"status", "complete"}, {"session", summary()}};
    return out;
  }
  const auto& q = *outstanding_;
  Json out = {{"status", "pending"},
              {"query_id", q.id},
              {"phase", to_string(q.phase)},
              {"kind", to_string(q.query.kind())},
              {"query", q.query}};
  if (q.phase == Phase::Calibration) {
    const auto& p = plan_[static_cast<std::size_t>(q.plan_index)];
    out["calibration"] = {{"index", q.plan_index},
                          {"total", plan_.size()},
                          {"reward_index", p.reward},
                          {"block", p.block},
                          {"position", p.position},
                          {"block_size", config_.calibration.block_size},
                          {"new_block", p.position == 0},
                          {"reward_legend", theta_to_json(calibration_rewards_[static_cast<std::size_t>(p.reward)])}};
  } else {
    out["inference"] = {{"round", inference_rounds_done() + 1}, {"total", config_.inference_rounds}, {"eig", q.eig}};
  }
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, DemoDesign>)
          out["start"] = {world_->x_of(d.start_state), world_->y_of(d.start_state)};
        if constexpr (std::is_same_v<D, ComparisonDesign>)
          out["traces"] = {{"a", trace_json(*world_, d.a)}, {"b", trace_json(*world_, d.b)}};
        if constexpr (std::is_same_v<D, EStopDesign>) out["traces"] = {{"trajectory", trace_json(*world_, d.traj)}};
      },
      q.query.design);
  return out;
}

Json Session::submit(const Json& body, const std::string& now) {
  if (!body.is_object() || !body.contains("query_id") || !body.at("query_id").is_string() || !body.contains("choice"))
    throw ServiceError(400, "invalid_request", "feedback needs a string query_id and a choice");
  const auto id = body.at("query_id").get<std::string>();

  auto parse = [&](const FeedbackQuery& query) {
    FeedbackResponse r;
    try {
      r = Json{{"query", query}, {"choice", body.at("choice")}}.get<FeedbackResponse>();
      validate_response(world_->mdp(), r);
    } catch (const std::exception& e) {
      throw ServiceError(400, "invalid_response", e.what());
    }
    return r;
  };

  for (const auto& e : log_)
    if (e.query_id == id) {
      if (parse(e.response.query) == e.response) return e.result;
      throw ServiceError(409, "conflicting_resubmission", "query " + id + " was already answered differently");
    }
  if (phase_ == Phase::Complete) throw ServiceError(409, "session_complete", "the session has no open queries");
  if (!outstanding_ || outstanding_->id != id)
    throw ServiceError(409, "stale_query", "query " + id + " is not the outstanding query");

  LogEntry entry;
  entry.query_id = id;
  entry.phase = outstanding_->phase;
  entry.response = parse(outstanding_->query);
  entry.eig = outstanding_->eig;
  if (outstanding_->phase == Phase::Calibration)
    entry.reward = plan_[static_cast<std::size_t>(outstanding_->plan_index)].reward;
  if (body.contains("timestamps")) {
    const auto& ts = body.at("timestamps");
    if (!ts.is_array()) throw ServiceError(400, "invalid_timestamps", "timestamps must be an array of numbers");
    for (const auto& t : ts) {
      if (!t.is_number()) throw ServiceError(400, "invalid_timestamps", "timestamps must be numbers");
      if (!entry.timestamps.empty() && t.get<double>() < entry.timestamps.back())
        throw ServiceError(400, "invalid_timestamps", "timestamps must be non-decreasing");
      entry.timestamps.push_back(t.get<double>());
    }
  }
  if (body.contains("client_timing")) entry.client_timing = body.at("client_timing");

  const Phase phase = entry.phase;
  const FeedbackResponse response = entry.response;
  log_.push_back(std::move(entry));
  outstanding_.reset();
  if (phase == Phase::Calibration) {
    if (log_.size() == plan_.size()) finish_calibration();
  } else {
    apply_inference(response);
  }
  updated_at_ = now;
  log_.back().result = summary();
  return log_.back().result;
}

void Session::finish_calibration() {
  const Mdp& mdp = world_->mdp();
  BetaMap map = BetaMap::uniform(config_.default_beta);
  for (auto kind : config_.calibration.kinds) {
    CalibrationSet cal;
    for (const auto& e : log_)
      if (e.phase == Phase::Calibration && e.response.kind() == kind)
        cal.items.push_back({calibration_rewards_[static_cast<std::size_t>(e.reward)], e.response});
    const auto fit = fit_kind(mdp, cal, config_.beta_range, config_.default_beta);
    map[kind] = fit.estimate.value;
    fits_[kind] = fit;
  }
  beta_map_ = map;
  phase_ = config_.inference_rounds > 0 ? Phase::Inference : Phase::Complete;
}

void Session::apply_inference(const FeedbackResponse& r) {
  const Mdp& mdp = world_->mdp();
  const auto span = std::span(&r, 1);
  if (r.kind() == FeedbackKind::Demonstration) {
    const auto model = ObservationModel::boltzmann(*beta_map_);
    belief_ = update_with_bank(belief_, mdp, span, model, cache().get((*beta_map_)[FeedbackKind::Demonstration]));
  } else {
    belief_ = update(belief_, mdp, span, *beta_map_);
  }
  if (config_.hidden_theta) regrets_.push_back(normalized_regret(mdp, *config_.hidden_theta, posterior_mean(belief_)));
  if (inference_rounds_done() >= config_.inference_rounds) phase_ = Phase::Complete;
}

Json Session::summary() const {
  int calibrated = 0;
  for (const auto& e : log_) calibrated += e.phase == Phase::Calibration;
  Json fits = Json::object();
  for (const auto& [k, f] : fits_) fits[std::string(to_string(k))] = fit_json(f);
  Json out = {{"id", config_.id},
              {"phase", to_string(phase_)},
              {"calibration", {{"done", calibrated}, {"total", plan_.size()}}},
              {"inference", {{"done", inference_rounds_done()}, {"total", config_.inference_rounds}}},
              {"use_default_beta", config_.use_default_beta},
              {"fits", fits},
              {"beta_map", beta_map_ ? Json(*beta_map_) : Json()},
              {"belief", belief_summary(belief_, config_.top_k)},
              {"outstanding_query", outstanding_ ? Json(outstanding_->id) : Json()},
              {"created_at", created_at_},
              {"updated_at", updated_at_}};
  if (config_.hidden_theta) out["regret"] = regrets_.empty() ? Json() : Json(regrets_.back());
  return out;
}

Json Session::belief_json() const {
  Json out = belief_summary(belief_, config_.top_k);
  out["phase"] = to_string(phase_);
  out["beta_map"] = beta_map_ ? Json(*beta_map_) : Json();
  Json fits = Json::object();
  for (const auto& [k, f] : fits_) fits[std::string(to_string(k))] = fit_json(f);
  out["fits"] = fits;
  return out;
}

Json Session::holdout() const {
  if (config_.use_default_beta || phase_ == Phase::Calibration)
    throw ServiceError(409, "calibration_incomplete", "hold-one-out needs a completed calibration phase");
  if (config_.calibration.rewards < 2)
    throw ServiceError(409, "too_few_rewards", "hold-one-out needs at least two calibration rewards");
  const Mdp& mdp = world_->mdp();
  Json out = Json::object();
  for (auto kind : config_.calibration.kinds) {
    Json rows = Json::array();
    std::vector<double> fitted_regrets, default_regrets;
    for (int held = 0; held < config_.calibration.rewards; ++held) {
      CalibrationSet others;
      std::vector<FeedbackResponse> test;
      for (const auto& e : log_) {
        if (e.phase != Phase::Calibration || e.response.kind() != kind) continue;
        if (e.reward == held)
          test.push_back(e.response);
        else
          others.items.push_back({calibration_rewards_[static_cast<std::size_t>(e.reward)], e.response});
      }
      const auto fit = fit_kind(mdp, others, config_.beta_range, config_.default_beta);
      const Theta& truth = calibration_rewards_[static_cast<std::size_t>(held)];
      auto score = [&](double beta) {
        const auto post = update(Belief::uniform(grid_), mdp, test, BetaMap::uniform(beta));
        const Theta mean = posterior_mean(post);
        return Json{{"beta", beta},
                    {"regret", normalized_regret(mdp, truth, mean)},
                    {"mse", reward_mse(mean, truth)},
                    {"entropy", entropy(post)}};
      };
      Json row = {{"reward_index", held}, {"fit", fit_json(fit)}, {"fitted", score(fit.estimate.value)},
                  {"default", score(config_.default_beta)}};
      fitted_regrets.push_back(row["fitted"]["regret"].get<double>());
      default_regrets.push_back(row["default"]["regret"].get<double>());
      rows.push_back(std::move(row));
    }
    const auto f = mean_sem(fitted_regrets);
    const auto d = mean_sem(default_regrets);
    out[std::string(to_string(kind))] = {
        {"trials", rows},
        {"fitted_regret", {{"mean", f.mean}, {"sem", f.sem}}},
        {"default_regret", {{"mean", d.mean}, {"sem", d.sem}}}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

Json Session::to_json() const {
  Json rewards = Json::array();
  for (const auto& t : calibration_rewards_) rewards.push_back(theta_to_json(t));
  Json plan = Json::array();
  for (const auto& p : plan_)
    plan.push_back({{"reward", p.reward}, {"block", p.block}, {"position", p.position}, {"query", p.query}});
  Json log = Json::array();
  for (const auto& e : log_)
    log.push_back({{"query_id", e.query_id},
                   {"phase", to_string(e.phase)},
                   {"reward", e.reward},
                   {"response", e.response},
                   {"timestamps", e.timestamps},
                   {"client_timing", e.client_timing},
                   {"eig", e.eig},
                   {"result", e.result}});
  Json outstanding;
  if (outstanding_)
    outstanding = {{"id", outstanding_->id},
                   {"phase", to_string(outstanding_->phase)},
                   {"query", outstanding_->query},
                   {"plan_index", outstanding_->plan_index},
                   {"eig", outstanding_->eig}};
  Json fits = Json::object();
  for (const auto& [k, f] : fits_) fits[std::string(to_string(k))] = fit_json(f);
  return {{"format", kSessionFormat},
          {"id", config_.id},
          {"created_at", created_at_},
          {"updated_at", updated_at_},
          {"config", session_config_to_json(config_)},
          {"phase", to_string(phase_)},
          {"calibration", {{"order", config_.calibration.interleaved ? "interleaved" : "scripted"},
                           {"rewards", rewards},
                           {"plan", plan}}},
          {"log", log},
          {"outstanding", outstanding},
          {"issued", issued_},
          {"fits", fits},
          {"beta_map", beta_map_ ? Json(*beta_map_) : Json()},
          {"regrets", regrets_},
          {"world", world_to_json(*world_)},
          {"belief", belief_to_json(belief_)}};
}

std::unique_ptr<Session> Session::from_json(const Json& doc) {
  if (!doc.is_object() || doc.value("format", "") != kSessionFormat)
    throw std::invalid_argument("not an rrl session document");
  auto s = std::make_unique<Session>(session_config_from_json(doc.at("config")), doc.at("created_at").get<std::string>());
  Json plan = Json::array();
  for (const auto& p : s->plan_)
    plan.push_back({{"reward", p.reward}, {"block", p.block}, {"position", p.position}, {"query", p.query}});
  if (plan != doc.at("calibration").at("plan"))
    throw std::invalid_argument("stored calibration plan does not match its configuration");
  for (const auto& j : doc.at("log")) {
    LogEntry e;
    e.query_id = j.at("query_id").get<std::string>();
    e.phase = phase_from_string(j.at("phase").get<std::string>());
    e.reward = j.at("reward").get<int>();
    e.response = j.at("response").get<FeedbackResponse>();
    e.timestamps = j.at("timestamps").get<std::vector<double>>();
    e.client_timing = j.at("client_timing");
    e.eig = j.at("eig").get<double>();
    e.result = j.at("result");
    if (e.phase != s->phase_) throw std::invalid_argument("log entry " + e.query_id + " is out of phase");
    validate_response(s->world_->mdp(), e.response);
    const Phase phase = e.phase;
    const FeedbackResponse response = e.response;
    s->log_.push_back(std::move(e));
    if (phase == Phase::Calibration) {
      if (s->log_.size() == s->plan_.size()) s->finish_calibration();
    } else {
      s->apply_inference(response);
    }
  }
  if (!doc.at("outstanding").is_null()) {
    const auto& o = doc.at("outstanding");
    s->outstanding_ = OutstandingQuery{o.at("id").get<std::string>(), phase_from_string(o.at("phase").get<std::string>()),
                                       o.at("query").get<FeedbackQuery>(), o.at("plan_index").get<int>(),
                                       o.at("eig").get<double>()};
  }
  s->issued_ = doc.at("issued").get<int>();
  s->updated_at_ = doc.at("updated_at").get<std::string>();
  return s;
}

Belief replay_belief(const Json& doc) {
  const auto cfg = session_config_from_json(doc.at("config"));
  const auto world = cfg.world.make(0);
  auto grid = std::make_shared<const RewardGrid>(RewardGrid::make(cfg.grid_seed, cfg.grid_size));
  Belief belief = Belief::uniform(grid);
  if (doc.at("log").empty() || doc.at("beta_map").is_null()) return belief;
  const auto beta = doc.at("beta_map").get<BetaMap>();
  for (const auto& j : doc.at("log")) {
    if (j.at("phase").get<std::string>() != to_string(Phase::Inference)) continue;
    const auto r = j.at("response").get<FeedbackResponse>();
    belief = update(belief, world.mdp(), std::span(&r, 1), beta);
  }
  return belief;
}

// ---------------------------------------------------------------------------
// Store

SessionStore::SessionStore(std::string data_dir) : dir_(std::move(data_dir)) {
  std::filesystem::create_directories(dir_);
}

std::string SessionStore::path(const std::string& id) const { return dir_ + "/" + id + ".json"; }

void SessionStore::persist(const Session& s) const { write_file_atomic(path(s.id()), s.to_json().dump()); }

SessionStore::Slot& SessionStore::slot(const std::string& id) {
  static const std::regex id_pattern("[A-Za-z0-9_-]{1,64}");
  if (!std::regex_match(id, id_pattern)) throw ServiceError(404, "unknown_session", "no session '" + id + "'");
  std::lock_guard lock(mutex_);
  if (auto it = slots_.find(id); it != slots_.end()) return *it->second;
  if (!std::filesystem::exists(path(id))) throw ServiceError(404, "unknown_session", "no session '" + id + "'");
  auto slot = std::make_unique<Slot>();
  try {
    slot->session = Session::from_json(Json::parse(read_file(path(id))));
  } catch (const std::exception& e) {
    throw ServiceError(500, "corrupt_session", "session '" + id + "' could not be restored: " + e.what());
  }
  return *slots_.emplace(id, std::move(slot)).first->second;
}

Json SessionStore::create(const Json& config) {
  auto cfg = session_config_from_json(config);
  std::lock_guard lock(mutex_);
  if (cfg.id.empty()) {
    std::random_device rd;
    do {
      char buf[20];
      std::snprintf(buf, sizeof buf, "s%08x%08x", rd(), rd());
      cfg.id = buf;
    } while (slots_.count(cfg.id) || std::filesystem::exists(path(cfg.id)));
  } else if (slots_.count(cfg.id) || std::filesystem::exists(path(cfg.id))) {
    throw ServiceError(409, "duplicate_id", "session '" + cfg.id + "' already exists");
  }
  auto slot = std::make_unique<Slot>();
  slot->session = std::make_unique<Session>(std::move(cfg), now_iso());
  persist(*slot->session);
  Json out = slot->session->summary();
  out["world"] = world_to_json(slot->session->world());
  out["config"] = session_config_to_json(slot->session->config());
  slots_.emplace(slot->session->id(), std::move(slot));
  return out;
}

Json SessionStore::next_query(const std::string& id) {
  auto& s = slot(id);
  std::lock_guard lock(s.mutex);
  const bool had = s.session->outstanding().has_value();
  s.session->next_query();
  if (!had && s.session->outstanding()) persist(*s.session);
  return s.session->query_payload();
}

Json SessionStore::submit(const std::string& id, const Json& body) {
  auto& s = slot(id);
  std::lock_guard lock(s.mutex);
  const auto before = s.session->log().size();
  Json out = s.session->submit(body, now_iso());
  if (s.session->log().size() != before) persist(*s.session);
  return out;
}

Json SessionStore::belief(const std::string& id) {
  auto& s = slot(id);
  std::lock_guard lock(s.mutex);
  return s.session->belief_json();
}

Json SessionStore::summary(const std::string& id) {
  auto& s = slot(id);
  std::lock_guard lock(s.mutex);
  Json out = s.session->summary();
  out["world"] = world_to_json(s.session->world());
  out["config"] = session_config_to_json(s.session->config());
  return out;
}

Json SessionStore::export_session(const std::string& id) {
  auto& s = slot(id);
  std::lock_guard lock(s.mutex);
  return s.session->to_json();
}

Json SessionStore::holdout(const std::string& id) {
  auto& s = slot(id);
  std::lock_guard lock(s.mutex);
  return s.session->holdout();
}

}  // namespace rrl
