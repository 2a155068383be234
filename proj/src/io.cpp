#include "rrl/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace rrl {

Json double_to_json(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

double double_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw std::invalid_argument("expected a number");
}

namespace {

const Json& need(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return j.at(key);
}

int as_int(const Json& j, const char* what) {
  if (!j.is_number_integer()) throw std::invalid_argument(std::string(what) + " must be an integer");
  return j.get<int>();
}

}  // namespace

void to_json(Json& j, const Trajectory& t) {
  j = Json::array();
  for (const auto& st : t.steps) j.push_back(Json::array({st.state, st.action == kNoAction ? Json(nullptr) : Json(st.action)}));
}

void from_json(const Json& j, Trajectory& t) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument("trajectory must be a non-empty list of [state, action]");
  t.steps.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& p = j[i];
    if (!p.is_array() || p.size() != 2) throw std::invalid_argument("trajectory step must be [state, action]");
    const bool last = i + 1 == j.size();
    if (last != p[1].is_null()) throw std::invalid_argument("only the final step carries a null action");
    t.steps.push_back({as_int(p[0], "state"), last ? kNoAction : as_int(p[1], "action")});
  }
}

void to_json(Json& j, const FeedbackQuery& q) {
  j = {{"kind", std::string(to_string(q.kind()))}};
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, DemoDesign>) j["start_state"] = d.start_state;
        if constexpr (std::is_same_v<D, ComparisonDesign>) {
          j["a"] = d.a;
          j["b"] = d.b;
        }
        if constexpr (std::is_same_v<D, EStopDesign>) j["trajectory"] = d.traj;
      },
      q.design);
}

void from_json(const Json& j, FeedbackQuery& q) {
  const auto kind = feedback_kind_from_string(need(j, "kind").get<std::string>());
  switch (kind) {
    case FeedbackKind::Demonstration: q.design = DemoDesign{as_int(need(j, "start_state"), "start_state")}; break;
    case FeedbackKind::Comparison:
      q.design = ComparisonDesign{need(j, "a").get<Trajectory>(), need(j, "b").get<Trajectory>()};
      break;
    case FeedbackKind::EStop: q.design = EStopDesign{need(j, "trajectory").get<Trajectory>()}; break;
  }
}

void to_json(Json& j, const FeedbackResponse& r) {
  j = {{"query", r.query}};
  if (const auto* t = std::get_if<Trajectory>(&r.choice)) j["choice"] = *t;
  if (const auto* p = std::get_if<Pick>(&r.choice)) j["choice"] = *p == Pick::A ? "A" : "B";
  if (const auto* s = std::get_if<StopTime>(&r.choice)) j["choice"] = s->t;
}

void from_json(const Json& j, FeedbackResponse& r) {
  r.query = need(j, "query").get<FeedbackQuery>();
  const auto& c = need(j, "choice");
  switch (r.query.kind()) {
    case FeedbackKind::Demonstration: r.choice = c.get<Trajectory>(); break;
    case FeedbackKind::Comparison: {
      const auto s = c.is_string() ? c.get<std::string>() : std::string();
      if (s != "A" && s != "B") throw std::invalid_argument("comparison choice must be \"A\" or \"B\"");
      r.choice = s == "A" ? Pick::A : Pick::B;
      break;
    }
    case FeedbackKind::EStop: r.choice = StopTime{as_int(c, "stopping time")}; break;
  }
}

void to_json(Json& j, const BetaMap& b) {
  j = Json::object();
  for (auto k : {FeedbackKind::Demonstration, FeedbackKind::Comparison, FeedbackKind::EStop})
    j[std::string(to_string(k))] = double_to_json(b[k]);
}

void from_json(const Json& j, BetaMap& b) {
  if (j.is_number()) {
    b = BetaMap::uniform(j.get<double>());
    return;
  }
  if (!j.is_object()) throw std::invalid_argument("beta map must be a number or an object");
  for (const auto& [key, value] : j.items()) b[feedback_kind_from_string(key)] = double_from_json(value);
}

void to_json(Json& j, const BiasSpec& b) {
  j = Json::object();
  if (b.myopia_gamma) j["myopia_gamma"] = *b.myopia_gamma;
  if (b.extremal_alpha) j["extremal_alpha"] = *b.extremal_alpha;
  if (b.optimism_tau) j["optimism_tau"] = *b.optimism_tau;
}

void from_json(const Json& j, BiasSpec& b) {
  if (!j.is_object()) throw std::invalid_argument("bias must be an object");
  b = {};
  for (const auto& [key, value] : j.items()) {
    if (value.is_null()) continue;
    if (key == "myopia_gamma") b.myopia_gamma = value.get<double>();
    else if (key == "extremal_alpha") b.extremal_alpha = value.get<double>();
    else if (key == "optimism_tau") b.optimism_tau = value.get<double>();
    else throw std::invalid_argument("unknown bias field '" + key + "'");
  }
  b.validate();
}

void to_json(Json& j, const BetaEstimate& e) {
  j = {{"kind", std::string(to_string(e.kind))},
       {"value", e.value},
       {"log_likelihood", double_to_json(e.log_likelihood)},
       {"low", e.low},
       {"high", e.high},
       {"at_boundary", e.at_boundary}};
}

void from_json(const Json& j, BetaEstimate& e) {
  e.kind = feedback_kind_from_string(need(j, "kind").get<std::string>());
  e.value = need(j, "value").get<double>();
  e.log_likelihood = double_from_json(need(j, "log_likelihood"));
  e.low = need(j, "low").get<double>();
  e.high = need(j, "high").get<double>();
  e.at_boundary = need(j, "at_boundary").get<bool>();
}

Json theta_to_json(const Theta& t) { return Json::array({t[0], t[1], t[2], t[3]}); }

Theta theta_from_json(const Json& j) {
  if (!j.is_array() || j.size() != kNumColors) throw std::invalid_argument("reward vector must have four entries");
  Theta t{};
  for (int c = 0; c < kNumColors; ++c) t[c] = j[static_cast<std::size_t>(c)].get<double>();
  return t;
}

void to_json(Json& j, const CalibrationItem& c) { j = {{"theta", theta_to_json(c.theta)}, {"response", c.response}}; }

void from_json(const Json& j, CalibrationItem& c) {
  c.theta = theta_from_json(need(j, "theta"));
  c.response = need(j, "response").get<FeedbackResponse>();
}

void to_json(Json& j, const RoundRecord& r) {
  j = {{"round", r.round},
       {"selected_kind", std::string(to_string(r.kind))},
       {"design_id", r.design_index},
       {"eig", r.eig},
       {"response", r.response},
       {"post_entropy", r.post_entropy},
       {"regret", r.regret},
       {"mse", r.mse}};
}

Json world_to_json(const GridWorld& w) {
  return {{"width", w.width()},
          {"height", w.height()},
          {"colors", w.colors()},
          {"goal", Json::array({w.goal().first, w.goal().second})},
          {"horizon", w.horizon()},
          {"slip_prob", w.slip_prob()},
          {"completion_bonus", w.completion_bonus()}};
}

GridWorld world_from_json(const Json& j) {
  const auto& goal = need(j, "goal");
  if (!goal.is_array() || goal.size() != 2) throw std::invalid_argument("goal must be [x, y]");
  return GridWorld(as_int(need(j, "width"), "width"), as_int(need(j, "height"), "height"),
                   need(j, "colors").get<std::vector<int>>(), {goal[0].get<int>(), goal[1].get<int>()},
                   as_int(need(j, "horizon"), "horizon"), need(j, "slip_prob").get<double>(),
                   need(j, "completion_bonus").get<double>());
}

Json belief_to_json(const Belief& b) {
  Json lw = Json::array();
  for (double x : b.log_weights()) lw.push_back(double_to_json(x));
  return {{"grid_seed", b.grid().seed()}, {"grid_size", b.size()}, {"log_weights", lw}};
}

Belief belief_from_json(const Json& j, std::shared_ptr<const RewardGrid> grid) {
  if (need(j, "grid_seed").get<std::uint64_t>() != grid->seed() || need(j, "grid_size").get<int>() != grid->size())
    throw std::invalid_argument("belief was stored against a different reward grid");
  std::vector<double> lw;
  for (const auto& x : need(j, "log_weights")) lw.push_back(double_from_json(x));
  if (static_cast<int>(lw.size()) != grid->size()) throw std::invalid_argument("log-weight count does not match grid");
  return Belief(std::move(grid), std::move(lw));
}

Json belief_summary(const Belief& b, int k) {
  Json top = Json::array();
  for (const auto& p : top_k(b, k))
    top.push_back({{"index", p.index}, {"theta", theta_to_json(p.theta)}, {"weight", p.weight}});
  return {{"entropy", entropy(b)}, {"posterior_mean", theta_to_json(posterior_mean(b))}, {"top_k", top}};
}

Json active_config_to_json(const ActiveConfig& c) {
  Json kinds = Json::array();
  for (auto k : {FeedbackKind::Demonstration, FeedbackKind::Comparison, FeedbackKind::EStop})
    if (c.kinds[static_cast<std::size_t>(k)]) kinds.push_back(std::string(to_string(k)));
  return {{"beta_select", c.beta_select},
          {"beta_infer", c.beta_infer},
          {"kinds", kinds},
          {"demo_eig_samples", c.demo_eig_samples},
          {"pool_trajectories", c.pool_trajectories},
          {"estop_trajectories", c.estop_trajectories},
          {"max_demo_starts", c.max_demo_starts},
          {"pool_beta", c.pool_beta},
          {"support_cap", c.support_cap},
          {"support_tol", c.support_tol},
          {"exact", c.exact},
          {"demo_outer_draws", c.demo_outer_draws},
          {"seed", c.seed}};
}

ActiveConfig active_config_from_json(const Json& j, ActiveConfig c) {
  if (!j.is_object()) throw std::invalid_argument("active config must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "beta_select") c.beta_select = v.get<BetaMap>();
    else if (key == "beta_infer") c.beta_infer = v.get<BetaMap>();
    else if (key == "kinds") {
      c.kinds = {false, false, false};
      for (const auto& k : v) c.kinds[static_cast<std::size_t>(feedback_kind_from_string(k.get<std::string>()))] = true;
    } else if (key == "demo_eig_samples") c.demo_eig_samples = v.get<int>();
    else if (key == "pool_trajectories") c.pool_trajectories = v.get<int>();
    else if (key == "estop_trajectories") c.estop_trajectories = v.get<int>();
    else if (key == "max_demo_starts") c.max_demo_starts = v.get<int>();
    else if (key == "pool_beta") c.pool_beta = v.get<double>();
    else if (key == "support_cap") c.support_cap = v.get<int>();
    else if (key == "support_tol") c.support_tol = v.get<double>();
    else if (key == "exact") c.exact = v.get<bool>();
    else if (key == "demo_outer_draws") c.demo_outer_draws = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown active config field '" + key + "'");
  }
  c.validate();
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const auto tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace rrl
