#include <atomic>
#include <cstring>
#include <set>
#include <unistd.h>
#include <filesystem>
#include <thread>

#include "doctest.h"
#include "helpers.hpp"
#include "rrl/http.hpp"
#include "rrl/service.hpp"

using namespace rrl;
using namespace rrl::testing;

namespace {

std::string temp_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto p = std::filesystem::temp_directory_path() /
           ("rrl-service-" + name + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  return p.string();
}

// 5x5 world, 100-point grid, two calibration rewards with blocks of three, three inference rounds.
Json small_config(const std::string& id = "") {
  Json j = {{"world", {{"width", 5}, {"height", 5}, {"horizon", 10}, {"completion_bonus", 10.0}}},
            {"grid_size", 100},
            {"seed", 3},
            {"calibration", {{"rewards", 2}, {"block_size", 3}}},
            {"inference_rounds", 3},
            {"active", {{"pool_trajectories", 4}, {"max_demo_starts", 4}, {"demo_outer_draws", 0}}}};
  if (!id.empty()) j["id"] = id;
  return j;
}

Json choice_of(const FeedbackResponse& r) { return Json(r).at("choice"); }

// Answers the outstanding query of a session as a simulated human who knows the shown reward.
Json answer(Session& s, SimulatedHuman& human, const Theta& inference_truth) {
  const auto* q = s.next_query();
  REQUIRE(q != nullptr);
  const Theta theta = q->phase == Phase::Calibration
                          ? s.calibration_rewards()[static_cast<std::size_t>(s.plan()[static_cast<std::size_t>(q->plan_index)].reward)]
                          : inference_truth;
  const auto r = human.respond(q->query, theta);
  return s.submit({{"query_id", q->id}, {"choice", choice_of(r)}}, "t");
}

void expect_error(const std::function<void()>& f, int status, const std::string& code) {
  try {
    f();
    FAIL("expected a ServiceError with code " << code);
  } catch (const ServiceError& e) {
    CHECK(e.status() == status);
    CHECK(e.code() == code);
  }
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  return true;
}

}  // namespace

TEST_CASE("default session config") {
  const auto c = session_config_from_json(Json::object());
  CHECK(session_config_to_json(c) == session_config_to_json(SessionConfig::defaults()));
  CHECK(session_config_to_json(session_config_from_json(session_config_to_json(c))) == session_config_to_json(c));

  Session s(c, "t");
  const auto& w = s.world();
  CHECK(w.width() == 10);
  CHECK(w.height() == 10);
  CHECK(w.horizon() == 25);
  CHECK(w.completion_bonus() == 250.0);
  std::set<int> colors(w.colors().begin(), w.colors().end());
  CHECK(colors == std::set<int>{0, 1, 2, 3});
  CHECK(s.belief().size() == 1000);
  CHECK(s.config().active.demo_outer_draws == 200);

  // 5 rewards in blocks of 5: all demonstrations first, then all comparisons.
  REQUIRE(s.plan().size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& p = s.plan()[i];
    CHECK(p.query.kind() == (i < 25 ? FeedbackKind::Demonstration : FeedbackKind::Comparison));
    CHECK(p.block == static_cast<int>(i / 5));
    CHECK(p.position == static_cast<int>(i % 5));
    CHECK(p.reward == static_cast<int>((i / 5) % 5));
  }
  CHECK(s.calibration_rewards().size() == 5);

  const auto* q = s.next_query();
  REQUIRE(q);
  CHECK(q->phase == Phase::Calibration);
  const auto payload = s.query_payload();
  CHECK(payload["kind"] == "demo");
  CHECK(payload["calibration"]["block"] == 0);
  CHECK(payload["calibration"]["position"] == 0);
  CHECK(payload["calibration"]["new_block"] == true);
  CHECK(payload["calibration"]["reward_legend"] == theta_to_json(s.calibration_rewards()[0]));
  CHECK(s.belief_json()["entropy"].get<double>() == doctest::Approx(std::log(1000.0)).epsilon(1e-12));
}

TEST_CASE("interleaved calibration plan") {
  auto j = small_config();
  j["calibration"]["order"] = "interleaved";
  Session s(session_config_from_json(j), "t");
  REQUIRE(s.plan().size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(s.plan()[i].query.kind() == ((i / 3) % 2 == 0 ? FeedbackKind::Demonstration : FeedbackKind::Comparison));
    CHECK(s.plan()[i].reward == static_cast<int>(i / 6));
  }
  CHECK(s.to_json()["calibration"]["order"] == "interleaved");
}

TEST_CASE("session config errors") {
  expect_error([] { session_config_from_json({{"colour", 1}}); }, 400, "invalid_config");
  expect_error([] { session_config_from_json({{"world", {{"depth", 1}}}}); }, 400, "invalid_config");
  expect_error([] { session_config_from_json({{"id", "../etc"}}); }, 400, "invalid_config");
  expect_error([] { session_config_from_json({{"world", {{"slip", 1.5}}}}); }, 400, "invalid_config");
  expect_error([] { session_config_from_json({{"calibration", {{"order", "random"}}}}); }, 400, "invalid_config");
  expect_error([] { session_config_from_json({{"grid_size", "many"}}); }, 400, "invalid_config");
  // E-stops pooled for inference need a calibrated beta or the explicit default opt-in.
  expect_error([] { session_config_from_json({{"active", {{"kinds", {"demo", "comp", "estop"}}}}}); }, 400,
               "invalid_config");
  CHECK_NOTHROW(session_config_from_json({{"active", {{"kinds", {"estop"}}}}, {"use_default_beta", true}}));
}

TEST_CASE("slip override 0 gives deterministic dynamics") {
  auto j = small_config();
  j["world"]["slip"] = 0.0;
  Session s(session_config_from_json(j), "t");
  const Mdp& mdp = s.world().mdp();
  for (int st = 0; st < mdp.num_states(); ++st)
    for (int a = 0; a < mdp.num_actions(); ++a) {
      const auto succ = mdp.successors(st, a);
      REQUIRE(succ.size() == 1);
      CHECK(succ[0].prob == 1.0);
    }
}

TEST_CASE("calibration phase gate, fits and the first inference query") {
  auto s = Session(session_config_from_json(small_config()), "t");
  SimulatedHuman human(s.world().mdp(), {BetaMap::uniform(1.0), {}, 5});
  const Theta truth = (*std::make_shared<RewardGrid>(RewardGrid::make(0, 100)))[17];
  for (std::size_t i = 0; i < s.plan().size(); ++i) {
    CHECK(s.phase() == Phase::Calibration);
    CHECK(!s.beta_map());
    const auto* q = s.next_query();
    REQUIRE(q);
    CHECK(q->phase == Phase::Calibration);
    CHECK(q->query == s.plan()[i].query);
    expect_error([&] { (void)s.inference_config(); }, 409, "calibration_incomplete");
    expect_error([&] { (void)s.holdout(); }, 409, "calibration_incomplete");
    answer(s, human, truth);
  }
  REQUIRE(s.phase() == Phase::Inference);
  REQUIRE(s.fits().size() == 2);
  const BetaMap beta = *s.beta_map();
  CHECK(beta[FeedbackKind::Demonstration] == s.fits().at(FeedbackKind::Demonstration).estimate.value);
  CHECK(beta[FeedbackKind::Comparison] == s.fits().at(FeedbackKind::Comparison).estimate.value);
  CHECK(beta[FeedbackKind::EStop] == 1.0);

  // The fit equals an offline fit of the same calibration items.
  CalibrationSet comps;
  for (const auto& e : s.log())
    if (e.response.kind() == FeedbackKind::Comparison)
      comps.items.push_back({s.calibration_rewards()[static_cast<std::size_t>(e.reward)], e.response});
  CHECK(fit_beta_mle(s.world().mdp(), comps).value == beta[FeedbackKind::Comparison]);

  // First inference query: the same choice the harness's active loop makes at this belief and beta map.
  const auto* q = s.next_query();
  REQUIRE(q);
  CHECK(q->phase == Phase::Inference);
  PolicyBankCache cache(s.world().mdp(), s.grid_ptr());
  const auto trace = active_loop(s.world().mdp(), Belief::uniform(s.grid_ptr()),
                                 {beta, {}, 99}, truth, s.inference_config(), 1, std::nullopt, &cache);
  CHECK(trace.rounds[0].response.query == q->query);
  CHECK(trace.rounds[0].eig == doctest::Approx(q->eig).epsilon(1e-12));
  CHECK(s.query_payload()["inference"]["round"] == 1);
}

TEST_CASE("completion, idempotency and response validation") {
  auto s = Session(session_config_from_json(small_config()), "t");
  SimulatedHuman human(s.world().mdp(), {BetaMap::uniform(2.0), {}, 11});
  const Theta truth = normalized(Theta{1, -0.5, 0.2, -1});
  while (s.phase() == Phase::Calibration) answer(s, human, truth);

  // Validation of the outstanding query.
  const auto* q = s.next_query();
  REQUIRE(q);
  const std::string id = q->id;
  const auto good = human.respond(q->query, truth);
  expect_error([&] { s.submit({{"query_id", "q999"}, {"choice", choice_of(good)}}, "t"); }, 409, "stale_query");
  expect_error([&] { s.submit({{"choice", choice_of(good)}}, "t"); }, 400, "invalid_request");
  Json bad_choice = q->query.kind() == FeedbackKind::Comparison ? Json("C") : Json(Json::array({{0, 0}}));
  expect_error([&] { s.submit({{"query_id", id}, {"choice", bad_choice}}, "t"); }, 400, "invalid_response");
  expect_error([&] { s.submit({{"query_id", id}, {"choice", choice_of(good)}, {"timestamps", {3.0, 1.0}}}, "t"); }, 400,
               "invalid_timestamps");
  CHECK(s.inference_rounds_done() == 0);

  const auto first = s.submit({{"query_id", id}, {"choice", choice_of(good)}, {"timestamps", {0.0, 167.0}}}, "t");
  const auto log_size = s.log().size();
  const auto weights = s.belief().log_weights();
  // Re-sending the same answer is a no-op that returns the recorded summary.
  CHECK(s.submit({{"query_id", id}, {"choice", choice_of(good)}}, "later") == first);
  CHECK(s.log().size() == log_size);
  CHECK(bitwise_equal(s.belief().log_weights(), weights));
  if (good.kind() == FeedbackKind::Comparison) {
    const Json other = choice_of(good) == "A" ? Json("B") : Json("A");
    expect_error([&] { s.submit({{"query_id", id}, {"choice", other}}, "t"); }, 409, "conflicting_resubmission");
  }

  while (s.phase() == Phase::Inference) answer(s, human, truth);
  CHECK(s.inference_rounds_done() == 3);
  CHECK(s.next_query() == nullptr);
  const auto payload = s.query_payload();
  CHECK(payload["status"] == "complete");
  CHECK(payload["session"]["phase"] == "complete");
  CHECK(payload["session"]["belief"]["entropy"].get<double>() < std::log(100.0));
  expect_error([&] { s.submit({{"query_id", "q1000"}, {"choice", "A"}}, "t"); }, 409, "session_complete");
}

TEST_CASE("replay and persistence reproduce the belief bit for bit") {
  const auto dir = temp_dir("replay");
  Json exported, belief;
  std::vector<double> weights;
  {
    SessionStore store(dir);
    auto j = small_config("replay1");
    j["hidden_theta"] = theta_to_json(normalized(Theta{0.3, -1, 0.5, 0.8}));
    j["inference_rounds"] = 5;
    store.create(j);
    auto doc = store.export_session("replay1");
    auto s = Session::from_json(doc);
    SimulatedHuman human(s->world().mdp(), {BetaMap::uniform(1.0), {}, 21});
    const Theta truth = *s->config().hidden_theta;
    // Drive the store with the answers of a simulated human.
    for (;;) {
      const auto q = store.next_query("replay1");
      if (q["status"] == "complete") break;
      const auto query = q["query"].get<FeedbackQuery>();
      const Theta theta = q["phase"] == "calibration" ? theta_from_json(q["calibration"]["reward_legend"]) : truth;
      store.submit("replay1", {{"query_id", q["query_id"]}, {"choice", choice_of(human.respond(query, theta))}});
    }
    exported = store.export_session("replay1");
    belief = store.belief("replay1");
    CHECK(exported["phase"] == "complete");
    CHECK(store.summary("replay1")["regret"].is_number());
  }
  int demos = 0;
  for (const auto& e : exported["log"])
    demos += e["phase"] == "inference" && e["response"]["query"]["kind"] == "demo";
  MESSAGE("inference demonstrations in the replayed log: " << demos);

  // Stored weights are compared raw: reloading through the Belief constructor would renormalize them.
  std::vector<double> stored;
  for (const auto& x : exported["belief"]["log_weights"]) stored.push_back(double_from_json(x));
  CHECK(bitwise_equal(replay_belief(exported).log_weights(), stored));
  CHECK(bitwise_equal(Session::from_json(exported)->belief().log_weights(), stored));

  // A new store over the same directory restores the session from disk.
  SessionStore again(dir);
  CHECK(again.belief("replay1") == belief);
  CHECK(again.export_session("replay1") == exported);
  std::filesystem::remove_all(dir);
}

TEST_CASE("outstanding queries survive a restart") {
  const auto dir = temp_dir("restart");
  Json q;
  {
    SessionStore store(dir);
    store.create(small_config("r1"));
    q = store.next_query("r1");
  }
  SessionStore store(dir);
  CHECK(store.next_query("r1") == q);
  expect_error([&] { store.create(small_config("r1")); }, 409, "duplicate_id");
  expect_error([&] { store.summary("nope"); }, 404, "unknown_session");
  expect_error([&] { store.summary("../r1"); }, 404, "unknown_session");
  const auto created = store.create(small_config());
  CHECK(created["id"].get<std::string>().size() > 8);
  CHECK(created["world"]["width"] == 5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("display payloads") {
  auto j = small_config();
  j["calibration"]["kinds"] = {"comp", "estop"};
  j["active"]["kinds"] = {"comp"};
  Session s(session_config_from_json(j), "t");
  SimulatedHuman human(s.world().mdp(), {BetaMap::uniform(1.0), {}, 4});
  for (std::size_t i = 0; i < s.plan().size(); ++i) {
    s.next_query();
    const auto p = s.query_payload();
    for (const auto& [name, trace] : p["traces"].items()) {
      const auto& design = p["query"];
      const auto traj = (name == "trajectory" ? design["trajectory"] : design[name]).get<Trajectory>();
      CHECK(trace["cells"].size() == traj.steps.size());
      int counted = trace["goal_steps"].get<int>();
      for (int c : trace["color_counts"]) counted += c;
      CHECK(counted == trace["steps"].get<int>());
      CHECK(counted == traj.num_actions());
      for (std::size_t k = 0; k < traj.steps.size(); ++k) {
        CHECK(trace["cells"][k][0] == s.world().x_of(traj.steps[k].state));
        CHECK(trace["cells"][k][1] == s.world().y_of(traj.steps[k].state));
      }
    }
    CHECK(p["traces"].size() == (p["kind"] == "comp" ? 2u : 1u));
    answer(s, human, Theta{});
  }
  CHECK(s.fits().count(FeedbackKind::EStop) == 1);
}

TEST_CASE("uniformly random comparisons fit a beta near 0 and are flagged") {
  // Oracle: a beta = 0 responder picks A or B with probability 1/2 regardless of the reward.
  int flagged = 0;
  std::vector<double> betas;
  for (int k = 0; k < 20; ++k) {
    auto j = small_config();
    j["seed"] = 100 + k;
    j["calibration"] = {{"rewards", 5}, {"block_size", 5}, {"kinds", {"comp"}}};
    j["active"]["kinds"] = {"comp"};
    Session s(session_config_from_json(j), "t");
    Rng coin(static_cast<std::uint64_t>(k));
    while (s.phase() == Phase::Calibration) {
      const auto* q = s.next_query();
      s.submit({{"query_id", q->id}, {"choice", coin() % 2 ? "A" : "B"}}, "t");
    }
    const auto& fit = s.fits().at(FeedbackKind::Comparison);
    flagged += fit.random_like;
    betas.push_back(fit.estimate.value);
  }
  std::sort(betas.begin(), betas.end());
  MESSAGE("flagged " << flagged << " of 20; median beta " << betas[10]);
  CHECK(flagged >= 17);
  CHECK(betas[10] < 0.2);

  // A beta = 5 responder is separated from random.
  auto j = small_config();
  j["calibration"] = {{"rewards", 5}, {"block_size", 5}, {"kinds", {"comp"}}};
  j["active"]["kinds"] = {"comp"};
  Session s(session_config_from_json(j), "t");
  SimulatedHuman human(s.world().mdp(), {BetaMap::uniform(5.0), {}, 8});
  while (s.phase() == Phase::Calibration) answer(s, human, Theta{});
  CHECK(!s.fits().at(FeedbackKind::Comparison).random_like);
}

TEST_CASE("comparison answers reduce entropy in expectation over sessions") {
  // Oracle: with the truth drawn from the prior and the answer from the model, the expected posterior
  // entropy is H(prior) minus the query's expected entropy reduction.
  auto j = small_config();
  j["use_default_beta"] = true;
  j["active"]["kinds"] = {"comp"};
  const auto cfg = session_config_from_json(j);
  Session first(cfg, "t");
  const auto* q = first.next_query();
  REQUIRE(q);
  const auto grid = std::make_shared<const RewardGrid>(RewardGrid::make(0, 100));
  const double prior = std::log(100.0);
  const double expected = prior - expected_entropy_reduction(first.world().mdp(), Belief::uniform(grid), q->query,
                                                             BetaMap::uniform(1.0));
  std::vector<double> hs;
  Rng rng(7);
  for (int n = 0; n < 400; ++n) {
    Session s(cfg, "t");
    const auto* sq = s.next_query();
    REQUIRE(sq->query == q->query);
    const Theta truth = (*grid)[std::uniform_int_distribution<int>(0, 99)(rng)];
    SimulatedHuman human(s.world().mdp(), {BetaMap::uniform(1.0), {}, rng()});
    const auto summary = s.submit({{"query_id", sq->id}, {"choice", choice_of(human.respond(sq->query, truth))}}, "t");
    hs.push_back(summary["belief"]["entropy"].get<double>());
    CHECK(hs.back() < prior);
  }
  const auto stat = mean_sem(hs);
  MESSAGE("mean posterior entropy " << stat.mean << " +- " << stat.sem << ", exact " << expected);
  CHECK(stat.mean <= prior);
  CHECK(std::abs(stat.mean - expected) <= 4 * stat.sem + 1e-12);
}

TEST_CASE("belief summaries") {
  const auto grid = std::make_shared<const RewardGrid>(RewardGrid::make(0, 10));
  std::vector<double> lw(10, kNegInf);
  lw[3] = 0.0;
  const auto summary = belief_summary(Belief(grid, lw), 5);
  CHECK(summary["entropy"].get<double>() == 0.0);
  CHECK(summary["top_k"][0]["index"] == 3);
  CHECK(summary["top_k"][0]["weight"].get<double>() == 1.0);
}

TEST_CASE("hold-one-out analysis") {
  auto s = Session(session_config_from_json(small_config()), "t");
  SimulatedHuman human(s.world().mdp(), {BetaMap::uniform(1.0), {}, 31});
  while (s.phase() == Phase::Calibration) answer(s, human, Theta{});
  const auto h = s.holdout();
  const Mdp& mdp = s.world().mdp();
  for (auto kind : {FeedbackKind::Demonstration, FeedbackKind::Comparison}) {
    const auto& rows = h[std::string(to_string(kind))]["trials"];
    REQUIRE(rows.size() == 2);
    for (int held = 0; held < 2; ++held) {
      CalibrationSet others;
      for (const auto& e : s.log())
        if (e.response.kind() == kind && e.reward != held)
          others.items.push_back({s.calibration_rewards()[static_cast<std::size_t>(e.reward)], e.response});
      CHECK(rows[held]["fit"]["beta"].get<double>() == fit_beta_mle(mdp, others).value);
      const double r = rows[held]["fitted"]["regret"].get<double>();
      CHECK(std::isfinite(r));
    }
  }
}

TEST_CASE("http routes") {
  const auto dir = temp_dir("http");
  SessionStore store(dir);
  httplib::Server server;
  mount_routes(server, store, "http://localhost:5173");
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  auto res = client.Post("/sessions", small_config("web").dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
  CHECK(Json::parse(res->body)["phase"] == "calibration");

  res = client.Post("/sessions", small_config("web").dump(), "application/json");
  CHECK(res->status == 409);
  CHECK(Json::parse(res->body) == Json{{"code", "duplicate_id"}, {"message", "session 'web' already exists"}});

  res = client.Post("/sessions", "{not json", "application/json");
  CHECK(res->status == 400);
  CHECK(Json::parse(res->body)["code"] == "invalid_json");

  res = client.Get("/sessions/missing/query");
  CHECK(res->status == 404);
  CHECK(Json::parse(res->body)["code"] == "unknown_session");

  res = client.Get("/nowhere");
  CHECK(res->status == 404);
  CHECK(Json::parse(res->body)["code"] == "not_found");

  res = client.Options("/sessions/web/feedback");
  CHECK(res->status == 204);
  CHECK(res->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);

  res = client.Get("/sessions/web/query");
  REQUIRE(res->status == 200);
  const auto q = Json::parse(res->body);
  CHECK(q["phase"] == "calibration");
  CHECK(q["kind"] == "demo");
  const auto query = q["query"].get<FeedbackQuery>();

  // One step up from the designed start is always in the support; a jump across the grid is not.
  const auto world = world_from_json(Json::parse(client.Get("/sessions/web")->body)["world"]);
  const int start = std::get<DemoDesign>(query.design).start_state;
  const int far = (start + 12) % 25;
  res = client.Post("/sessions/web/feedback",
                    Json{{"query_id", q["query_id"]}, {"choice", {{start, 0}, {far, nullptr}}}}.dump(), "application/json");
  if (far != world.move_target(start, Move::Up)) {
    CHECK(res->status == 400);
    CHECK(Json::parse(res->body)["code"] == "invalid_response");
  }
  const Json traj = Json::array({{start, 0}, {world.move_target(start, Move::Up), nullptr}});
  res = client.Post("/sessions/web/feedback",
                    Json{{"query_id", q["query_id"]}, {"choice", traj}, {"timestamps", {0, 166}}}.dump(), "application/json");
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body)["calibration"]["done"] == 1);

  res = client.Get("/sessions/web/belief");
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body)["entropy"].get<double>() == doctest::Approx(std::log(100.0)));

  res = client.Get("/sessions/web/export");
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body)["format"] == "rrl-session v1");

  res = client.Get("/sessions/web/holdout");
  CHECK(res->status == 409);
  CHECK(Json::parse(res->body)["code"] == "calibration_incomplete");

  res = client.Get("/sessions/web");
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body)["world"]["width"] == 5);

  server.stop();
  thread.join();
  std::filesystem::remove_all(dir);
}
