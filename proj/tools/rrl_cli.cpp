// Command-line entry point: simulation studies, one-off beta fits and posterior
// updates, and the feedback service.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "rrl/experiments.hpp"
#include "rrl/http.hpp"
#include "rrl/service.hpp"

using namespace rrl;

namespace {

struct ExperimentArgs {
  std::string config_path;
  std::string out_dir;
  bool full_scale = false;
  bool print_config = false;
  std::vector<std::string> overrides;
};

Json load_json(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void write_output(const Json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
  } else {
    write_file_atomic(path, j.dump(2) + "\n");
  }
}

ExperimentConfig resolve_config(ExperimentKind kind, const ExperimentArgs& a) {
  Json j = config_to_json(default_config(kind, a.full_scale));
  if (!a.config_path.empty()) {
    Json file = load_json(a.config_path);
    if (!file.is_object()) throw std::invalid_argument(a.config_path + ": config must be a JSON object");
    if (file.contains("kind") && file.at("kind") != std::string(to_string(kind)))
      throw std::invalid_argument(a.config_path + ": config is for '" + file.at("kind").get<std::string>() +
                                  "', not '" + std::string(to_string(kind)) + "'");
    j.merge_patch(file);
  }
  j = apply_overrides(j, a.overrides);
  if (j.value("kind", "") != to_string(kind)) throw std::invalid_argument("overrides may not change the experiment kind");
  return config_from_json(j);
}

int run_experiment_command(ExperimentKind kind, const ExperimentArgs& a) {
  const auto cfg = resolve_config(kind, a);
  if (a.print_config) {
    std::cout << config_to_json(cfg).dump(2) << "\n";
    return 0;
  }
  const std::string out = a.out_dir.empty() ? "out/" + std::string(to_string(kind)) : a.out_dir;
  std::cerr << "running " << to_string(kind) << " (config " << config_hash(cfg) << ") into " << out << "\n";
  const auto manifest = run_experiment(cfg, out);
  for (const auto& f : manifest.at("outputs")) std::cerr << "  wrote " << (std::filesystem::path(out) / f.get<std::string>()).string() << "\n";
  std::cerr << "  " << manifest.at("cells_completed") << " cells in " << manifest.at("timing").at("total_seconds")
            << " s\n";
  if (kind == ExperimentKind::ToyCrossover) std::cout << "crossover_beta " << manifest.at("crossover_beta") << "\n";
  if (kind == ExperimentKind::BoltzmannSweep || kind == ExperimentKind::BiasSweep)
    std::cout << read_file((std::filesystem::path(out) / "summary.csv").string());
  if (kind == ExperimentKind::ActiveAblation)
    std::cout << read_file((std::filesystem::path(out) / "ablation_summary.csv").string());
  return manifest.at("status") == "complete" ? 0 : 1;
}

// Either a session export or {world, items, beta_range?}.
int fit_beta_command(const std::string& input, const std::string& output) {
  const Json in = load_json(input);
  Json out = Json::object();
  if (in.value("format", "") == "rrl-session v1") {
    // Replaying the log refits rather than trusting the stored fits.
    const auto session = Session::from_json(in);
    if (session->fits().empty()) throw std::invalid_argument("session has no completed calibration phase");
    out = session->belief_json().at("fits");
    write_output(out, output);
    return 0;
  }
  const auto world = world_from_json(in.at("world"));
  BetaRange range;
  if (in.contains("beta_range")) {
    const auto& r = in.at("beta_range");
    range.low = r.value("low", range.low);
    range.high = r.value("high", range.high);
    range.grid_points = r.value("grid_points", range.grid_points);
  }
  std::map<FeedbackKind, CalibrationSet> by_kind;
  for (const auto& item : in.at("items")) {
    auto c = item.get<CalibrationItem>();
    validate_response(world.mdp(), c.response);
    by_kind[c.response.kind()].items.push_back(std::move(c));
  }
  if (by_kind.empty()) throw std::invalid_argument("no calibration items");
  for (const auto& [kind, cal] : by_kind) {
    try {
      out[std::string(to_string(kind))] = fit_beta_mle(world.mdp(), cal, range);
    } catch (const FlatObjectiveError& e) {
      out[std::string(to_string(kind))] = {{"error", "flat_objective"}, {"message", e.what()}};
    }
  }
  write_output(out, output);
  return 0;
}

// Either a session export (its belief is replayed from the log) or
// {world, responses, beta, bias?, grid_seed?, grid_size?}.
int infer_command(const std::string& input, const std::string& output, const std::string& belief_out, int top_k) {
  const Json in = load_json(input);
  std::optional<Belief> post;
  if (in.value("format", "") == "rrl-session v1") {
    post = replay_belief(in);
  } else {
    const auto world = world_from_json(in.at("world"));
    auto grid = std::make_shared<const RewardGrid>(
        RewardGrid::make(in.value("grid_seed", std::uint64_t{0}), in.value("grid_size", kDefaultGridSize)));
    std::vector<FeedbackResponse> responses;
    for (const auto& r : in.at("responses")) {
      responses.push_back(r.get<FeedbackResponse>());
      validate_response(world.mdp(), responses.back());
    }
    ObservationModel model = ObservationModel::boltzmann(in.contains("beta") ? in.at("beta").get<BetaMap>() : BetaMap{});
    if (in.contains("bias")) model.bias = in.at("bias").get<BiasSpec>();
    post = update(Belief::uniform(grid), world.mdp(), responses, model);
  }
  write_output(belief_summary(*post, top_k), output);
  if (!belief_out.empty()) write_file_atomic(belief_out, belief_to_json(*post).dump() + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward inference with misspecified human rationality"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    ExperimentKind kind;
    const char* help;
  };
  const Sub subs[] = {
      {"sweep-boltzmann", ExperimentKind::BoltzmannSweep, "Fitted/Default/Oracle regret over true beta"},
      {"sweep-bias", ExperimentKind::BiasSweep, "Fitted/Default/Oracle regret over biased responders"},
      {"ablate-active", ExperimentKind::ActiveAblation, "correct/default beta for query selection and inference"},
      {"diagnostics", ExperimentKind::Diagnostics, "beta variance over rewards and KL scatter per bias"},
      {"toy-crossover", ExperimentKind::ToyCrossover, "information of demonstrations vs comparisons in the toy model"},
  };
  std::map<std::string, ExperimentArgs> args;
  std::map<CLI::App*, ExperimentKind> kinds;
  for (const auto& s : subs) {
    auto& a = args[s.name];
    auto* cmd = app.add_subcommand(s.name, s.help);
    cmd->add_option("-c,--config", a.config_path, "JSON config; missing keys keep their defaults")->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", a.out_dir, "output directory (default out/<experiment>)");
    cmd->add_flag("--full-scale", a.full_scale, "start from the wider grids instead of the desk-scale defaults");
    cmd->add_flag("--print-config", a.print_config, "print the resolved config and exit");
    cmd->add_option("overrides", a.overrides, "key=value overrides, dotted paths (e.g. world.width=8)");
    kinds[cmd] = s.kind;
  }

  std::string fit_in, fit_out;
  auto* fit = app.add_subcommand("fit-beta", "fit beta per kind from calibration items or a session export");
  fit->add_option("input", fit_in, "JSON input")->required()->check(CLI::ExistingFile);
  fit->add_option("-o,--out", fit_out, "output file (default stdout)");

  std::string infer_in, infer_out, belief_out;
  int top_k = 5;
  auto* infer = app.add_subcommand("infer", "posterior over the reward grid from responses or a session export");
  infer->add_option("input", infer_in, "JSON input")->required()->check(CLI::ExistingFile);
  infer->add_option("-o,--out", infer_out, "summary output file (default stdout)");
  infer->add_option("--belief-out", belief_out, "also write the full log-weight vector");
  infer->add_option("-k,--top-k", top_k, "points listed in the summary")->check(CLI::PositiveNumber);

  std::string host = "127.0.0.1", data_dir = "sessions", cors = "*";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP feedback service");
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("-p,--port", port, "port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("-d,--data-dir", data_dir, "directory of persisted sessions");
  serve_cmd->add_option("--cors-origin", cors, "Access-Control-Allow-Origin value");

  CLI11_PARSE(app, argc, argv);

  try {
    for (auto* cmd : app.get_subcommands()) {
      if (auto it = kinds.find(cmd); it != kinds.end()) return run_experiment_command(it->second, args[cmd->get_name()]);
      if (cmd == fit) return fit_beta_command(fit_in, fit_out);
      if (cmd == infer) return infer_command(infer_in, infer_out, belief_out, top_k);
      if (cmd == serve_cmd) {
        SessionStore store(data_dir);
        std::cerr << "serving on http://" << host << ":" << port << " (sessions in " << data_dir << ")\n";
        return serve(store, host, port, cors) ? 0 : 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
