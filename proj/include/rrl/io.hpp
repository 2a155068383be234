#pragma once

// JSON forms of the domain types. Trajectories are lists of [state, action]
// pairs with a null action on the final step. Non-finite doubles are written
// as the strings "inf", "-inf" and "nan" so that log-weights round-trip exactly.

#include <string>

#include "json.hpp"
#include "rrl/active.hpp"
#include "rrl/beta_fit.hpp"

namespace rrl {

using Json = nlohmann::json;

Json double_to_json(double x);
double double_from_json(const Json& j);

void to_json(Json& j, const Trajectory& t);
void from_json(const Json& j, Trajectory& t);
void to_json(Json& j, const FeedbackQuery& q);
void from_json(const Json& j, FeedbackQuery& q);
void to_json(Json& j, const FeedbackResponse& r);
void from_json(const Json& j, FeedbackResponse& r);
void to_json(Json& j, const BetaMap& b);
void from_json(const Json& j, BetaMap& b);
void to_json(Json& j, const BiasSpec& b);
void from_json(const Json& j, BiasSpec& b);
void to_json(Json& j, const BetaEstimate& e);
void from_json(const Json& j, BetaEstimate& e);
void to_json(Json& j, const CalibrationItem& c);
void from_json(const Json& j, CalibrationItem& c);
void to_json(Json& j, const RoundRecord& r);

Json theta_to_json(const Theta& t);
Theta theta_from_json(const Json& j);

/// {width, height, colors, goal: [x, y], horizon, slip_prob, completion_bonus}
Json world_to_json(const GridWorld& w);
GridWorld world_from_json(const Json& j);

/// {grid_seed, grid_size, log_weights}; the grid itself is rebuilt from its seed.
Json belief_to_json(const Belief& b);
Belief belief_from_json(const Json& j, std::shared_ptr<const RewardGrid> grid);

/// Entropy, posterior mean and the top-k points.
Json belief_summary(const Belief& b, int k = 5);

Json active_config_to_json(const ActiveConfig& c);
/// Starts from `base` and overrides any key present in j.
ActiveConfig active_config_from_json(const Json& j, ActiveConfig base = {});

/// Reads a whole file; throws std::runtime_error when it cannot be opened.
std::string read_file(const std::string& path);
/// Writes via a temporary file and rename, so readers never see a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace rrl
