#pragma once
// Human-in-the-loop sessions: a scripted calibration phase against known rewards,
// a per-kind beta fit, then actively selected queries answered by the human.
// Each session persists as one JSON document; its belief is rebuilt from the
// response log alone.
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rrl/experiments.hpp"

namespace rrl {

/// Carries the HTTP status and the machine-readable code of a rejected request.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

/// Blocks of block_size queries that share one calibration reward.
/// Scripted: every block of the first kind, then every block of the next.
/// Interleaved: for each reward, one block of each kind.
struct CalibrationPlan {
  int rewards = 5;
  int block_size = 5;
  std::vector<FeedbackKind> kinds{FeedbackKind::Demonstration, FeedbackKind::Comparison};
  bool interleaved = false;
};

struct SessionConfig {
  std::string id;  // assigned when empty
  WorldConfig world{10, 10, 25, 0.1, 250.0, 0};
  std::uint64_t seed = 0;
  std::uint64_t grid_seed = 0;
  int grid_size = kDefaultGridSize;
  CalibrationPlan calibration;
  double design_beta = 1.0;  // rollouts behind comparison and e-stop designs
  int inference_rounds = 10;
  ActiveConfig active;  // beta_select and beta_infer are replaced by the fitted map
  bool use_default_beta = false;  // skip calibration and infer with default_beta for every kind
  double default_beta = 1.0;
  BetaRange beta_range;
  std::optional<Theta> hidden_theta;  // study replica: regret is reported against it
  int top_k = 5;

  static SessionConfig defaults();
  void validate() const;
};

Json session_config_to_json(const SessionConfig& c);
/// Missing keys keep their defaults; unknown keys throw.
SessionConfig session_config_from_json(const Json& j);

enum class Phase { Calibration, Inference, Complete };
std::string_view to_string(Phase p);

/// One scheduled calibration query.
struct PlannedQuery {
  int reward = 0;  // index into the session's calibration rewards
  int block = 0;
  int position = 0;  // inside the block
  FeedbackQuery query;
};

struct OutstandingQuery {
  std::string id;
  Phase phase = Phase::Calibration;
  FeedbackQuery query;
  int plan_index = -1;  // calibration only
  double eig = 0.0;     // inference only
};

struct LogEntry {
  std::string query_id;
  Phase phase = Phase::Calibration;
  int reward = -1;  // calibration reward index, -1 during inference
  FeedbackResponse response;
  std::vector<double> timestamps;  // per demonstration step, audit only
  Json client_timing;
  double eig = 0.0;
  Json result;  // summary returned for this submission, replayed for duplicates
};

/// Fitted beta for one kind. `random_like` marks fits a likelihood-ratio test cannot
/// separate from a uniformly random responder at the 5% level.
struct KindFit {
  BetaEstimate estimate;
  bool flat = false;  // objective carried no information; the default beta is used
  bool random_like = false;
};

class Session {
 public:
  /// New session in its first phase, with the calibration plan drawn from the config's seeds.
  Session(SessionConfig config, std::string created_at);
  /// Rebuilds a persisted session from its configuration and response log.
  static std::unique_ptr<Session> from_json(const Json& doc);
  Json to_json() const;

  const std::string& id() const { return config_.id; }
  const SessionConfig& config() const { return config_; }
  const GridWorld& world() const { return *world_; }
  Phase phase() const { return phase_; }
  const Belief& belief() const { return belief_; }
  const std::shared_ptr<const RewardGrid>& grid_ptr() const { return grid_; }
  const std::vector<Theta>& calibration_rewards() const { return calibration_rewards_; }
  const std::vector<PlannedQuery>& plan() const { return plan_; }
  const std::vector<LogEntry>& log() const { return log_; }
  const std::optional<OutstandingQuery>& outstanding() const { return outstanding_; }
  const std::map<FeedbackKind, KindFit>& fits() const { return fits_; }
  /// Beta per kind used for selection and inference; empty before calibration ends.
  const std::optional<BetaMap>& beta_map() const { return beta_map_; }
  int inference_rounds_done() const;

  /// The outstanding query, issuing the next one when none is pending; null once complete.
  const OutstandingQuery* next_query();
  /// Display payload for the outstanding query.
  Json query_payload() const;
  /// Appends a response to the outstanding query and returns the summary. Re-sending an answered
  /// (query id, response) pair returns the summary recorded for it without changing anything.
  Json submit(const Json& body, const std::string& now);
  Json summary() const;
  Json belief_json() const;
  /// Hold-one-out analysis of the calibration data: for each kind and reward, beta is fitted on the
  /// other rewards and inference on the held-out reward's responses is scored at that beta and the default.
  Json holdout() const;

  /// Selection settings of the inference phase: the configured pool with the beta map for both
  /// selection and inference, and a seed derived from the session seed. Round r draws its pool
  /// and selection streams from this seed exactly as active_loop does.
  ActiveConfig inference_config() const;

 private:
  void finish_calibration();
  void apply_inference(const FeedbackResponse& r);
  PolicyBankCache& cache();

  SessionConfig config_;
  std::string created_at_;
  std::string updated_at_;
  std::unique_ptr<GridWorld> world_;
  std::shared_ptr<const RewardGrid> grid_;
  std::vector<Theta> calibration_rewards_;
  std::vector<PlannedQuery> plan_;
  std::vector<LogEntry> log_;
  std::optional<OutstandingQuery> outstanding_;
  int issued_ = 0;
  Phase phase_ = Phase::Calibration;
  std::map<FeedbackKind, KindFit> fits_;
  std::optional<BetaMap> beta_map_;
  Belief belief_;
  std::vector<double> regrets_;
  std::unique_ptr<PolicyBankCache> cache_;
};

/// Rebuilds the belief of an exported session document from its log, ignoring stored weights.
Belief replay_belief(const Json& doc);

/// Sessions in memory, persisted to data_dir/<id>.json after every change. Requests for one
/// session are serialized; different sessions proceed independently.
class SessionStore {
 public:
  explicit SessionStore(std::string data_dir);

  Json create(const Json& config);
  Json next_query(const std::string& id);
  Json submit(const std::string& id, const Json& body);
  Json belief(const std::string& id);
  Json summary(const std::string& id);
  Json export_session(const std::string& id);
  Json holdout(const std::string& id);

 private:
  struct Slot {
    std::mutex mutex;
    std::unique_ptr<Session> session;
  };
  Slot& slot(const std::string& id);
  void persist(const Session& s) const;
  std::string path(const std::string& id) const;

  std::string dir_;
  std::mutex mutex_;
  std::map<std::string, std::unique_ptr<Slot>> slots_;
};

}  // namespace rrl
