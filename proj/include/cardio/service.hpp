#pragma once

// HTTP service around orchestration sessions and evaluation runs, with
// file-backed persistence under a data directory.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardio/gateway.hpp"
#include "cardio/grpo.hpp"
#include "cardio/orchestrator.hpp"

namespace httplib {
class Server;
}

namespace cardio::service {

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Replaces ${NAME} with the variable's value. An unset variable is an error
/// unless written ${NAME:-fallback}.
std::string interpolate_env(const std::string& text, const EnvLookup& env);
EnvLookup process_env();

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "var";
  std::uint64_t seed = 42;
  std::optional<std::string> auth_token;
  double mirage_threshold = 0.85;
  std::string routing_table;     // empty: no routing rules (broadcast only)
  std::string polarity_lexicon;  // empty: built-in lexicon
  std::string failure_keywords;
  std::string templates;
  std::string records;
  std::map<Modality, gateway::BackendSpec> backends;
  std::optional<gateway::BackendSpec> decomposer;
  grpo::GrpoConfig grpo;

  /// Every modality named by the routing table must have a backend.
  void validate(const orchestrator::RoutingTable& routing) const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// YAML text; relative paths resolve against `base_dir`.
ServiceConfig parse_config(const std::string& yaml_text, const std::string& base_dir, const EnvLookup& env);
ServiceConfig load_config(const std::string& path, const EnvLookup& env = process_env());

enum class RunKind { ChatSession, Eval };
enum class RunStatus { Running, Done, Failed };

std::string_view to_string(RunKind k);
std::string_view to_string(RunStatus s);

struct RunRecord {
  std::string id;
  std::string created_at;  // UTC, ISO 8601
  RunKind kind = RunKind::Eval;
  RunStatus status = RunStatus::Running;
  std::map<std::string, std::string> artifacts;
  std::optional<std::string> error;

  /// Forward-only: running -> done | failed. Throws std::logic_error otherwise.
  void transition(RunStatus next);
};

void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

std::string utc_now_iso8601();

/// JSON files under <data_dir>/sessions and <data_dir>/runs, written atomically.
class Store {
 public:
  explicit Store(std::string data_dir);

  void save(const orchestrator::Session& s) const;
  void save(const RunRecord& r) const;
  std::vector<orchestrator::Session> load_sessions() const;
  std::vector<RunRecord> load_runs() const;
  std::string run_dir(const std::string& run_id) const;
  const std::string& data_dir() const { return dir_; }

 private:
  std::string dir_;
};

struct EvalRequest {
  std::string bench;
  std::vector<std::string> runs;
  std::vector<std::string> absent_runs;
  std::optional<std::string> likert;  // JSON {model: {item_id: {value, explanation}}}
  bool bclean = false;

  static EvalRequest from_json(const nlohmann::json& j);
};

/// Runs an evaluation and writes the report into `out_dir`.
void run_eval(const EvalRequest& req, const std::string& out_dir, const std::string& keywords_path,
              std::uint64_t seed);

class Service {
 public:
  /// Backends may be injected (tests); otherwise built from the config.
  explicit Service(ServiceConfig config, std::optional<orchestrator::BackendMap> backends = std::nullopt);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Installs every route on `server`.
  void mount(httplib::Server& server);

  /// Binds and serves until stop(). Returns false when the bind fails.
  bool listen();
  /// Binds to an ephemeral port on config host and serves on a thread.
  int listen_background();
  /// Waits for in-flight turns and eval runs, persists state, stops serving.
  void stop();

  orchestrator::SessionManager& sessions() { return *sessions_; }
  const ServiceConfig& config() const { return config_; }

 private:
  struct TurnLog;
  std::shared_ptr<TurnLog> turn_log(const std::string& session, std::size_t turn, bool create);
  void start_eval(const std::string& run_id, EvalRequest req);
  void save_run(const RunRecord& r);
  std::optional<RunRecord> find_run(const std::string& id);
  std::string next_run_id();

  ServiceConfig config_;
  Store store_;
  std::shared_ptr<orchestrator::Orchestrator> orchestrator_;
  std::unique_ptr<orchestrator::SessionManager> sessions_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;

  std::mutex mutex_;
  std::condition_variable idle_;
  std::size_t in_flight_ = 0;
  bool stopping_ = false;
  std::map<std::string, RunRecord> runs_;
  std::map<std::string, std::string> session_runs_;  // session id -> run id
  std::uint64_t run_counter_ = 0;
  std::vector<std::thread> workers_;
  std::map<std::pair<std::string, std::size_t>, std::shared_ptr<TurnLog>> logs_;
};

}  // namespace cardio::service
