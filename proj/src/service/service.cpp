#include "cardio/service.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cardio/eval.hpp"

namespace cardio::service {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(RunKind k) { return k == RunKind::ChatSession ? "chat-session" : "eval"; }

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Running: return "running";
    case RunStatus::Done: return "done";
    case RunStatus::Failed: return "failed";
  }
  return "failed";
}

void RunRecord::transition(RunStatus next) {
  if (status != RunStatus::Running || next == RunStatus::Running) {
    throw std::logic_error(fmt::format("run {}: illegal status change {} -> {}", id, to_string(status), to_string(next)));
  }
  status = next;
}

void to_json(json& j, const RunRecord& r) {
  j = json{{"id", r.id},
           {"created_at", r.created_at},
           {"kind", to_string(r.kind)},
           {"status", to_string(r.status)},
           {"artifacts", r.artifacts},
           {"error", r.error ? json(*r.error) : json(nullptr)}};
}

void from_json(const json& j, RunRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.created_at = j.at("created_at").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "chat-session") {
    r.kind = RunKind::ChatSession;
  } else if (kind == "eval") {
    r.kind = RunKind::Eval;
  } else {
    throw std::invalid_argument(fmt::format("unknown run kind '{}'", kind));
  }
  const auto status = j.at("status").get<std::string>();
  if (status == "running") {
    r.status = RunStatus::Running;
  } else if (status == "done") {
    r.status = RunStatus::Done;
  } else if (status == "failed") {
    r.status = RunStatus::Failed;
  } else {
    throw std::invalid_argument(fmt::format("unknown run status '{}'", status));
  }
  r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
  if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
}

std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---- Store ----

Store::Store(std::string data_dir) : dir_(std::move(data_dir)) {
  fs::create_directories(fs::path(dir_) / "sessions");
  fs::create_directories(fs::path(dir_) / "runs");
}

void Store::save(const orchestrator::Session& s) const {
  write_file_atomic((fs::path(dir_) / "sessions" / (s.id + ".json")).string(), json(s).dump(2) + "\n");
}

void Store::save(const RunRecord& r) const {
  fs::create_directories(run_dir(r.id));
  write_file_atomic((fs::path(run_dir(r.id)) / "run.json").string(), json(r).dump(2) + "\n");
}

std::string Store::run_dir(const std::string& run_id) const { return (fs::path(dir_) / "runs" / run_id).string(); }

std::vector<orchestrator::Session> Store::load_sessions() const {
  std::vector<orchestrator::Session> out;
  for (const auto& e : fs::directory_iterator(fs::path(dir_) / "sessions")) {
    if (e.path().extension() != ".json") continue;
    try {
      out.push_back(json::parse(read_file(e.path().string())).get<orchestrator::Session>());
    } catch (const std::exception& ex) {
      spdlog::warn("skipping unreadable session file {}: {}", e.path().string(), ex.what());
    }
  }
  return out;
}

std::vector<RunRecord> Store::load_runs() const {
  std::vector<RunRecord> out;
  for (const auto& e : fs::directory_iterator(fs::path(dir_) / "runs")) {
    const auto file = e.path() / "run.json";
    if (!fs::exists(file)) continue;
    try {
      out.push_back(json::parse(read_file(file.string())).get<RunRecord>());
    } catch (const std::exception& ex) {
      spdlog::warn("skipping unreadable run record {}: {}", file.string(), ex.what());
    }
  }
  return out;
}

// ---- evaluation ----

EvalRequest EvalRequest::from_json(const json& j) {
  EvalRequest r;
  r.bench = j.at("bench").get<std::string>();
  r.runs = j.at("runs").get<std::vector<std::string>>();
  r.absent_runs = j.value("absent_runs", std::vector<std::string>{});
  if (j.contains("likert") && !j["likert"].is_null()) r.likert = j["likert"].get<std::string>();
  r.bclean = j.value("bclean", false);
  if (r.runs.empty()) throw std::invalid_argument("eval request needs at least one run file");
  if (r.bclean && r.absent_runs.empty()) throw std::invalid_argument("bclean needs image-absent run files");
  return r;
}

void run_eval(const EvalRequest& req, const std::string& out_dir, const std::string& keywords_path,
              std::uint64_t seed) {
  eval::EvalInputs in;
  in.bench = read_benchmark(req.bench);
  for (const auto& p : req.runs) in.runs.push_back(eval::read_run(p));
  for (const auto& p : req.absent_runs) in.absent_runs.push_back(eval::read_run(p));
  if (req.likert) {
    const auto j = json::parse(read_file(*req.likert));
    for (const auto& [model, items] : j.items()) {
      for (const auto& [item_id, score] : items.items()) in.likert[model][item_id] = score.get<LikertScore>();
    }
  }
  in.apply_bclean = req.bclean;
  in.seed = seed;
  const auto report = eval::build_report(in, eval::FailureKeywords::load(keywords_path));
  eval::write_report(out_dir, report);
}

// ---- Service ----

struct Service::TurnLog {
  std::mutex mutex;
  std::condition_variable cv;
  std::vector<json> events;
  bool done = false;
  json result;
  std::optional<std::string> error;

  void push(json e) {
    {
      std::lock_guard lock(mutex);
      events.push_back(std::move(e));
    }
    cv.notify_all();
  }
  void finish(json r, std::optional<std::string> err) {
    {
      std::lock_guard lock(mutex);
      result = std::move(r);
      error = std::move(err);
      done = true;
    }
    cv.notify_all();
  }
};

namespace {

orchestrator::BackendMap build_backends(const ServiceConfig& cfg) {
  orchestrator::BackendMap out;
  for (const auto& [m, spec] : cfg.backends) out[m] = gateway::make_backend(spec);
  return out;
}

std::string keywords_path(const ServiceConfig& cfg) {
#ifdef CARDIO_DATA_DIR
  if (cfg.failure_keywords.empty()) return std::string(CARDIO_DATA_DIR) + "/failure_keywords.json";
#endif
  return cfg.failure_keywords;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view message) {
  send_json(res, status, json{{"error", message}, {"status", status}});
}

std::string sse_frame(std::string_view event, const json& data, std::optional<std::uint64_t> id = std::nullopt) {
  std::string out;
  if (id) out += fmt::format("id: {}\n", *id);
  out += fmt::format("event: {}\ndata: {}\n\n", event, data.dump());
  return out;
}

}  // namespace

Service::Service(ServiceConfig config, std::optional<orchestrator::BackendMap> backends)
    : config_(std::move(config)), store_(config_.data_dir) {
  auto routing = config_.routing_table.empty() ? orchestrator::RoutingTable{}
                                               : orchestrator::RoutingTable::load(config_.routing_table);
  auto lexicon = config_.polarity_lexicon.empty() ? orchestrator::PolarityLexicon::builtin()
                                                  : orchestrator::PolarityLexicon::load(config_.polarity_lexicon);
  auto backend_map = backends ? std::move(*backends) : build_backends(config_);
  if (!backends) config_.validate(routing);

  orchestrator::OrchestratorConfig oc;
  oc.mirage.threshold = config_.mirage_threshold;
  if (config_.decomposer) {
    oc.remote_decomposer = true;
    oc.decomposer = gateway::make_backend(*config_.decomposer);
  }
  orchestrator_ = std::make_shared<orchestrator::Orchestrator>(oc, std::move(routing), std::move(lexicon));
  sessions_ = std::make_unique<orchestrator::SessionManager>(orchestrator_, std::move(backend_map));

  for (auto& s : store_.load_sessions()) sessions_->restore(std::move(s));
  for (auto& r : store_.load_runs()) {
    if (r.id.rfind("run-", 0) == 0) {
      try {
        run_counter_ = std::max<std::uint64_t>(run_counter_, std::stoull(r.id.substr(4)));
      } catch (const std::exception&) {
      }
    }
    if (r.kind == RunKind::Eval && r.status == RunStatus::Running) {
      r.transition(RunStatus::Failed);
      r.error = "interrupted by a service restart";
      store_.save(r);
    }
    if (r.kind == RunKind::ChatSession && r.artifacts.count("session_id")) {
      session_runs_[r.artifacts.at("session_id")] = r.id;
    }
    runs_[r.id] = r;
  }
  spdlog::info("service state: {} sessions, {} runs restored from {}", sessions_->ids().size(), runs_.size(),
               config_.data_dir);
}

Service::~Service() {
  try {
    stop();
  } catch (const std::exception& e) {
    spdlog::error("shutdown: {}", e.what());
  }
}

std::string Service::next_run_id() { return fmt::format("run-{}", ++run_counter_); }

void Service::save_run(const RunRecord& r) {
  runs_[r.id] = r;
  store_.save(r);
}

std::optional<RunRecord> Service::find_run(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto it = runs_.find(id);
  if (it == runs_.end()) return std::nullopt;
  return it->second;
}

std::shared_ptr<Service::TurnLog> Service::turn_log(const std::string& session, std::size_t turn, bool create) {
  std::lock_guard lock(mutex_);
  const auto key = std::make_pair(session, turn);
  auto it = logs_.find(key);
  if (it != logs_.end()) return it->second;
  if (!create) return nullptr;
  auto log = std::make_shared<TurnLog>();
  logs_.emplace(key, log);
  return log;
}

void Service::start_eval(const std::string& run_id, EvalRequest req) {
  const auto out_dir = (fs::path(store_.run_dir(run_id)) / "report").string();
  workers_.emplace_back([this, run_id, req = std::move(req), out_dir]() {
    std::optional<std::string> error;
    try {
      run_eval(req, out_dir, keywords_path(config_), config_.seed);
    } catch (const std::exception& e) {
      error = e.what();
      spdlog::warn("eval {} failed: {}", run_id, e.what());
    }
    {
      std::lock_guard lock(mutex_);
      auto r = runs_.at(run_id);
      r.transition(error ? RunStatus::Failed : RunStatus::Done);
      r.error = error;
      if (!error) r.artifacts["report"] = (fs::path(out_dir) / "report.json").string();
      save_run(r);
      --in_flight_;
    }
    idle_.notify_all();
  });
}

void Service::mount(httplib::Server& svr) {
  svr.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (!config_.auth_token || req.path == "/healthz") return httplib::Server::HandlerResponse::Unhandled;
    if (req.get_header_value("Authorization") != "Bearer " + *config_.auth_token) {
      send_error(res, 401, "missing or invalid bearer token");
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });
  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "unknown error");
    }
  });

  svr.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json{{"status", "ok"}});
  });

  svr.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    std::string hint;
    if (!req.body.empty()) {
      try {
        hint = json::parse(req.body).value("id", std::string{});
      } catch (const json::exception& e) {
        return send_error(res, 400, fmt::format("invalid JSON body: {}", e.what()));
      }
    }
    const auto id = sessions_->create(hint);
    const auto session = sessions_->get(id);
    std::string run_id;
    {
      std::lock_guard lock(mutex_);
      RunRecord r{next_run_id(), utc_now_iso8601(), RunKind::ChatSession, RunStatus::Running, {}, std::nullopt};
      r.artifacts["session_id"] = id;
      r.artifacts["session"] = (fs::path(store_.data_dir()) / "sessions" / (id + ".json")).string();
      session_runs_[id] = r.id;
      run_id = r.id;
      save_run(r);
    }
    store_.save(session);
    json body = session;
    body["run_id"] = run_id;
    send_json(res, 201, body);
  });

  svr.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      send_json(res, 200, json(sessions_->get(req.matches[1])));
    } catch (const orchestrator::UnknownSession& e) {
      send_error(res, 404, e.what());
    }
  });

  svr.Post(R"(/sessions/([^/]+)/media)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    MediaRef ref;
    try {
      ref = json::parse(req.body).get<MediaRef>();
    } catch (const std::exception& e) {
      return send_error(res, 400, fmt::format("invalid media reference: {}", e.what()));
    }
    try {
      sessions_->attach_media(id, ref);
    } catch (const orchestrator::UnknownSession& e) {
      return send_error(res, 404, e.what());
    } catch (const orchestrator::MediaLocked& e) {
      return send_error(res, 409, e.what());
    } catch (const std::invalid_argument& e) {
      return send_error(res, 400, e.what());
    }
    const auto session = sessions_->get(id);
    store_.save(session);
    send_json(res, 200, json(session));
  });

  svr.Post(R"(/sessions/([^/]+)/turns)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    std::string text;
    std::optional<Modality> focus;
    try {
      const auto body = json::parse(req.body);
      text = body.at("text").get<std::string>();
      if (body.contains("focus") && !body["focus"].is_null()) focus = modality_from_string(body["focus"].get<std::string>());
    } catch (const std::exception& e) {
      return send_error(res, 400, fmt::format("turn body must be {{\"text\": ...[, \"focus\": modality]}}: {}", e.what()));
    }
    if (text.empty()) return send_error(res, 400, "turn text is empty");
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return send_error(res, 503, "service is shutting down");
      ++in_flight_;
    }
    struct Done {
      Service* self;
      ~Done() {
        {
          std::lock_guard lock(self->mutex_);
          --self->in_flight_;
        }
        self->idle_.notify_all();
      }
    } done{this};

    std::size_t n = 0;
    try {
      n = sessions_->next_turn_index(id);
    } catch (const orchestrator::UnknownSession& e) {
      return send_error(res, 404, e.what());
    }
    auto log = turn_log(id, n, true);
    try {
      auto result = sessions_->chat_turn(id, text, [&](const orchestrator::TraceEvent& e) { log->push(json(e)); }, focus);
      json body = result;
      body["turn"] = n;
      log->finish(body, std::nullopt);
      store_.save(sessions_->get(id));
      send_json(res, 200, body);
    } catch (const orchestrator::SessionBusy& e) {
      send_error(res, 409, e.what());
    } catch (const orchestrator::UnknownSession& e) {
      send_error(res, 404, e.what());
    } catch (const std::exception& e) {
      // The turn did not happen; its index stays free for the next attempt.
      log->finish(nullptr, std::string(e.what()));
      {
        std::lock_guard lock(mutex_);
        logs_.erase({id, n});
      }
      send_error(res, dynamic_cast<const orchestrator::OrchestrationError*>(&e) ? 422 : 500, e.what());
    }
  });

  svr.Get(R"(/sessions/([^/]+)/turns/(\d+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto n = static_cast<std::size_t>(std::stoull(req.matches[2]));
    orchestrator::Session session;
    try {
      session = sessions_->get(id);
    } catch (const orchestrator::UnknownSession& e) {
      return send_error(res, 404, e.what());
    }
    res.set_header("Cache-Control", "no-cache");
    if (n < session.history.size()) {
      // Completed turn: replay the canonical trace.
      std::string body;
      const auto& turn = session.history[n];
      for (const auto& e : turn.result.trace) body += sse_frame("trace", json(e), e.seq);
      json result = turn.result;
      result["turn"] = n;
      body += sse_frame("result", result);
      body += sse_frame("done", json::object());
      res.set_content(body, "text/event-stream");
      return;
    }
    if (n > session.history.size()) return send_error(res, 404, fmt::format("turn {} has not been requested", n));
    auto log = turn_log(id, n, true);
    auto cursor = std::make_shared<std::size_t>(0);
    res.set_chunked_content_provider("text/event-stream", [log, cursor](std::size_t, httplib::DataSink& sink) {
      std::unique_lock lock(log->mutex);
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::minutes(10);
      while (*cursor == log->events.size() && !log->done) {
        if (log->cv.wait_for(lock, std::chrono::seconds(15)) == std::cv_status::timeout) {
          if (std::chrono::steady_clock::now() > deadline) {
            const auto f = sse_frame("error", json{{"error", "timed out waiting for the turn"}});
            sink.write(f.data(), f.size());
            sink.done();
            return true;
          }
          static constexpr std::string_view keepalive = ": keepalive\n\n";
          if (!sink.write(keepalive.data(), keepalive.size())) return false;
        }
      }
      std::string out;
      for (; *cursor < log->events.size(); ++*cursor) {
        const auto& e = log->events[*cursor];
        out += sse_frame("trace", e, e.value("seq", std::uint64_t{0}));
      }
      if (log->done) {
        if (log->error) {
          out += sse_frame("error", json{{"error", *log->error}});
        } else {
          out += sse_frame("result", log->result);
        }
        out += sse_frame("done", json::object());
      }
      if (!out.empty() && !sink.write(out.data(), out.size())) return false;
      if (log->done) sink.done();
      return true;
    });
  });

  svr.Post("/eval", [this](const httplib::Request& req, httplib::Response& res) {
    EvalRequest er;
    try {
      er = EvalRequest::from_json(json::parse(req.body));
    } catch (const std::exception& e) {
      return send_error(res, 400, fmt::format("invalid eval request: {}", e.what()));
    }
    RunRecord r;
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return send_error(res, 503, "service is shutting down");
      r = RunRecord{next_run_id(), utc_now_iso8601(), RunKind::Eval, RunStatus::Running, {}, std::nullopt};
      r.artifacts["dir"] = store_.run_dir(r.id);
      save_run(r);
      ++in_flight_;
      start_eval(r.id, std::move(er));
    }
    send_json(res, 202, json(r));
  });

  svr.Get(R"(/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto r = find_run(req.matches[1]);
    if (!r) return send_error(res, 404, fmt::format("unknown run '{}'", std::string(req.matches[1])));
    send_json(res, 200, json(*r));
  });

  svr.Get(R"(/runs/([^/]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
    auto r = find_run(req.matches[1]);
    if (!r) return send_error(res, 404, fmt::format("unknown run '{}'", std::string(req.matches[1])));
    if (r->kind != RunKind::Eval) return send_error(res, 404, "chat-session runs have no report");
    if (r->status != RunStatus::Done) {
      return send_json(res, 409, json{{"error", r->error.value_or("run is still running")},
                                      {"status", 409},
                                      {"run_status", to_string(r->status)}});
    }
    try {
      res.status = 200;
      res.set_content(read_file(r->artifacts.at("report")), "application/json");
    } catch (const std::exception& e) {
      send_error(res, 500, fmt::format("report unavailable: {}", e.what()));
    }
  });
}

bool Service::listen() {
  server_ = std::make_unique<httplib::Server>();
  mount(*server_);
  spdlog::info("listening on {}:{}", config_.host, config_.port);
  return server_->listen(config_.host, config_.port);
}

int Service::listen_background() {
  server_ = std::make_unique<httplib::Server>();
  mount(*server_);
  const int port = server_->bind_to_any_port(config_.host);
  if (port < 0) throw std::runtime_error(fmt::format("cannot bind {}", config_.host));
  server_thread_ = std::thread([this]() { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  std::vector<std::thread> workers;
  {
    std::unique_lock lock(mutex_);
    if (stopping_ && !server_) return;
    stopping_ = true;
    idle_.wait(lock, [&] { return in_flight_ == 0; });
    workers.swap(workers_);
    for (auto& [id, r] : runs_) {
      if (r.kind == RunKind::ChatSession && r.status == RunStatus::Running) {
        r.transition(RunStatus::Done);
        store_.save(r);
      }
    }
  }
  for (auto& w : workers) w.join();
  for (const auto& id : sessions_->ids()) store_.save(sessions_->get(id));
  {
    std::lock_guard lock(mutex_);
    for (auto& [_, log] : logs_) {
      bool pending = false;
      {
        std::lock_guard l(log->mutex);
        pending = !log->done;
      }
      if (pending) log->finish(nullptr, std::string("service stopped"));
    }
  }
  if (server_) {
    server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
    server_.reset();
  }
}

}  // namespace cardio::service
